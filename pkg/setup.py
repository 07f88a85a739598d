"""Build hook for the optional compiled kernels.

The package is pure Python plus one Cython extension holding the hot
loops (interval attribution, graph reachability).  When Cython or a C
compiler is unavailable the extension is skipped and the package falls
back to the pure-Python kernels at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "msgflow._kernels._ckernels",
                ["src/msgflow/_kernels/_ckernels.pyx"],
                extra_compile_args=["-O2"],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
