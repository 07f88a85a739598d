# cython: boundscheck=False, wraparound=False, initializedcheck=False
# Compiled twins of _pykernels; see that module for the contracts.

from libc.stdlib cimport free, malloc

IMPLEMENTATION = "compiled"


def innermost_enclosing(
    const unsigned char[::1] ev_kind,
    const long long[::1] ev_group,
    const long long[::1] ev_time,
    const long long[::1] ev_index,
    const long long[::1] cb_end,
    long long[::1] out,
):
    cdef Py_ssize_t n = ev_kind.shape[0]
    cdef Py_ssize_t i, sp = 0
    cdef long long g, t, current_group = -1
    cdef long long* stack = <long long*> malloc(n * sizeof(long long)) if n else NULL
    if n and stack is NULL:
        raise MemoryError()
    try:
        for i in range(n):
            g = ev_group[i]
            if g != current_group:
                current_group = g
                sp = 0
            if ev_kind[i] == 0:
                stack[sp] = ev_index[i]
                sp += 1
            else:
                t = ev_time[i]
                while sp > 0 and cb_end[stack[sp - 1]] < t:
                    sp -= 1
                out[ev_index[i]] = stack[sp - 1] if sp > 0 else -1
    finally:
        free(stack)


def reachable_mask(
    const long long[::1] indptr,
    const long long[::1] indices,
    long long root,
    unsigned char[::1] out,
):
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t sp = 0
    cdef long long u, v, k
    cdef long long* stack = <long long*> malloc(n * sizeof(long long)) if n else NULL
    if n and stack is NULL:
        raise MemoryError()
    try:
        stack[sp] = root
        sp += 1
        out[root] = 1
        while sp > 0:
            sp -= 1
            u = stack[sp]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if out[v] == 0:
                    out[v] = 1
                    stack[sp] = v
                    sp += 1
    finally:
        free(stack)
