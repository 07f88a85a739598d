"""Pure-Python kernels.

Same contracts as the compiled twins in ``_ckernels.pyx``; used when the
extension is not built or when MSGFLOW_PURE is set.  Inputs are numpy
arrays but the loops run over plain Python lists, which is faster than
indexing into arrays element by element.
"""

from __future__ import annotations

import numpy as np

IMPLEMENTATION = "pure"


def innermost_enclosing(ev_kind, ev_group, ev_time, ev_index, cb_end, out):
    """Attribute each publish to the innermost callback running on its thread.

    Events are callback starts (kind 0) and publishes (kind 1), pre-sorted
    by (group, time, kind, original order) where group identifies a thread.
    ``ev_index`` holds the callback row for starts and the output row for
    publishes.  ``cb_end[row]`` is the callback end time (INT64_MAX when the
    end was never observed).  ``out[pub_row]`` receives the enclosing
    callback row or -1.

    A callback encloses a publish when start <= t <= end; the latest-started
    enclosing callback wins.  Because starts arrive in time order, a stack
    of live callbacks per group keeps the winner on top; entries whose end
    precedes the current publish can never match again and are popped.
    """
    kinds = ev_kind.tolist()
    groups = ev_group.tolist()
    times = ev_time.tolist()
    indexes = ev_index.tolist()
    ends = cb_end.tolist()
    result = out.tolist()

    stack: list[int] = []
    current_group = -1
    for i in range(len(kinds)):
        g = groups[i]
        if g != current_group:
            current_group = g
            stack.clear()
        if kinds[i] == 0:
            stack.append(indexes[i])
        else:
            t = times[i]
            while stack and ends[stack[-1]] < t:
                stack.pop()
            result[indexes[i]] = stack[-1] if stack else -1
    out[:] = np.asarray(result, dtype=np.int64)


def reachable_mask(indptr, indices, root, out):
    """Mark every node reachable from ``root`` in a CSR adjacency. Sets out[i]=1."""
    ptr = indptr.tolist()
    nbr = indices.tolist()
    seen = out.tolist()
    stack = [root]
    seen[root] = 1
    while stack:
        u = stack.pop()
        for k in range(ptr[u], ptr[u + 1]):
            v = nbr[k]
            if not seen[v]:
                seen[v] = 1
                stack.append(v)
    out[:] = np.asarray(seen, dtype=np.uint8)
