# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Compiled kd-tree kernels.

All kernels run with ``nogil=True`` so that concurrent ingestion and query tasks scale
across threads. Records are addressed by *handles*: row indices into a (count, dims)
C-contiguous int64 matrix of order keys. Trees are iterative (explicit stacks), since
kd-trees built from skewed data may be deep.
"""

import numpy as np
from numba import njit

NIL = -1
INT64_MAX = 9223372036854775807


@njit(nogil=True, cache=True)
def partition_slice(handles, keys, dim, lo, hi, pivot_pos):
    """Reorder ``handles[lo:hi]`` around the pivot at ``pivot_pos`` on ``dim``.

    Returns the pivot's final position ``split``: values in ``[lo, split)`` are <= the
    pivot value, values in ``(split, hi)`` are greater.
    """
    last = hi - 1
    tmp = handles[pivot_pos]
    handles[pivot_pos] = handles[last]
    handles[last] = tmp
    pivot_value = keys[handles[last], dim]
    store = lo
    for i in range(lo, last):
        if keys[handles[i], dim] <= pivot_value:
            tmp = handles[i]
            handles[i] = handles[store]
            handles[store] = tmp
            store += 1
    tmp = handles[store]
    handles[store] = handles[last]
    handles[last] = tmp
    return store


@njit(nogil=True, cache=True)
def median_position(handles, keys, dim, lo, hi, samples, uniforms, cursor, scratch):
    """Position in ``[lo, hi)`` of the median of sampled records on ``dim``.

    Slices no larger than ``samples`` use all of their records; larger slices draw
    ``samples`` positions with replacement from ``uniforms[cursor:]``.
    Returns ``(position, next_cursor)``.
    """
    size = hi - lo
    if size <= samples:
        m = size
        for i in range(m):
            scratch[i] = lo + i
    else:
        m = samples
        for i in range(m):
            if cursor < uniforms.shape[0]:
                u = uniforms[cursor]
            else:
                u = 0.5
            cursor += 1
            p = lo + int(u * size)
            if p >= hi:
                p = hi - 1
            scratch[i] = p
    # insertion sort of the sampled positions by value
    for i in range(1, m):
        p = scratch[i]
        v = keys[handles[p], dim]
        j = i - 1
        while j >= 0 and keys[handles[scratch[j]], dim] > v:
            scratch[j + 1] = scratch[j]
            j -= 1
        scratch[j + 1] = p
    return scratch[(m - 1) // 2], cursor


@njit(nogil=True, cache=True)
def bulkload_kernel(
    handles,
    keys,
    root_dim,
    full_recursive,
    samples,
    uniforms,
    node_ids,
    record_ref,
    left,
    right,
    parent,
    count,
):
    """Build a kd-tree over ``handles`` into pool nodes ``node_ids`` (pre-order).

    With ``full_recursive`` every level pivots on a sampled median; otherwise only the
    root does and deeper levels pivot on the middle element of their slice.
    Returns the root node id, or NIL for an empty slice.
    """
    n = handles.shape[0]
    if n == 0:
        return NIL
    dims = keys.shape[1]
    scratch = np.empty(max(samples, 1), dtype=np.int64)
    st_lo = np.empty(n, dtype=np.int64)
    st_hi = np.empty(n, dtype=np.int64)
    st_depth = np.empty(n, dtype=np.int64)
    st_parent = np.empty(n, dtype=np.int64)
    st_side = np.empty(n, dtype=np.int64)
    st_lo[0] = 0
    st_hi[0] = n
    st_depth[0] = 0
    st_parent[0] = NIL
    st_side[0] = 0
    top = 1
    next_node = 0
    cursor = 0
    root = NIL
    while top > 0:
        top -= 1
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        par = st_parent[top]
        side = st_side[top]
        dim = (root_dim + depth) % dims
        if full_recursive or depth == 0:
            pivot_pos, cursor = median_position(
                handles, keys, dim, lo, hi, samples, uniforms, cursor, scratch
            )
        else:
            pivot_pos = lo + (hi - lo) // 2
        split = partition_slice(handles, keys, dim, lo, hi, pivot_pos)
        node = node_ids[next_node]
        next_node += 1
        record_ref[node] = handles[split]
        left[node] = NIL
        right[node] = NIL
        parent[node] = par
        count[node] = hi - lo
        if par == NIL:
            root = node
        elif side == 0:
            left[par] = node
        else:
            right[par] = node
        if split + 1 < hi:
            st_lo[top] = split + 1
            st_hi[top] = hi
            st_depth[top] = depth + 1
            st_parent[top] = node
            st_side[top] = 1
            top += 1
        if lo < split:
            st_lo[top] = lo
            st_hi[top] = split
            st_depth[top] = depth + 1
            st_parent[top] = node
            st_side[top] = 0
            top += 1
    return root


@njit(nogil=True, cache=True)
def pack_kernel(root, size, record_ref, left, right):
    """Pre-order packing of the pool subtree at ``root``.

    Returns ``(handles, packed_left, packed_right, packed)`` where ``handles[i]`` is the
    record of packed node ``i``, children are packed positions (NIL for none) and
    ``packed`` is the number of nodes reached.
    """
    handles = np.empty(size, dtype=np.int64)
    p_left = np.full(size, NIL, dtype=np.int64)
    p_right = np.full(size, NIL, dtype=np.int64)
    if size == 0 or root == NIL:
        return handles, p_left, p_right, 0
    st_node = np.empty(size, dtype=np.int64)
    st_ppos = np.empty(size, dtype=np.int64)
    st_side = np.empty(size, dtype=np.int64)
    st_node[0] = root
    st_ppos[0] = NIL
    st_side[0] = 0
    top = 1
    pos = 0
    while top > 0:
        if pos >= size:
            return handles, p_left, p_right, size + 1
        top -= 1
        node = st_node[top]
        ppos = st_ppos[top]
        handles[pos] = record_ref[node]
        if ppos != NIL:
            if st_side[top] == 0:
                p_left[ppos] = pos
            else:
                p_right[ppos] = pos
        if right[node] != NIL and top < size:
            st_node[top] = right[node]
            st_ppos[top] = pos
            st_side[top] = 1
            top += 1
        if left[node] != NIL and top < size:
            st_node[top] = left[node]
            st_ppos[top] = pos
            st_side[top] = 0
            top += 1
        pos += 1
    return handles, p_left, p_right, pos


@njit(nogil=True, cache=True)
def count_reachable(p_left, p_right):
    """Number of packed nodes reachable from node 0, or -1 when a child index is out of
    range or reached twice (shared child or cycle)."""
    n = p_left.shape[0]
    if n == 0:
        return 0
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    stack[0] = 0
    seen[0] = True
    top = 1
    reached = 1
    while top > 0:
        top -= 1
        node = stack[top]
        for side in range(2):
            if side == 0:
                child = p_left[node]
            else:
                child = p_right[node]
            if child == NIL:
                continue
            if child < 0 or child >= n or seen[child]:
                return -1
            seen[child] = True
            reached += 1
            stack[top] = child
            top += 1
    return reached


@njit(nogil=True, cache=True)
def packed_range_search(keys, rec_index, p_left, p_right, initial_dim, lo, hi):
    """Records of a packed kd-tree whose keys lie in the closed box ``[lo, hi]``.

    ``keys`` holds the order keys of the records section and ``rec_index[i]`` the record
    of packed node ``i``. Returns ``(matches, visited)``; ``visited`` is -1 when the
    node array is not a tree.
    """
    n = rec_index.shape[0]
    dims = keys.shape[1]
    out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out[:0], 0
    st_node = np.empty(n, dtype=np.int64)
    st_depth = np.empty(n, dtype=np.int64)
    st_node[0] = 0
    st_depth[0] = 0
    top = 1
    found = 0
    visited = 0
    while top > 0:
        top -= 1
        node = st_node[top]
        depth = st_depth[top]
        visited += 1
        if visited > n:
            return out[:0], -1
        rec = rec_index[node]
        inside = True
        for d in range(dims):
            v = keys[rec, d]
            if v < lo[d] or v > hi[d]:
                inside = False
                break
        if inside:
            out[found] = rec
            found += 1
        d = (initial_dim + depth) % dims
        v = keys[rec, d]
        r = p_right[node]
        l_child = p_left[node]
        if r != NIL and hi[d] > v:
            if top >= n:
                return out[:0], -1
            st_node[top] = r
            st_depth[top] = depth + 1
            top += 1
        if l_child != NIL and lo[d] <= v:
            if top >= n:
                return out[:0], -1
            st_node[top] = l_child
            st_depth[top] = depth + 1
            top += 1
    return out[:found], visited


@njit(nogil=True, cache=True)
def check_packed_order(keys, rec_index, p_left, p_right, initial_dim):
    """First packed node violating the kd ordering (left <= node < right on the level
    dimension, inherited from every ancestor), or -1 when the tree is ordered."""
    n = rec_index.shape[0]
    if n == 0:
        return -1
    dims = keys.shape[1]
    st_node = np.empty(n, dtype=np.int64)
    st_depth = np.empty(n, dtype=np.int64)
    # inclusive upper bounds and exclusive lower bounds per stack slot
    st_hi = np.empty((n, dims), dtype=np.int64)
    st_lo = np.empty((n, dims), dtype=np.int64)
    st_has_lo = np.zeros((n, dims), dtype=np.bool_)
    cur_hi = np.empty(dims, dtype=np.int64)
    cur_lo = np.empty(dims, dtype=np.int64)
    cur_has_lo = np.zeros(dims, dtype=np.bool_)
    for d in range(dims):
        st_hi[0, d] = INT64_MAX
        st_lo[0, d] = 0
    st_node[0] = 0
    st_depth[0] = 0
    top = 1
    visited = 0
    while top > 0:
        top -= 1
        visited += 1
        if visited > n:
            return 0
        node = st_node[top]
        depth = st_depth[top]
        for d in range(dims):
            cur_hi[d] = st_hi[top, d]
            cur_lo[d] = st_lo[top, d]
            cur_has_lo[d] = st_has_lo[top, d]
        rec = rec_index[node]
        for d in range(dims):
            v = keys[rec, d]
            if v > cur_hi[d] or (cur_has_lo[d] and v <= cur_lo[d]):
                return node
        bd = (initial_dim + depth) % dims
        split = keys[rec, bd]
        for side in range(2):
            if side == 0:
                child = p_left[node]
            else:
                child = p_right[node]
            if child == NIL:
                continue
            if top >= n:
                return node
            for d in range(dims):
                st_hi[top, d] = cur_hi[d]
                st_lo[top, d] = cur_lo[d]
                st_has_lo[top, d] = cur_has_lo[d]
            if side == 0:
                if split < st_hi[top, bd]:
                    st_hi[top, bd] = split
            else:
                if not st_has_lo[top, bd] or split > st_lo[top, bd]:
                    st_lo[top, bd] = split
                    st_has_lo[top, bd] = True
            st_node[top] = child
            st_depth[top] = depth + 1
            top += 1
    return -1
