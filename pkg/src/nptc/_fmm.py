"""Compiled inner loop of the fast marching solver.

The front propagation is inherently sequential (a priority queue of trial
voxels), so the hot loop is JIT-compiled. The heap is a manual binary heap
over preallocated arrays with lazy deletion; stale entries are skipped when
their key no longer matches the voxel's current value.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sift_up(keys, rows, pos):
    while pos > 0:
        parent = (pos - 1) // 2
        if keys[pos] < keys[parent]:
            keys[pos], keys[parent] = keys[parent], keys[pos]
            rows[pos], rows[parent] = rows[parent], rows[pos]
            pos = parent
        else:
            break


@njit(cache=True)
def _sift_down(keys, rows, size, pos):
    while True:
        left = 2 * pos + 1
        right = left + 1
        smallest = pos
        if left < size and keys[left] < keys[smallest]:
            smallest = left
        if right < size and keys[right] < keys[smallest]:
            smallest = right
        if smallest == pos:
            break
        keys[pos], keys[smallest] = keys[smallest], keys[pos]
        rows[pos], rows[smallest] = rows[smallest], rows[pos]
        pos = smallest


@njit(cache=True)
def _upwind_update(values, state, nbr, row, h):
    """Solve the local first-order quadratic using accepted axis minima."""
    vals = np.empty(3)
    n = 0
    for axis in range(3):
        best = np.inf
        for side in range(2):
            nb = nbr[row, 2 * axis + side]
            if nb >= 0 and state[nb] == 2 and values[nb] < best:
                best = values[nb]
        if best < np.inf:
            vals[n] = best
            n += 1
    if n == 0:
        return np.inf
    # insertion sort of at most 3 entries
    for i in range(1, n):
        v = vals[i]
        j = i - 1
        while j >= 0 and vals[j] > v:
            vals[j + 1] = vals[j]
            j -= 1
        vals[j + 1] = v
    rho = vals[0] + h
    if n >= 2 and rho > vals[1]:
        s = vals[0] + vals[1]
        disc = 2.0 * h * h - (vals[0] - vals[1]) ** 2
        rho = 0.5 * (s + np.sqrt(disc))
        if n == 3 and rho > vals[2]:
            s += vals[2]
            q = vals[0] ** 2 + vals[1] ** 2 + vals[2] ** 2 - h * h
            disc = s * s - 3.0 * q
            rho = (s + np.sqrt(disc)) / 3.0
    return rho


@njit(cache=True)
def fmm_solve(nbr, seed_rows, seed_working, extra_rows, extra_values, h):
    """March over the active set; returns (values, state, acceptance rank).

    ``nbr`` is the (A, 6) neighbor-row table (-1 where absent). True seeds
    are accepted first (rank order preserved) and their stored value is
    forced to 0 at the end, but their outgoing updates use
    ``seed_working`` - the seed voxel center's true distance from the
    source point - so a center-offset source cannot undercut the
    exact-initialization ball along the lattice axes. ``extra_rows`` carry
    explicit initial values (the exact-init ball); duplicates keep the
    smaller value. state: 0 = unreached, 2 = accepted.
    """
    a = nbr.shape[0]
    values = np.full(a, np.inf)
    state = np.zeros(a, dtype=np.uint8)  # 0 far, 1 trial, 2 accepted
    rank = np.full(a, -1, dtype=np.int64)

    cap = 8 * a + 16 + 2 * (seed_rows.size + extra_rows.size)
    heap_keys = np.empty(cap)
    heap_rows = np.empty(cap, dtype=np.int64)
    size = 0
    for i in range(seed_rows.size):
        s = seed_rows[i]
        values[s] = seed_working[i]
        state[s] = 1
        heap_keys[size] = 0.0  # seeds pop first, in push order
        heap_rows[size] = s
        _sift_up(heap_keys, heap_rows, size)
        size += 1
    for i in range(extra_rows.size):
        s = extra_rows[i]
        if extra_values[i] < values[s]:
            values[s] = extra_values[i]
            state[s] = 1
            heap_keys[size] = extra_values[i]
            heap_rows[size] = s
            _sift_up(heap_keys, heap_rows, size)
            size += 1

    accepted = 0
    while size > 0:
        key = heap_keys[0]
        row = heap_rows[0]
        size -= 1
        heap_keys[0] = heap_keys[size]
        heap_rows[0] = heap_rows[size]
        _sift_down(heap_keys, heap_rows, size, 0)
        if state[row] == 2 or key > values[row]:
            continue
        state[row] = 2
        rank[row] = accepted
        accepted += 1
        for col in range(6):
            nb = nbr[row, col]
            if nb < 0 or state[nb] == 2:
                continue
            cand = _upwind_update(values, state, nbr, nb, h)
            if cand < values[nb]:
                values[nb] = cand
                state[nb] = 1
                heap_keys[size] = cand
                heap_rows[size] = nb
                _sift_up(heap_keys, heap_rows, size)
                size += 1

    for i in range(a):
        if state[i] != 2:
            state[i] = 0
    for s in seed_rows:
        values[s] = 0.0
    return values, state, rank
