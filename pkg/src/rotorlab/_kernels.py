"""Compiled inner loops.

Grids are flattened C-order arrays; a step in direction k adds
``deltas[k]`` to the flat index (``+stride`` for k < d, ``-stride`` else).
"""

import numpy as np
from numba import njit

OK = 0
NEED_GROW = 1
STACK_EXHAUSTED = 2
WATCHDOG = 3


@njit(cache=True)
def _near_edge(pos, strides, side, margin):
    r = pos
    for i in range(strides.shape[0]):
        c = r // strides[i]
        r -= c * strides[i]
        if c < margin or c > side - 1 - margin:
            return True
    return False


@njit(cache=True)
def rotor_aggregate(occ, visits, plen, prefix, cycle, deltas, strides, side,
                    origin, n_done, n_target, order_out, max_walk, skip_increment):
    """Release particles ``n_done .. n_target-1`` from ``origin``.

    Returns ``(n_done, steps_added, status)``.  Stops early with NEED_GROW
    once a newly occupied site is within two cells of the grid edge.
    """
    P = cycle.shape[1]
    steps_total = 0
    p = n_done
    while p < n_target:
        pos = origin
        steps = 0
        while occ[pos] != 0:
            m = visits[pos] + 1
            if not skip_increment:
                visits[pos] = m
            k = plen[pos]
            if m <= k:
                dirn = prefix[pos, m - 1]
            else:
                dirn = cycle[pos, (m - k - 1) % P]
                if dirn < 0:
                    return p, steps_total, STACK_EXHAUSTED
            pos += deltas[dirn]
            steps += 1
            if steps > max_walk:
                return p, steps_total, WATCHDOG
        occ[pos] = p + 1
        order_out[p] = pos
        steps_total += steps
        p += 1
        if _near_edge(pos, strides, side, 2):
            return p, steps_total, NEED_GROW
    return p, steps_total, OK


ROW_SHIFT = 40
COUNT_MASK = (1 << ROW_SHIFT) - 1


@njit(cache=True)
def rotor_aggregate_packed(cell, rows, deltas, strides, side,
                           origin, n_done, n_target, order_out, max_walk):
    """Fast path of :func:`rotor_aggregate` for prefix-free tables.

    ``cell[x]`` is ``-(row + 1)`` for an empty site and
    ``row << ROW_SHIFT | m_x`` for an occupied one, where ``rows[row]`` is
    the site's rotor cycle.  One load per step.
    """
    P = rows.shape[1]
    step_of = np.empty(rows.size, np.int64)
    for r in range(rows.shape[0]):
        for j in range(P):
            step_of[r * P + j] = deltas[rows[r, j]]
    pmask = P - 1 if (P & (P - 1)) == 0 else -1
    steps_total = 0
    p = n_done
    while p < n_target:
        pos = origin
        steps = 0
        c = cell[pos]
        while c >= 0:
            cell[pos] = c + 1
            m = c & COUNT_MASK
            base = (c >> ROW_SHIFT) * P
            if pmask >= 0:
                pos += step_of[base + (m & pmask)]
            else:
                pos += step_of[base + m % P]
            steps += 1
            if steps > max_walk:
                return p, steps_total, WATCHDOG
            c = cell[pos]
        cell[pos] = (-c - 1) << ROW_SHIFT
        order_out[p] = pos
        steps_total += steps
        p += 1
        if _near_edge(pos, strides, side, 2):
            return p, steps_total, NEED_GROW
    return p, steps_total, OK


@njit(cache=True)
def idla_aggregate(occ, deltas, strides, side, origin, n_done, n_target,
                   order_out, rng):
    nd = deltas.shape[0]
    steps_total = 0
    p = n_done
    while p < n_target:
        pos = origin
        while occ[pos] != 0:
            pos += deltas[int(rng.random() * nd)]
            steps_total += 1
        occ[pos] = p + 1
        order_out[p] = pos
        p += 1
        if _near_edge(pos, strides, side, 2):
            return p, steps_total, NEED_GROW
    return p, steps_total, OK


@njit(cache=True)
def red_black_sor(e, interior, colour, deltas, omega, tol, max_sweeps, check_every):
    """Solve (1/2d) sum_y e(y) - e(x) = -1 on ``interior``; e = 0 elsewhere.

    ``interior`` lists the flat indices of the region, red sites first;
    ``colour`` is the number of red sites.  Returns (residual, sweeps).
    """
    nd = deltas.shape[0]
    inv = 1.0 / nd
    n = interior.shape[0]
    res = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        for lo, hi in ((0, colour), (colour, n)):
            for j in range(lo, hi):
                x = interior[j]
                s = 0.0
                for k in range(nd):
                    s += e[x + deltas[k]]
                e[x] += omega * (s * inv + 1.0 - e[x])
        sweeps += 1
        if sweeps % check_every == 0 or sweeps == max_sweeps:
            res = residual(e, interior, deltas)
            if res <= tol:
                break
    return res, sweeps


@njit(cache=True)
def residual(e, interior, deltas):
    nd = deltas.shape[0]
    inv = 1.0 / nd
    worst = 0.0
    for j in range(interior.shape[0]):
        x = interior[j]
        s = 0.0
        for k in range(nd):
            s += e[x + deltas[k]]
        r = abs(s * inv - e[x] + 1.0)
        if r > worst:
            worst = r
    return worst


@njit(cache=True)
def walk_exit_times(inside, deltas, start, trials, rng):
    """Sum and sum of squares of exit times from the masked region."""
    nd = deltas.shape[0]
    s1 = 0
    s2 = 0
    for _ in range(trials):
        pos = start
        t = 0
        while inside[pos]:
            pos += deltas[int(rng.random() * nd)]
            t += 1
        s1 += t
        s2 += t * t
    return s1, s2


@njit(cache=True)
def cube_exit_times(d, r, trials, rng):
    """Exit times from the L-infinity ball of radius r, started at its centre."""
    nd = 2 * d
    x = np.zeros(d, np.int64)
    s1 = 0
    s2 = 0
    for _ in range(trials):
        x[:] = 0
        t = 0
        while True:
            out = False
            for i in range(d):
                if x[i] > r or x[i] < -r:
                    out = True
            if out:
                break
            k = int(rng.random() * nd)
            if k < d:
                x[k] += 1
            else:
                x[k - d] -= 1
            t += 1
        s1 += t
        s2 += t * t
    return s1, s2


@njit(cache=True)
def orthant_escapes(start, r, trials, rng):
    """Count walks from ``start`` reaching |x|_inf = r+1 before the orthant x >= 0."""
    d = start.shape[0]
    nd = 2 * d
    x = np.empty(d, np.int64)
    hits = 0
    for _ in range(trials):
        x[:] = start
        while True:
            in_q = True
            out = False
            for i in range(d):
                if x[i] < 0:
                    in_q = False
                if x[i] > r or x[i] < -r:
                    out = True
            if in_q:
                break
            if out:
                hits += 1
                break
            k = int(rng.random() * nd)
            if k < d:
                x[k] += 1
            else:
                x[k - d] -= 1
    return hits


@njit(cache=True)
def _classify(c, h, r2):
    near = 0.0
    far = 0.0
    for i in range(c.shape[0]):
        a = abs(c[i])
        lo = a - h
        if lo > 0.0:
            near += lo * lo
        far += (a + h) * (a + h)
    if far <= r2:
        return 1
    if near >= r2:
        return 0
    return 2


@njit(cache=True)
def _leaf_fraction(c, h, r2):
    """Inside fraction of a small straddling cell, treating the sphere as
    flat across it: a linear ramp in the signed distance from the centre."""
    d = c.shape[0]
    norm = 0.0
    for i in range(d):
        norm += c[i] * c[i]
    norm = np.sqrt(norm)
    if norm == 0.0:
        return 1.0
    width = 0.0
    for i in range(d):
        width += abs(c[i])
    width *= h / norm
    f = 0.5 + (np.sqrt(r2) - norm) / (2.0 * width)
    return min(1.0, max(0.0, f))


@njit(cache=True)
def cube_ball_volumes(centers, r2, depth_cap, tol, max_cells):
    """Volume of each unit cube (given by centre) inside the ball |y|^2 <= r2.

    Straddling cubes are split level by level; refinement stops once the
    straddling volume is below ``tol``, at ``depth_cap``, or when the next
    level would exceed ``max_cells``.  Leaf cells use a flat-sphere ramp
    estimate of their inside fraction.
    """
    m, d = centers.shape
    nchild = 1 << d
    out = np.zeros(m)
    cur = np.empty((max_cells, d))
    nxt = np.empty((max_cells, d))
    child = np.empty(d)
    for q in range(m):
        c0 = centers[q]
        cls = _classify(c0, 0.5, r2)
        if cls != 2:
            out[q] = float(cls)
            continue
        ncur = 1
        cur[0, :] = c0
        h = 0.5
        cell_vol = 1.0
        acc = 0.0
        level = 0
        while True:
            if ncur * cell_vol <= tol or level >= depth_cap or ncur * nchild > max_cells:
                for j in range(ncur):
                    acc += cell_vol * _leaf_fraction(cur[j], h, r2)
                break
            h2 = h / 2.0
            cv = cell_vol / nchild
            nn = 0
            for j in range(ncur):
                for mask in range(nchild):
                    for i in range(d):
                        child[i] = cur[j, i] + (h2 if (mask >> i) & 1 else -h2)
                    k = _classify(child, h2, r2)
                    if k == 1:
                        acc += cv
                    elif k == 2:
                        nxt[nn, :] = child
                        nn += 1
            cur, nxt = nxt, cur
            ncur = nn
            h = h2
            cell_vol = cv
            level += 1
            if ncur == 0:
                break
        out[q] = acc
    return out
