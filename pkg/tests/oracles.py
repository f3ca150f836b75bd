"""Slow, obviously-correct reference computations used as test oracles.

None of these touch the package's solvers: cuts are enumerated, shortest
paths are relaxed Bellman-Ford style, distances are scanned exhaustively.
"""

import itertools

import numpy as np


def brute_edt2(mask):
    """Squared distance to the nearest background voxel by a full scan."""
    mask = np.asarray(mask, bool)
    fg = np.argwhere(mask)
    bg = np.argwhere(~mask)
    out = np.zeros(mask.shape, dtype=np.int64)
    for p in fg:
        out[tuple(p)] = ((bg - p) ** 2).sum(axis=1).min()
    return out


def brute_min_cut(n, arcs, cs, ct):
    """Minimum s-t cut over all 2^n side assignments.

    ``arcs`` holds ``(u, v, cap)`` directed arcs; side 0 is the source side.
    """
    best = np.inf
    for bits in itertools.product((0, 1), repeat=n):
        cut = sum(c for u, v, c in arcs if bits[u] == 0 and bits[v] == 1)
        cut += sum(cs[u] for u in range(n) if bits[u] == 1)
        cut += sum(ct[u] for u in range(n) if bits[u] == 0)
        best = min(best, cut)
    return best


def random_flow_problem(rng, n, integer=True, density=3):
    arcs = []
    if n > 1:
        for _ in range(int(rng.integers(0, density * n + 1))):
            u, v = (int(a) for a in rng.choice(n, 2, replace=False))
            arcs.append((u, v, float(rng.integers(0, 8)) if integer else float(rng.random() * 7)))
    draw = (lambda: rng.integers(0, 8, n).astype(float)) if integer else (lambda: rng.random(n) * 7)
    return arcs, draw(), draw()


def gadget_min(x, w_artery, w_vein, n_tol):
    """Cut cost of the two-auxiliary gadget, minimised over both auxiliaries.

    Written out from the arc list rather than the closed form: vein term has
    aux z with z->sink (w_vein) and voxel->z (w_vein/N) arcs; artery term has
    aux z' with source->z' (w_artery) and z'->voxel (w_artery/N).
    """
    x = np.asarray(x)
    best = np.inf
    for z in (0, 1):
        for zp in (0, 1):
            cost = 0.0
            # z->sink is cut when z is on the source side
            if z == 0:
                cost += w_vein
            # voxel->z is cut when voxel is source side (artery) and z is sink side
            if z == 1:
                cost += w_vein / n_tol * np.count_nonzero(x == 0)
            # source->z' is cut when z' is on the sink side
            if zp == 1:
                cost += w_artery
            # z'->voxel is cut when z' is source side and voxel is sink side (vein)
            if zp == 0:
                cost += w_artery / n_tol * np.count_nonzero(x == 1)
            best = min(best, cost)
    return best


def pn_closed_form(x, wa, wv, n_tol):
    """Robust P^n Potts value written directly from the vein/artery counts."""
    n_vein = int(np.sum(x))
    return wa * min(1.0, n_vein / n_tol) + wv * min(1.0, (len(x) - n_vein) / n_tol)


def energy_of(eg, x):
    """Energy of labelling ``x`` from the raw unary, pair and term tables."""
    x = np.asarray(x)
    e = sum(eg.unary[i, x[i]] for i in range(eg.n_vars))
    e += sum(w for (a, b), w in zip(eg.pairs, eg.pair_w) if x[a] != x[b])
    e += sum(pn_closed_form(x[c.voxels], c.w_artery, c.w_vein, c.n_tol) for c in eg.cliques)
    return float(e)


def exhaustive_energy_min(energy_fn, n):
    best, arg = np.inf, None
    for bits in itertools.product((0, 1), repeat=n):
        e = energy_fn(np.array(bits))
        if e < best:
            best, arg = e, bits
    return best, np.array(arg)


def bellman_ford(center, mask, vol, bd, radius, alpha, beta):
    """Shortest path costs from ``center`` over 26-connected mask voxels inside
    the ball of the given radius (voxel units); returns {(x,y,z): cost}."""
    cx = tuple(int(c) for c in center)
    m = np.asarray(mask, bool)
    v = np.asarray(vol, np.float64)
    d = np.asarray(bd, np.float64)
    nodes = [tuple(p) for p in np.argwhere(m)
             if sum((p[i] - cx[i]) ** 2 for i in range(3)) <= radius * radius]
    node_set = set(nodes)
    edges = []
    for p in nodes:
        for off in itertools.product((-1, 0, 1), repeat=3):
            if off == (0, 0, 0):
                continue
            q = (p[0] + off[0], p[1] + off[1], p[2] + off[2])
            if q in node_set:
                length = np.sqrt(sum(o * o for o in off))
                w = length * (abs(v[p] - v[q]) + alpha) * (abs(d[p] - d[q]) + beta)
                edges.append((p, q, w))
    cost = {p: np.inf for p in nodes}
    cost[cx] = 0.0
    for _ in range(len(nodes)):
        changed = False
        for p, q, w in edges:
            if cost[p] + w < cost[q]:
                cost[q] = cost[p] + w
                changed = True
        if not changed:
            break
    return {p: c for p, c in cost.items() if np.isfinite(c)}
