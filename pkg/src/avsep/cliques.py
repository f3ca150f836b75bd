"""Data-dependent path selection.

For each vessel voxel a shortest-path tree is grown inside a small ball
around it; the two ball-boundary voxels on different branches of the tree
with the smallest path cost per unit of straight-line separation define the
path through that voxel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np

from .volume import Volume

_OFFSETS = np.array([(dx, dy, dz)
                     for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                     if (dx, dy, dz) != (0, 0, 0)], dtype=np.int64)
_LENGTHS = np.sqrt((_OFFSETS ** 2).sum(axis=1)).astype(np.float64)


@dataclass(frozen=True)
class CliqueParams:
    S: int = 15
    alpha_path: float = 5.0   # HU
    beta_path: float = 0.5    # voxels
    prune: bool = True        # skip endpoint pairs closer than S/2

    def __post_init__(self):
        if self.S < 5:
            raise ValueError("path scale S must be at least 5")
        if self.alpha_path <= 0 or self.beta_path <= 0:
            raise ValueError("alpha_path and beta_path must be positive")

    @property
    def radius(self) -> float:
        return self.S / 2.0


def path_edge_weight(a: int, b: int, vol: Volume, boundary_dist: Volume,
                     params: CliqueParams = CliqueParams()) -> float:
    """Cost of stepping between 26-neighbours ``a`` and ``b``."""
    ca, cb = vol.coords(a), vol.coords(b)
    step = np.abs(ca - cb)
    if step.max() != 1:
        raise ValueError("voxels are not 26-neighbours")
    length = float(np.sqrt((step ** 2).sum()))
    v = vol.flat()
    d = boundary_dist.flat()
    return (length * (abs(float(v[a]) - float(v[b])) + params.alpha_path)
            * (abs(float(d[a]) - float(d[b])) + params.beta_path))


# ------------------------------------------------------------------ kernels

@numba.njit(cache=True)
def _heap_less(hc, hi, a, b):
    return hc[a] < hc[b] or (hc[a] == hc[b] and hi[a] < hi[b])


@numba.njit(cache=True)
def _heap_push(hc, hi, size, c, i):
    hc[size] = c
    hi[size] = i
    k = size
    while k > 0:
        p = (k - 1) >> 1
        if _heap_less(hc, hi, k, p):
            hc[k], hc[p] = hc[p], hc[k]
            hi[k], hi[p] = hi[p], hi[k]
            k = p
        else:
            break
    return size + 1


@numba.njit(cache=True)
def _heap_pop(hc, hi, size):
    c, i = hc[0], hi[0]
    size -= 1
    hc[0] = hc[size]
    hi[0] = hi[size]
    k = 0
    while True:
        l = 2 * k + 1
        if l >= size:
            break
        m = l
        if l + 1 < size and _heap_less(hc, hi, l + 1, l):
            m = l + 1
        if _heap_less(hc, hi, m, k):
            hc[k], hc[m] = hc[m], hc[k]
            hi[k], hi[m] = hi[m], hi[k]
            k = m
        else:
            break
    return c, i, size


@numba.njit(cache=True)
def _grow_tree(c, mask, vol, bd, nx, ny, nz, half, alpha, beta, offs, lens,
               dist, pred, branch, done, hc, hi):
    """Dijkstra from global voxel ``c`` inside the ball of radius ``half``.

    Work arrays are indexed by local box index (box side 2r+1 centred on c);
    local order agrees with global linear order, so index tie-breaks match.
    Returns the number of settled voxels.  ``pred`` holds local indices.
    """
    r = int(half)
    w = 2 * r + 1
    cx = c % nx
    cy = (c // nx) % ny
    cz = c // (nx * ny)
    h2 = half * half
    for q in range(w * w * w):
        dist[q] = np.inf
        pred[q] = -1
        branch[q] = -1
        done[q] = False
    lc = r + w * (r + w * r)
    dist[lc] = 0.0
    size = _heap_push(hc, hi, 0, 0.0, lc)
    settled = 0
    while size > 0:
        du, lu, size = _heap_pop(hc, hi, size)
        if done[lu] or du > dist[lu]:
            continue
        done[lu] = True
        settled += 1
        pu = pred[lu]
        if pu == lc:
            branch[lu] = lu
        elif pu >= 0:
            branch[lu] = branch[pu]
        lx = lu % w
        ly = (lu // w) % w
        lz = lu // (w * w)
        gu = (cx + lx - r) + nx * ((cy + ly - r) + ny * (cz + lz - r))
        for o in range(offs.shape[0]):
            mx = lx + offs[o, 0]
            my = ly + offs[o, 1]
            mz = lz + offs[o, 2]
            if mx < 0 or my < 0 or mz < 0 or mx >= w or my >= w or mz >= w:
                continue
            ex = mx - r
            ey = my - r
            ez = mz - r
            if ex * ex + ey * ey + ez * ez > h2:
                continue
            gx = cx + ex
            gy = cy + ey
            gz = cz + ez
            if gx < 0 or gy < 0 or gz < 0 or gx >= nx or gy >= ny or gz >= nz:
                continue
            gv = gx + nx * (gy + ny * gz)
            if not mask[gv]:
                continue
            lv = mx + w * (my + w * mz)
            if done[lv]:
                continue
            wt = lens[o] * (abs(vol[gu] - vol[gv]) + alpha) * (abs(bd[gu] - bd[gv]) + beta)
            nd = du + wt
            if nd < dist[lv]:
                dist[lv] = nd
                pred[lv] = lu
                size = _heap_push(hc, hi, size, nd, lv)
    return settled


@numba.njit(cache=True)
def _best_pair(half, prune, dist, branch, done, shell):
    """Index pair (into the local box) minimising cost per unit separation."""
    r = int(half)
    w = 2 * r + 1
    lo = (half - 1.0) * (half - 1.0)
    hi2 = half * half
    ns = 0
    for q in range(w * w * w):
        if not done[q]:
            continue
        ex = q % w - r
        ey = (q // w) % w - r
        ez = q // (w * w) - r
        d2 = ex * ex + ey * ey + ez * ez
        if d2 >= lo and d2 <= hi2:
            shell[ns] = q
            ns += 1
    best = np.inf
    bj = -1
    bk = -1
    for a in range(ns):
        j = shell[a]
        jx = j % w
        jy = (j // w) % w
        jz = j // (w * w)
        for b in range(a + 1, ns):
            k = shell[b]
            if branch[j] == branch[k]:
                continue
            dx = jx - k % w
            dy = jy - (k // w) % w
            dz = jz - k // (w * w)
            sep = np.sqrt(dx * dx + dy * dy + dz * dz)
            if prune and sep < half:
                continue
            ratio = (dist[j] + dist[k]) / sep
            if ratio < best:
                best = ratio
                bj = j
                bk = k
    return bj, bk


@numba.njit(cache=True)
def _trace(c, bj, bk, pred, nx, ny, half, out, pos):
    """Write the path bj -> centre -> bk as global indices into ``out[pos:]``."""
    r = int(half)
    w = 2 * r + 1
    cx = c % nx
    cy = (c // nx) % ny
    cz = c // (nx * ny)
    start = pos
    q = bj
    while q >= 0:
        out[pos] = (cx + q % w - r) + nx * ((cy + (q // w) % w - r) + ny * (cz + q // (w * w) - r))
        pos += 1
        q = pred[q]
    # second half, walked from bk towards the centre then reversed in place
    mid = pos
    q = bk
    while pred[q] >= 0:
        out[pos] = (cx + q % w - r) + nx * ((cy + (q // w) % w - r) + ny * (cz + q // (w * w) - r))
        pos += 1
        q = pred[q]
    a = mid
    b = pos - 1
    while a < b:
        out[a], out[b] = out[b], out[a]
        a += 1
        b -= 1
    return pos - start


@numba.njit(cache=True)
def _select_all(centers, mask, vol, bd, nx, ny, nz, half, alpha, beta, prune, offs, lens):
    r = int(half)
    w = 2 * r + 1
    nbox = w * w * w
    dist = np.empty(nbox)
    pred = np.empty(nbox, dtype=np.int64)
    branch = np.empty(nbox, dtype=np.int64)
    done = np.empty(nbox, dtype=np.bool_)
    hc = np.empty(26 * nbox + 1)
    hi = np.empty(26 * nbox + 1, dtype=np.int64)
    shell = np.empty(nbox, dtype=np.int64)
    out = np.empty(max(64, centers.size * 20), dtype=np.int64)
    offsets = np.zeros(centers.size + 1, dtype=np.int64)
    kept = np.empty(centers.size, dtype=np.int64)
    nk = 0
    pos = 0
    for i in range(centers.size):
        c = centers[i]
        _grow_tree(c, mask, vol, bd, nx, ny, nz, half, alpha, beta, offs, lens,
                   dist, pred, branch, done, hc, hi)
        bj, bk = _best_pair(half, prune, dist, branch, done, shell)
        if bj < 0:
            continue
        if out.size - pos < 2 * nbox:
            bigger = np.empty(2 * out.size + 2 * nbox, dtype=np.int64)
            bigger[:pos] = out[:pos]
            out = bigger
        pos += _trace(c, bj, bk, pred, nx, ny, half, out, pos)
        kept[nk] = c
        nk += 1
        offsets[nk] = pos
    return kept[:nk], offsets[:nk + 1], out[:pos]


# ------------------------------------------------------------ public API

def _flats(mask, vol, boundary_dist):
    m = (mask.flat() if isinstance(mask, Volume) else np.asarray(mask).ravel(order="F")).astype(bool)
    return (np.ascontiguousarray(m), np.ascontiguousarray(vol.flat(), dtype=np.float64),
            np.ascontiguousarray(boundary_dist.flat(), dtype=np.float64))


@dataclass
class DijkstraTree:
    center: int
    voxels: np.ndarray   # settled voxels, ascending linear index
    cost: np.ndarray
    pred: np.ndarray     # predecessor linear index, -1 at the centre

    def cost_of(self, v: int) -> float:
        i = np.searchsorted(self.voxels, v)
        if i == self.voxels.size or self.voxels[i] != v:
            raise KeyError(v)
        return float(self.cost[i])


def dijkstra_tree(center: int, vessel_mask: Volume, vol: Volume, boundary_dist: Volume,
                  params: CliqueParams = CliqueParams()) -> DijkstraTree:
    """Shortest-path tree from ``center`` over mask voxels within radius S/2."""
    m, v, d = _flats(vessel_mask, vol, boundary_dist)
    if not m[center]:
        raise ValueError(f"center voxel {center} is outside the vessel mask")
    half = params.radius
    r = int(half)
    w = 2 * r + 1
    nbox = w ** 3
    dist = np.empty(nbox)
    pred = np.empty(nbox, dtype=np.int64)
    branch = np.empty(nbox, dtype=np.int64)
    done = np.empty(nbox, dtype=bool)
    hc = np.empty(26 * nbox + 1)
    hi = np.empty(26 * nbox + 1, dtype=np.int64)
    nx, ny, nz = vol.dims
    _grow_tree(center, m, v, d, nx, ny, nz, half, params.alpha_path, params.beta_path,
               _OFFSETS, _LENGTHS, dist, pred, branch, done, hc, hi)
    local = np.flatnonzero(done)
    lc = np.stack([local % w, (local // w) % w, local // (w * w)], axis=1) - r
    cxyz = vol.coords(center)

    def to_global(lxyz):
        g = cxyz + lxyz
        return vol.index(g[:, 0], g[:, 1], g[:, 2])

    voxels = to_global(lc)
    p = pred[local]
    has = p >= 0
    pg = np.full(local.size, -1, dtype=np.int64)
    pl = p[has]
    pg[has] = to_global(np.stack([pl % w, (pl // w) % w, pl // (w * w)], axis=1) - r)
    return DijkstraTree(int(center), voxels, dist[local], pg)


@dataclass
class CandidatePaths:
    """Selected paths in centre order, stored as one concatenated array."""

    dims: tuple
    centers: np.ndarray
    offsets: np.ndarray
    voxels: np.ndarray

    def __len__(self):
        return int(self.centers.size)

    def __getitem__(self, i) -> np.ndarray:
        return self.voxels[self.offsets[i]:self.offsets[i + 1]]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def to_csv(self, path, weights=None) -> None:
        """Debug dump: centre, space-separated path voxels, optional weights."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["center", "voxels", "w_artery", "w_vein"])
            for i, p in enumerate(self):
                wa, wv = ("", "") if weights is None else (repr(float(weights[i][0])), repr(float(weights[i][1])))
                out.writerow([int(self.centers[i]), " ".join(map(str, p.tolist())), wa, wv])


def select_all_cliques(vessel_mask: Volume, vol: Volume, boundary_dist: Volume,
                       params: CliqueParams = CliqueParams(), centers=None) -> CandidatePaths:
    """One path per vessel voxel that has a valid endpoint pair, in index order."""
    m, v, d = _flats(vessel_mask, vol, boundary_dist)
    if centers is None:
        centers = np.flatnonzero(m)
    centers = np.sort(np.asarray(centers, dtype=np.int64))
    if centers.size and not m[centers].all():
        raise ValueError("all centres must lie inside the vessel mask")
    nx, ny, nz = vol.dims
    kept, offsets, voxels = _select_all(centers, m, v, d, nx, ny, nz, params.radius,
                                        params.alpha_path, params.beta_path, params.prune,
                                        _OFFSETS, _LENGTHS)
    return CandidatePaths(vol.dims, kept, offsets, voxels)


def select_path_at(center: int, vessel_mask: Volume, vol: Volume, boundary_dist: Volume,
                   params: CliqueParams = CliqueParams()):
    """The path through ``center`` as linear voxel indices, or ``None`` at tips."""
    m = vessel_mask.flat()
    if not m[center]:
        raise ValueError(f"center voxel {center} is outside the vessel mask")
    paths = select_all_cliques(vessel_mask, vol, boundary_dist, params, centers=[center])
    return paths[0].copy() if len(paths) else None
