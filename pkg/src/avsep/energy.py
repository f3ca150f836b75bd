"""Binary artery/vein energy: hard root seeds, contrast-sensitive pairwise
terms and robust P^n Potts path terms, reduced to an s-t cut.

Binary variables use ``ARTERY = 0`` (source side) and ``VEIN = 1`` (sink side).
A path term with weights ``(w_artery, w_vein)`` and tolerance ``N`` costs::

    w_artery * min(1, #vein / N) + w_vein * min(1, #artery / N)

so ``w_artery`` rewards the path lying entirely in the artery and ``w_vein``
rewards it lying entirely in the vein.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import maxflow
from .maxflow import INF_CAP, FlowGraph
from .volume import Volume

ARTERY = 0
VEIN = 1

# label-volume codes
BACKGROUND_LABEL = 0
ARTERY_LABEL = 1
VEIN_LABEL = 2

# half of the 18-neighbourhood: each unordered neighbour pair appears once
NEIGHBORS_18 = np.array([
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
])


@dataclass
class EnergyParams:
    t_distance: float = 11.0   # mm
    alpha_pair: float = 0.01
    beta_pair: float = 0.1
    sigma_g: float = 50.0
    sigma_p: float = 0.3
    d_floor: float = 1.0       # mm
    hard_cost: float = INF_CAP


@dataclass
class Clique:
    voxels: np.ndarray
    w_artery: float = 0.0
    w_vein: float = 0.0
    n_tol: int = 1

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.int64).ravel()
        if self.voxels.size < 3:
            raise ValueError("a clique needs at least 3 voxels")
        if np.unique(self.voxels).size != self.voxels.size:
            raise ValueError("clique voxels must be distinct")
        self.w_artery = float(self.w_artery)
        self.w_vein = float(self.w_vein)
        for w in (self.w_artery, self.w_vein):
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"clique weights must be finite and >= 0, got {w}")
        self.n_tol = int(self.n_tol)
        if not 1 <= self.n_tol <= self.voxels.size:
            raise ValueError(f"tolerance N={self.n_tol} must lie in [1, {self.voxels.size}]")

    def __len__(self):
        return int(self.voxels.size)


def robust_pn_value(x, w_artery: float, w_vein: float, n_tol: int) -> float:
    """Closed-form value of a robust P^n Potts pair of terms on binary labels ``x``."""
    x = np.asarray(x)
    n_vein = int(np.count_nonzero(x == VEIN))
    n_artery = x.size - n_vein
    return w_artery * min(1.0, n_vein / n_tol) + w_vein * min(1.0, n_artery / n_tol)


# ------------------------------------------------------------ unary terms

def unary_costs(positions_mm, roots, params: EnergyParams) -> np.ndarray:
    """``(k, 2)`` array of ``(cost_if_artery, cost_if_vein)`` for voxel positions in mm.

    Voxels closer than ``t_distance`` to a root are pinned to that root's
    label; equidistant voxels go to the artery.
    """
    p = np.atleast_2d(np.asarray(positions_mm, dtype=np.float64))
    pa, pv = (np.asarray(r, dtype=np.float64) for r in roots)
    da = np.linalg.norm(p - pa, axis=1)
    dv = np.linalg.norm(p - pv, axis=1)
    near = np.minimum(da, dv) < params.t_distance
    to_artery = near & (da <= dv)
    to_vein = near & (dv < da)
    costs = np.zeros((p.shape[0], 2))
    costs[to_artery, VEIN] = params.hard_cost
    costs[to_vein, ARTERY] = params.hard_cost
    return costs


def unary_weight(voxel_pos, roots, params: EnergyParams = EnergyParams()):
    c = unary_costs(voxel_pos, roots, params)[0]
    return float(c[ARTERY]), float(c[VEIN])


# --------------------------------------------------------- pairwise terms

def pair_weight(g, h, d, params: EnergyParams = EnergyParams()):
    """Boundary cost for gradient ``g``, plateness ``h`` and root distance ``d`` (mm)."""
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    d = np.maximum(np.asarray(d, dtype=np.float64), params.d_floor)
    return ((np.exp(-g ** 2 / params.sigma_g ** 2) + params.alpha_pair)
            * (np.exp(-h ** 2 / params.sigma_p ** 2) + params.beta_pair) / d ** 2)


def pairwise_weights(ia, ib, vol: Volume, plate: Volume, roots, params: EnergyParams):
    """Vectorised pairwise capacities for voxel index pairs ``(ia, ib)``."""
    ia = np.asarray(ia, dtype=np.int64)
    ib = np.asarray(ib, dtype=np.int64)
    flat = vol.flat().astype(np.float64)
    g = np.abs(flat[ia] - flat[ib])
    ca, cb = vol.coords(ia), vol.coords(ib)
    mid = (ca + cb) / 2.0
    rounded = np.floor(mid + 0.5).astype(np.int64)
    h = plate.flat()[vol.index(rounded[..., 0], rounded[..., 1], rounded[..., 2])]
    mid_mm = mid * np.asarray(vol.spacing)
    pa, pv = (np.asarray(r, dtype=np.float64) for r in roots)
    d = np.minimum(np.linalg.norm(mid_mm - pa, axis=-1), np.linalg.norm(mid_mm - pv, axis=-1))
    return pair_weight(g, h, d, params)


def pairwise_weight(a: int, b: int, vol: Volume, plate: Volume, roots,
                    params: EnergyParams = EnergyParams()) -> float:
    return float(pairwise_weights([a], [b], vol, plate, roots, params)[0])


def neighbor_pairs(mask, offsets=NEIGHBORS_18, either: bool = False):
    """All unordered neighbour pairs ``(ia, ib)`` of linear indices inside ``mask``.

    With ``either`` a pair qualifies when at least one voxel is in the mask.
    """
    m = np.asarray(mask.data if isinstance(mask, Volume) else mask).astype(bool)
    nx, ny, nz = m.shape
    out_a, out_b = [], []
    for dx, dy, dz in offsets:
        sx = slice(max(0, -dx), nx - max(0, dx))
        sy = slice(max(0, -dy), ny - max(0, dy))
        sz = slice(max(0, -dz), nz - max(0, dz))
        tx = slice(max(0, dx), nx + min(0, dx))
        ty = slice(max(0, dy), ny + min(0, dy))
        tz = slice(max(0, dz), nz + min(0, dz))
        both = (m[sx, sy, sz] | m[tx, ty, tz]) if either else (m[sx, sy, sz] & m[tx, ty, tz])
        x, y, z = np.nonzero(both)
        x = x + sx.start
        y = y + sy.start
        z = z + sz.start
        out_a.append(x + nx * (y + ny * z))
        out_b.append((x + dx) + nx * ((y + dy) + ny * (z + dz)))
    ia = np.concatenate(out_a).astype(np.int64)
    ib = np.concatenate(out_b).astype(np.int64)
    order = np.lexsort((ib, ia))
    return ia[order], ib[order]


# ------------------------------------------------------------- gadgets

def pn_potts_gadget(graph: FlowGraph, nodes, w_artery: float, w_vein: float, n_tol: int) -> int:
    """Add the cut gadgets of a robust P^n Potts pair of terms on ``nodes``.

    The vein-rewarding term gets an auxiliary node ``z`` with ``z -> sink``
    of capacity ``w_vein`` and ``node_i -> z`` of ``w_vein / N``; the
    artery-rewarding term mirrors it with ``source -> z'`` and
    ``z' -> node_i``.  Zero-weight terms add nothing.  Returns the number of
    auxiliary nodes added.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if w_artery < 0 or w_vein < 0 or not (np.isfinite(w_artery) and np.isfinite(w_vein)):
        raise ValueError("path term weights must be finite and non-negative")
    added = 0
    if w_vein > 0:
        z = graph.add_nodes(1)
        graph.add_tedge(z, 0.0, w_vein)
        graph.add_edges(nodes, np.full(nodes.size, z), w_vein / n_tol)
        added += 1
    if w_artery > 0:
        z = graph.add_nodes(1)
        graph.add_tedge(z, w_artery, 0.0)
        graph.add_edges(np.full(nodes.size, z), nodes, w_artery / n_tol)
        added += 1
    return added


# ------------------------------------------------------------ assembly

@dataclass
class EnergyGraph:
    """An energy over ``n_vars`` binary variables together with its cut graph.

    ``cliques`` hold variable indices (not voxel indices).  ``voxels`` maps
    variables back to linear voxel indices when the energy came from a volume.
    """

    n_vars: int
    unary: np.ndarray                      # (n_vars, 2): cost if artery, cost if vein
    pairs: np.ndarray                      # (m, 2) variable index pairs
    pair_w: np.ndarray                     # (m,)
    cliques: list = field(default_factory=list)
    voxels: np.ndarray | None = None
    dims: tuple | None = None
    graph: FlowGraph | None = None
    constant: float = 0.0
    n_aux: int = 0

    def energy(self, x) -> float:
        """Direct evaluation of the energy of labelling ``x`` (no graph involved)."""
        x = np.asarray(x)
        e = float(self.unary[np.arange(self.n_vars), x].sum())
        if self.pairs.size:
            e += float(self.pair_w[x[self.pairs[:, 0]] != x[self.pairs[:, 1]]].sum())
        for c in self.cliques:
            e += robust_pn_value(x[c.voxels], c.w_artery, c.w_vein, c.n_tol)
        return e

    def solve(self):
        """Minimise; returns ``(labels, energy)`` with energy = flow + constant."""
        flow, side = maxflow.solve(self.graph)
        return decode_side(self, side), flow + self.constant


def build_energy(unary, pairs, pair_w, cliques: Sequence[Clique] = ()) -> EnergyGraph:
    """Energy over explicit terms.  Clique voxels index the variables."""
    unary = np.asarray(unary, dtype=np.float64).reshape(-1, 2)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pair_w = np.asarray(pair_w, dtype=np.float64).ravel()
    n = unary.shape[0]
    if (unary < 0).any() or (pair_w < 0).any():
        raise ValueError("unary and pairwise costs must be non-negative")
    g = FlowGraph(n)
    shift = unary.min(axis=1)
    g.add_tedges(np.arange(n), unary[:, VEIN] - shift, unary[:, ARTERY] - shift)
    if pairs.size:
        g.add_edges(pairs[:, 0], pairs[:, 1], pair_w, pair_w)
    n_aux = 0
    for c in cliques:
        if c.voxels.max() >= n:
            raise IndexError("clique references a variable outside the energy")
        n_aux += pn_potts_gadget(g, c.voxels, c.w_artery, c.w_vein, c.n_tol)
    return EnergyGraph(n, unary, pairs, pair_w, list(cliques), graph=g,
                       constant=float(shift.sum()), n_aux=n_aux)


def assemble(vessel_mask: Volume, vol: Volume, plate: Volume, roots, cliques: Sequence[Clique],
             params: EnergyParams = EnergyParams()) -> EnergyGraph:
    """Energy over the vessel voxels of a volume, one variable per voxel.

    Variables follow ascending linear voxel index.  Clique voxels are linear
    voxel indices and must lie inside the vessel mask.
    """
    if not vol.is_isotropic:
        raise ValueError("energy assembly requires an isotropic volume")
    mflat = vessel_mask.flat().astype(bool)
    voxels = np.flatnonzero(mflat)
    var_of = np.full(mflat.size, -1, dtype=np.int64)
    var_of[voxels] = np.arange(voxels.size)
    unary = unary_costs(vol.positions_mm(voxels), roots, params)
    ia, ib = neighbor_pairs(vessel_mask)
    w = pairwise_weights(ia, ib, vol, plate, roots, params)
    pairs = np.stack([var_of[ia], var_of[ib]], axis=1)
    mapped = []
    for c in cliques:
        v = var_of[c.voxels]
        if (v < 0).any():
            raise ValueError("clique references a voxel outside the vessel mask")
        mapped.append(Clique(v, c.w_artery, c.w_vein, c.n_tol))
    eg = build_energy(unary, pairs, w, mapped)
    eg.voxels = voxels
    eg.dims = vol.dims
    return eg


def decode_side(eg: EnergyGraph, side) -> np.ndarray:
    """Variable labels from a cut: source side is artery, sink side vein."""
    side = np.asarray(side)[:eg.n_vars]
    return np.where(side == maxflow.SOURCE, ARTERY, VEIN).astype(np.int8)


def decode(eg: EnergyGraph):
    """Labels and energy of a solved energy graph."""
    if eg.graph.side is None:
        raise RuntimeError("energy graph has not been solved")
    return decode_side(eg, eg.graph.side), eg.graph.flow + eg.constant


def to_label_volume(eg: EnergyGraph, labels, spacing) -> Volume:
    """Scatter variable labels into a uint8 volume (0 background, 1 artery, 2 vein)."""
    out = np.zeros(int(np.prod(eg.dims)), dtype=np.uint8)
    out[eg.voxels] = np.where(np.asarray(labels) == ARTERY, ARTERY_LABEL, VEIN_LABEL)
    return Volume(out.reshape(eg.dims, order="F"), spacing)
