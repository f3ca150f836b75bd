"""End-to-end artery/vein separation: vessel extraction, path selection,
weighting, graph-cut separation and scoring."""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import ndimage as ndi

from . import maxflow
from .cliques import CliqueParams, select_all_cliques
from .energy import (ARTERY_LABEL, BACKGROUND_LABEL, VEIN_LABEL, Clique, EnergyParams,
                     assemble, neighbor_pairs, to_label_volume)
from .learn import (MIXED, LikelihoodModel, SpatialMaps, av_measures, fit_lda, fit_likelihood,
                    fit_likelihood_2d, label_paths, path_features)
from .maxflow import FlowGraph
from .phantom import PhantomScene, sample_centerline_labels
from .volume import Volume, distance_transform, plateness, tubeness

METHODS = ("GC", "DDCP", "DDCP_SAF")
ALPHA_GRID = (1.0, 5.0, 10.0, 20.0)
BETA_GRID = (0.1, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class MethodConfig:
    method: str = "DDCP"
    N: int = 3
    energy: EnergyParams = field(default_factory=EnergyParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.N < 1:
            raise ValueError("tolerance N must be a positive integer")


# ------------------------------------------------------ vessel extraction

@dataclass(frozen=True)
class ExtractParams:
    seed_radius: float = 3.0       # voxels around each root
    tube_frac: float = 0.5         # tubeness seed threshold, fraction of the 99.9th percentile
    sigma_g: float = 50.0
    alpha: float = 0.01
    background_mean: float | None = None   # estimated from the volume when None
    noise_sigma: float | None = None


def _background_stats(vol: Volume):
    """Median and MAD-based sigma of the intensities (background dominates)."""
    v = vol.data.astype(np.float64).ravel()
    med = float(np.median(v))
    mad = float(np.median(np.abs(v - med)))
    return med, 1.4826 * mad


def _root_voxels(roots, vol: Volume):
    idx = []
    for r in roots:
        c = np.floor(np.asarray(r) / np.asarray(vol.spacing) + 0.5).astype(int)
        if (c < 0).any() or (c >= np.array(vol.dims)).any():
            raise ValueError(f"root {tuple(np.round(r, 3))} lies outside the volume")
        idx.append(c)
    return np.array(idx)


def extract_vessels(vol: Volume, roots, params: ExtractParams = ExtractParams()) -> Volume:
    """Binary vessel mask by a first-order graph cut seeded at the roots."""
    bg_mean, sigma = _background_stats(vol)
    if params.background_mean is not None:
        bg_mean = params.background_mean
    if params.noise_sigma is not None:
        sigma = params.noise_sigma
    flat = vol.flat().astype(np.float64)
    cand = flat > bg_mean + 2 * sigma   # strict: a noiseless background has sigma 0
    if not cand.any():
        raise ValueError("no voxel is brighter than the background threshold; no foreground")

    rv = _root_voxels(roots, vol)
    grid = np.indices(vol.dims)
    near = np.zeros(vol.dims, dtype=bool)
    for c in rv:
        d2 = sum((grid[k] - c[k]) ** 2 for k in range(3))
        near |= d2 <= params.seed_radius ** 2
    seeds = near.ravel(order="F") & cand
    if not seeds.any():
        raise ValueError("no bright voxel near the roots; no foreground seeds")
    tube = tubeness(vol).flat()
    top = float(np.percentile(tube, 99.9))
    if top > 0:
        seeds |= cand & (tube > params.tube_frac * top)

    nodes = np.flatnonzero(cand)
    node_of = np.full(flat.size, -1, dtype=np.int64)
    node_of[nodes] = np.arange(nodes.size)
    g = FlowGraph(nodes.size)
    ia, ib = neighbor_pairs(cand.reshape(vol.dims, order="F"), either=True)
    w = np.exp(-(flat[ia] - flat[ib]) ** 2 / params.sigma_g ** 2) + params.alpha
    ca, cb = cand[ia], cand[ib]
    both = ca & cb
    g.add_edges(node_of[ia[both]], node_of[ib[both]], w[both], w[both])
    # links into hard background become sink links
    to_bg = np.concatenate([node_of[ia[ca & ~cb]], node_of[ib[cb & ~ca]]])
    w_bg = np.concatenate([w[ca & ~cb], w[cb & ~ca]])
    sink = np.bincount(to_bg, w_bg, nodes.size)
    src = np.where(seeds[nodes], maxflow.INF_CAP, 0.0)
    g.add_tedges(np.arange(nodes.size), src, sink)
    _, side = maxflow.solve(g)
    fg = np.zeros(flat.size, dtype=bool)
    fg[nodes[side == maxflow.SOURCE]] = True
    fg = fg.reshape(vol.dims, order="F")

    lab, _ = ndi.label(fg, structure=np.ones((3, 3, 3)))
    keep = {int(lab[tuple(c)]) for c in rv} - {0}
    mask = np.isin(lab, sorted(keep))
    if not mask.any():
        raise ValueError("vessel extraction produced no root-connected foreground")
    return Volume(mask.astype(np.uint8), vol.spacing)


# ----------------------------------------------------------- separation

@dataclass
class SeparationResult:
    labels: Volume
    energy: float
    n_cliques: int
    timing: dict


def build_cliques(vol: Volume, mask: Volume, config: MethodConfig, model: LikelihoodModel | None,
                  spatial: SpatialMaps | None = None):
    """Weighted path terms for the DDCP methods (empty for GC)."""
    if config.method == "GC":
        return []
    if model is None:
        raise ValueError(f"method {config.method} needs a trained model")
    if config.method == "DDCP_SAF" and (spatial is None or not model.has_2d):
        raise ValueError("DDCP_SAF needs spatial maps and a model trained with them")
    params = clique_params_of(model)
    bd = distance_transform(mask)
    paths = select_all_cliques(mask, vol, bd, params)
    F = path_features(paths.offsets, paths.voxels, vol, bd)
    proj = model.project(F)
    if config.method == "DDCP":
        wa = wv = np.maximum(model.table1d(proj), 0.0)
    else:
        av = av_measures(paths.offsets, paths.voxels, spatial)
        a, v = model.tables2d(proj, av)
        wa, wv = np.maximum(a, 0.0), np.maximum(v, 0.0)
    return [Clique(p, wa[i], wv[i], config.N) for i, p in enumerate(paths)
            if wa[i] > 0 or wv[i] > 0]


def clique_params_of(model: LikelihoodModel) -> CliqueParams:
    p = model.params
    return CliqueParams(S=int(p.get("S", 15)), alpha_path=float(p.get("alpha_path", 5.0)),
                        beta_path=float(p.get("beta_path", 0.5)))


def separate_av(vol: Volume, roots, mask: Volume, config: MethodConfig,
                model: LikelihoodModel | None = None, spatial: SpatialMaps | None = None
                ) -> SeparationResult:
    """Label the vessel voxels of ``mask`` as artery or vein."""
    if not vol.is_isotropic:
        raise ValueError("resample the volume to isotropic spacing first")
    timing = {}
    t0 = time.perf_counter()
    cliques = build_cliques(vol, mask, config, model, spatial)
    t1 = time.perf_counter()
    timing["cliques"] = t1 - t0
    plate = plateness(vol)
    eg = assemble(mask, vol, plate, roots, cliques, config.energy)
    t2 = time.perf_counter()
    timing["assembly"] = t2 - t1
    x, energy = eg.solve()
    timing["solve"] = time.perf_counter() - t2
    return SeparationResult(to_label_volume(eg, x, vol.spacing), energy, len(cliques), timing)


def separate_scene(scene: PhantomScene, config: MethodConfig, model=None, gt_mask: bool = True,
                   extract: ExtractParams = ExtractParams()) -> SeparationResult:
    mask = scene.vessel_mask if gt_mask else extract_vessels(scene.intensity, scene.roots, extract)
    return separate_av(scene.intensity, scene.roots, mask, config, model, scene.spatial)


# ----------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    scene: str
    method: str
    N: int
    vol_pa: float
    vol_pv: float
    vol_both: float
    len_pa: float
    len_pv: float
    len_both: float
    miss_pa: float
    miss_pv: float
    seconds: float = 0.0

    def row(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = f"{v:.1f}" if isinstance(v, float) and f.name != "seconds" else (
                f"{v:.3f}" if f.name == "seconds" else v)
        return out


CSV_COLUMNS = [f.name for f in fields(EvalReport)]


def _pct(num, den) -> float:
    return 100.0 * num / den if den else 100.0


def evaluate(result: Volume, scene: PhantomScene, name: str = "", method: str = "", N: int = 0,
             seconds: float = 0.0) -> EvalReport:
    """Volume-, length- and miss-rates of a labelling against the scene's ground truth."""
    if result.dims != scene.labels.dims:
        raise ValueError("result and scene dimensions differ")
    gt = scene.labels.data
    r = result.data
    ga, gv = gt == ARTERY_LABEL, gt == VEIN_LABEL
    ok_a = int((ga & (r == ARTERY_LABEL)).sum())
    ok_v = int((gv & (r == VEIN_LABEL)).sum())
    na, nv = int(ga.sum()), int(gv.sum())
    hits = sample_centerline_labels(scene, result)
    la = int((hits["artery"] == ARTERY_LABEL).sum())
    lv = int((hits["vein"] == VEIN_LABEL).sum())
    ka, kv = hits["artery"].size, hits["vein"].size
    return EvalReport(
        scene=name, method=method, N=int(N),
        vol_pa=_pct(ok_a, na), vol_pv=_pct(ok_v, nv), vol_both=_pct(ok_a + ok_v, na + nv),
        len_pa=_pct(la, ka), len_pv=_pct(lv, kv), len_both=_pct(la + lv, ka + kv),
        miss_pa=_pct(int((ga & (r == BACKGROUND_LABEL)).sum()), na) if na else 0.0,
        miss_pv=_pct(int((gv & (r == BACKGROUND_LABEL)).sum()), nv) if nv else 0.0,
        seconds=float(seconds))


def write_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for rep in reports:
            w.writerow(rep.row())


# -------------------------------------------------------------- training

def _scene_paths(scene: PhantomScene, params: CliqueParams, stride: int = 1):
    mask = scene.vessel_mask
    bd = distance_transform(mask)
    centers = np.flatnonzero(mask.flat())[::stride]
    return select_all_cliques(mask, scene.intensity, bd, params, centers=centers), bd


def same_fraction(scenes, params: CliqueParams, stride: int = 1) -> float:
    """Fraction of selected paths lying entirely in one ground-truth vessel."""
    same = total = 0
    for sc in scenes:
        paths, _ = _scene_paths(sc, params, stride)
        cls = label_paths(paths.offsets, paths.voxels, sc.labels)
        same += int((cls != MIXED).sum())
        total += cls.size
    return same / total if total else 0.0


def train(scenes, saf: bool = True, bins: int = 64, bins2d=(32, 32), S: int = 15,
          grid=(ALPHA_GRID, BETA_GRID), grid_stride: int = 4) -> LikelihoodModel:
    """Fit path-selection constants, LDA and likelihood tables on ground-truth scenes.

    The path-cost constants are grid-searched for the largest fraction of
    all-same paths, using every ``grid_stride``-th vessel voxel as a centre.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("training needs at least one scene")
    scores = []
    for a, b in itertools.product(*grid):
        scores.append((same_fraction(scenes, CliqueParams(S, a, b), grid_stride), a, b))
    best = max(scores, key=lambda s: s[0])   # first maximum in grid order
    params = CliqueParams(S, best[1], best[2])

    F, cls, av = [], [], []
    for sc in scenes:
        paths, bd = _scene_paths(sc, params)
        F.append(path_features(paths.offsets, paths.voxels, sc.intensity, bd))
        cls.append(label_paths(paths.offsets, paths.voxels, sc.labels))
        if saf:
            av.append(av_measures(paths.offsets, paths.voxels, sc.spatial))
    F = np.vstack(F)
    cls = np.concatenate(cls)
    same = cls != MIXED
    w, offset = fit_lda(F, same)
    proj = F @ w - offset
    edges, logratio = fit_likelihood(proj, same, bins)
    model = LikelihoodModel(w, offset, edges, logratio, params={
        "S": S, "alpha_path": best[1], "beta_path": best[2], "bins": bins,
        "smoothing": 1.0, "n_same": int(same.sum()), "n_mixed": int((~same).sum()),
        "grid": [[a, b, s] for s, a, b in scores],
    })
    if saf:
        xe, ye, art, vein = fit_likelihood_2d(proj, np.concatenate(av), cls, bins2d)
        model = replace(model, xedges=xe, yedges=ye, arteryness=art, veinness=vein)
        model.params["bins2d"] = list(bins2d)
    return model
