"""Path features, the airway/interlobar arrangement measure, and the
LDA + histogram likelihood models that turn a path into term weights."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .volume import Volume

N_FEATURES = 7
MODEL_VERSION = 1

# clique classes against a ground-truth labelling
MIXED = 0
ALL_ARTERY = 1
ALL_VEIN = 2


# ----------------------------------------------------------------- features

def _segments(offsets, drop):
    """Start offsets of per-path segments after dropping ``drop`` items per path."""
    k = np.arange(offsets.size)
    return offsets - drop * k


def path_features(offsets, voxels, vol: Volume, boundary_dist: Volume) -> np.ndarray:
    """Feature matrix ``(n_paths, 7)`` for concatenated paths.

    Columns: length ratio, total turning angle, max turning angle, max
    intensity second difference, population std of intensity steps, mean
    absolute boundary-distance step, boundary-distance range.  Positions are
    in mm; boundary distances in voxels.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    voxels = np.asarray(voxels, dtype=np.int64)
    n = offsets.size - 1
    lengths = np.diff(offsets)
    if n and lengths.min() < 3:
        raise ValueError("paths need at least 3 voxels")
    out = np.zeros((n, N_FEATURES))
    if n == 0:
        return out
    pid = np.repeat(np.arange(n), lengths)
    pos = vol.positions_mm(voxels)
    v = vol.flat().astype(np.float64)[voxels]
    d = boundary_dist.flat().astype(np.float64)[voxels]

    step_ok = pid[1:] == pid[:-1]
    sp = pid[:-1][step_ok]
    dp = (pos[1:] - pos[:-1])[step_ok]
    dv = (v[1:] - v[:-1])[step_ok]
    dd = (d[1:] - d[:-1])[step_ok]

    seglen = np.linalg.norm(dp, axis=1)
    chord = np.linalg.norm(pos[offsets[1:] - 1] - pos[offsets[:-1]], axis=1)
    chord = np.maximum(chord, min(vol.spacing))
    out[:, 0] = np.maximum(np.bincount(sp, seglen, n) / chord, 1.0)

    turn_ok = sp[1:] == sp[:-1]
    u, w = dp[:-1][turn_ok], dp[1:][turn_ok]
    ang = np.arctan2(np.linalg.norm(np.cross(u, w), axis=1), (u * w).sum(axis=1))
    t_start = _segments(offsets, 2)[:-1]
    out[:, 1] = np.bincount(sp[1:][turn_ok], ang, n)
    out[:, 2] = np.maximum.reduceat(ang, t_start)

    sec = (dv[1:] - dv[:-1])[turn_ok]
    out[:, 3] = np.maximum.reduceat(sec, t_start)

    steps = lengths - 1
    mean_dv = np.bincount(sp, dv, n) / steps
    out[:, 4] = np.sqrt(np.bincount(sp, (dv - mean_dv[sp]) ** 2, n) / steps)

    out[:, 5] = np.bincount(sp, np.abs(dd), n) / steps
    out[:, 6] = np.maximum.reduceat(d, offsets[:-1]) - np.minimum.reduceat(d, offsets[:-1])
    return out


def clique_features(voxels, vol: Volume, boundary_dist: Volume) -> np.ndarray:
    """Features of a single path (see :func:`path_features`)."""
    voxels = np.asarray(voxels, dtype=np.int64)
    return path_features(np.array([0, voxels.size]), voxels, vol, boundary_dist)[0]


def label_paths(offsets, voxels, gt_labels: Volume) -> np.ndarray:
    """Class of each path against ground truth: MIXED, ALL_ARTERY or ALL_VEIN."""
    from .energy import ARTERY_LABEL, VEIN_LABEL
    offsets = np.asarray(offsets, dtype=np.int64)
    lab = gt_labels.flat()[np.asarray(voxels, dtype=np.int64)]
    n = offsets.size - 1
    if n == 0:
        return np.zeros(0, dtype=np.int8)
    starts = offsets[:-1]
    lo = np.minimum.reduceat(lab, starts)
    hi = np.maximum.reduceat(lab, starts)
    cls = np.full(n, MIXED, dtype=np.int8)
    same = lo == hi
    cls[same & (lo == ARTERY_LABEL)] = ALL_ARTERY
    cls[same & (lo == VEIN_LABEL)] = ALL_VEIN
    return cls


# ------------------------------------------------------ spatial arrangement

@dataclass
class SpatialMaps:
    airway_dist: Volume
    interlobar_dist: Volume
    sigma_b: float = field(init=False)
    sigma_v: float = field(init=False)

    def __post_init__(self):
        for name, m in (("airway", self.airway_dist), ("interlobar", self.interlobar_dist)):
            if (m.data < 0).any():
                raise ValueError(f"{name} distances must be non-negative")
        self.sigma_b = float(np.std(self.airway_dist.data, dtype=np.float64))
        self.sigma_v = float(np.std(self.interlobar_dist.data, dtype=np.float64))
        if self.sigma_b == 0 or self.sigma_v == 0:
            raise ValueError("distance maps must not be constant")


def av_measure_from(db: float, dv: float) -> float:
    """``arctan(db / dv)`` in [0, pi/2], with ``dv == 0`` mapping to pi/2."""
    if dv == 0:
        return float(np.pi / 2)
    return float(np.arctan(db / dv))


def av_measures(offsets, voxels, spatial: SpatialMaps) -> np.ndarray:
    """Arrangement measure of each concatenated path."""
    offsets = np.asarray(offsets, dtype=np.int64)
    voxels = np.asarray(voxels, dtype=np.int64)
    n = offsets.size - 1
    if n == 0:
        return np.zeros(0)
    lengths = np.diff(offsets)
    starts = offsets[:-1]
    db = np.add.reduceat(spatial.airway_dist.flat().astype(np.float64)[voxels], starts) / lengths / spatial.sigma_b
    dv = np.add.reduceat(spatial.interlobar_dist.flat().astype(np.float64)[voxels], starts) / lengths / spatial.sigma_v
    out = np.full(n, np.pi / 2)
    pos = dv > 0
    out[pos] = np.arctan(db[pos] / dv[pos])
    return out


def av_measure(voxels, spatial: SpatialMaps) -> float:
    voxels = np.asarray(voxels, dtype=np.int64)
    return float(av_measures(np.array([0, voxels.size]), voxels, spatial)[0])


# --------------------------------------------------------------------- LDA

def fisher_criterion(w, X, same) -> float:
    """Between-class over within-class spread of the projection onto ``w``."""
    X = np.asarray(X, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    w = np.asarray(w, dtype=np.float64)
    p1, p0 = X[same] @ w, X[~same] @ w
    within = ((p1 - p1.mean()) ** 2).sum() + ((p0 - p0.mean()) ** 2).sum()
    between = (p1.mean() - p0.mean()) ** 2
    return float(between / within) if within > 0 else float("inf")


def fit_lda(X, same):
    """Two-class Fisher direction ``(w, offset)``; ``same`` marks all-same paths.

    Features are standardised before the within-class scatter is inverted
    (with a ridge of 1e-6 of its trace), then mapped back, so the direction
    is the usual Fisher one up to the ridge.  ``||w|| = 1`` and the all-same
    class projects below ``offset``.
    """
    X = np.asarray(X, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if same.sum() < 2 or (~same).sum() < 2:
        raise ValueError("LDA needs at least two samples of each class")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    m1, m0 = Z[same].mean(axis=0), Z[~same].mean(axis=0)
    r1, r0 = Z[same] - m1, Z[~same] - m0
    sw = r1.T @ r1 + r0.T @ r0
    ridge = 1e-6 * np.trace(sw) if np.trace(sw) > 0 else 1e-6
    wz = np.linalg.solve(sw + ridge * np.eye(X.shape[1]), m1 - m0)
    w = wz / sd
    norm = np.linalg.norm(w)
    if norm == 0:
        raise ValueError("classes have identical means")
    w /= norm
    c1, c0 = X[same].mean(axis=0) @ w, X[~same].mean(axis=0) @ w
    if c1 > c0:
        w, c1, c0 = -w, -c1, -c0
    return w, float((c1 + c0) / 2)


# -------------------------------------------------------------- histograms

def _edges(values, nbins):
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, nbins + 1)


def _bin(edges, x):
    return np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 2)


def _log_ratio(num_counts, den_counts, eps=1.0):
    k = num_counts.size
    p_num = (num_counts + eps) / (num_counts.sum() + eps * k)
    p_den = (den_counts + eps) / (den_counts.sum() + eps * k)
    return np.log(p_num / p_den)


def fit_likelihood(proj, same, nbins: int = 64):
    """1-D table ``(edges, log(P(proj|all same) / P(proj|not all same)))``."""
    proj = np.asarray(proj, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if same.all() or not same.any():
        raise ValueError("both classes need samples")
    edges = _edges(proj, nbins)
    b = _bin(edges, proj)
    c1 = np.bincount(b[same], minlength=nbins).astype(np.float64)
    c0 = np.bincount(b[~same], minlength=nbins).astype(np.float64)
    return edges, _log_ratio(c1, c0)


def fit_likelihood_2d(proj, av, classes, nbins=(32, 32)):
    """2-D tables over (projection, arrangement measure): artery-ness and vein-ness."""
    proj = np.asarray(proj, dtype=np.float64)
    av = np.asarray(av, dtype=np.float64)
    classes = np.asarray(classes)
    for c in (MIXED, ALL_ARTERY, ALL_VEIN):
        if not (classes == c).any():
            raise ValueError("every class needs samples")
    nx, ny = nbins
    xedges = _edges(proj, nx)
    yedges = np.linspace(0.0, np.pi / 2, ny + 1)
    cell = _bin(xedges, proj) * ny + _bin(yedges, av)

    def counts(c):
        return np.bincount(cell[classes == c], minlength=nx * ny).astype(np.float64)

    mixed = counts(MIXED)
    art = _log_ratio(counts(ALL_ARTERY), mixed).reshape(nx, ny)
    vein = _log_ratio(counts(ALL_VEIN), mixed).reshape(nx, ny)
    return xedges, yedges, art, vein


# ------------------------------------------------------------------- model

@dataclass
class LikelihoodModel:
    w: np.ndarray
    offset: float
    edges: np.ndarray
    logratio: np.ndarray
    xedges: np.ndarray | None = None
    yedges: np.ndarray | None = None
    arteryness: np.ndarray | None = None
    veinness: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def has_2d(self) -> bool:
        return self.arteryness is not None

    def project(self, F) -> np.ndarray:
        return np.asarray(F, dtype=np.float64) @ self.w - self.offset

    def table1d(self, proj) -> np.ndarray:
        return self.logratio[_bin(self.edges, proj)]

    def tables2d(self, proj, av):
        if not self.has_2d:
            raise ValueError("model has no arrangement tables; train with spatial maps")
        i = _bin(self.xedges, proj)
        j = _bin(self.yedges, av)
        return self.arteryness[i, j], self.veinness[i, j]

    def to_dict(self) -> dict:
        d = {
            "version": MODEL_VERSION,
            "lda": {"w": self.w.tolist(), "offset": float(self.offset)},
            "hist1d": {"edges": self.edges.tolist(), "logratio": self.logratio.tolist()},
            "hist2d": None,
            "params": self.params,
        }
        if self.has_2d:
            d["hist2d"] = {"xedges": self.xedges.tolist(), "yedges": self.yedges.tolist(),
                           "arteryness": self.arteryness.tolist(), "veinness": self.veinness.tolist()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        h2 = d.get("hist2d")
        arr = lambda key: None if h2 is None else np.asarray(h2[key], dtype=np.float64)
        return cls(np.asarray(d["lda"]["w"], dtype=np.float64), float(d["lda"]["offset"]),
                   np.asarray(d["hist1d"]["edges"], dtype=np.float64),
                   np.asarray(d["hist1d"]["logratio"], dtype=np.float64),
                   arr("xedges"), arr("yedges"), arr("arteryness"), arr("veinness"),
                   dict(d.get("params", {})))

    @classmethod
    def from_json(cls, text: str) -> "LikelihoodModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "LikelihoodModel":
        with open(path) as fh:
            text = fh.read()
        try:
            return cls.from_json(text)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}: not a model file ({exc!r})") from None


def weights_for(F, model: LikelihoodModel, av=None):
    """Clipped term weights ``(w_artery, w_vein)`` for feature rows ``F``.

    Without ``av`` both weights come from the 1-D table; with it they come
    from the artery-ness and vein-ness tables.  Negative log-ratios clip to 0.
    """
    F = np.asarray(F, dtype=np.float64)
    single = F.ndim == 1
    proj = model.project(np.atleast_2d(F))
    if av is None:
        wa = wv = np.maximum(model.table1d(proj), 0.0)
    else:
        a, v = model.tables2d(proj, np.atleast_1d(np.asarray(av, dtype=np.float64)))
        wa, wv = np.maximum(a, 0.0), np.maximum(v, 0.0)
    if single:
        return float(wa[0]), float(wv[0])
    return np.asarray(wa, dtype=np.float64), np.asarray(wv, dtype=np.float64)
