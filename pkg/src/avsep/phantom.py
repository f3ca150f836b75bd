"""Synthetic artery/vein scenes with exact ground truth.

Geometry is built in voxel coordinates and stored in mm.  Two tubes (artery
and vein) are rasterised from polylines; where they overlap each voxel goes
to the nearer centerline, ties to the artery.  An airway tube runs alongside
the artery and an interlobar sheet hangs beside the vein; only their
distance maps are kept.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .energy import ARTERY_LABEL, BACKGROUND_LABEL, VEIN_LABEL
from .learn import SpatialMaps
from .volume import Volume, distance_transform, read_rvol, write_rvol

PRESETS = ("straight-contact", "helix-pair", "h-cross", "one-voxel-contact", "bend-contact", "pinch")


@dataclass(frozen=True)
class PhantomSpec:
    preset: str = "straight-contact"
    dims: tuple = (96, 96, 96)
    spacing: float = 0.75
    radius: float = 3.0                 # voxels
    vein_radius: float | None = None    # defaults to ``radius``
    contact_len: float = 40.0           # voxels
    vessel_hu: float = 100.0
    background_hu: float = -800.0
    contrast: float = 0.0               # artery minus vein, HU
    noise: float = 20.0
    airway_radius: float = 2.0
    airway_offset: float = 10.0         # voxels, along +z from the artery
    sheet_offset: float = 10.0          # voxels, along -z from the vein
    sheet_depth: float = 20.0
    control_points: dict | None = None  # {"artery": [[x,y,z(,r)],...], "vein": ...} in voxels

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.control_points is None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.radius < 1 or (self.vein_radius is not None and self.vein_radius < 1):
            raise ValueError("tube radii must be at least 1 voxel")
        if self.contact_len < 0:
            raise ValueError("contact length must be non-negative")
        if self.vessel_hu <= self.background_hu:
            raise ValueError("vessel intensity must exceed background intensity")
        if self.noise < 0 or self.spacing <= 0:
            raise ValueError("noise must be >= 0 and spacing > 0")

    @property
    def r_artery(self) -> float:
        return float(self.radius)

    @property
    def r_vein(self) -> float:
        return float(self.radius if self.vein_radius is None else self.vein_radius)


@dataclass
class PhantomScene:
    spec: PhantomSpec
    seed: int
    intensity: Volume
    labels: Volume
    centerlines: dict              # name -> (k, 3) mm points at 1-voxel arc spacing
    spatial: SpatialMaps
    landmarks: dict = field(default_factory=dict)   # name -> mm point

    @property
    def roots(self):
        return (self.centerlines["artery"][0].copy(), self.centerlines["vein"][0].copy())

    @property
    def vessel_mask(self) -> Volume:
        return self.labels.with_data((self.labels.data != BACKGROUND_LABEL).astype(np.uint8))


# ---------------------------------------------------------------- geometry

def resample_polyline(points, step: float = 1.0) -> np.ndarray:
    """Points at arc-length multiples of ``step`` from the first point.

    Columns beyond the first three are carried along by linear interpolation.
    """
    p = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(p[:, :3], axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.arange(0.0, s[-1] + 1e-9, step)
    return np.stack([np.interp(t, s, p[:, k]) for k in range(p.shape[1])], axis=1)


def _helix(x0, x1, center, radius, phase, pitch, step=0.5):
    x = np.arange(x0, x1 + 1e-9, step)
    th = phase + 2 * np.pi * (x - x0) / pitch
    return np.stack([x, center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)


def _preset_lines(spec: PhantomSpec):
    """Artery and vein control polylines (voxel coordinates) for a preset."""
    nx, ny, nz = spec.dims
    c = nz / 2.0
    ra, rv = spec.r_artery, spec.r_vein
    gap = ra + rv
    lo, hi = 4.0, nx - 5.0

    if spec.preset in ("straight-contact", "one-voxel-contact", "helix-pair"):
        return _return_lines(spec)

    if spec.preset == "h-cross":
        m = nx / 2.0
        artery = [(lo, ny / 2.0, c - ra), (hi, ny / 2.0, c - ra)]
        vein = [(m, lo, c + rv), (m, ny - 5.0, c + rv)]
        return artery, vein

    if spec.preset == "bend-contact":
        # corners half a tube width apart: the two outer arms read as one
        # straight vessel, the artery on the left and the vein on the right
        m = nx / 2.0
        y_arm = ny / 2.0
        h = gap / 4.0
        artery = [(m - h, lo, c), (m - h, y_arm, c), (lo, y_arm, c)]
        vein = [(m + h, ny - 5.0, c), (m + h, y_arm, c), (hi, y_arm, c)]
        return artery, vein

    if spec.preset == "pinch":
        return _pinch_lines(spec)

    raise ValueError(f"unknown preset {spec.preset!r}")


def _return_lines(spec: PhantomSpec):
    """Artery straight along x; the vein leaves its root parallel to the artery,
    turns at the far side of the volume and runs back against the artery
    towards the artery root over ``contact_len`` voxels.

    The contact stretch is straight, or a twisted pair for ``helix-pair``.
    With no contact the vein turns back short of the artery.
    """
    nx, ny, nz = spec.dims
    s = np.array(spec.dims, dtype=np.float64) / 96.0
    c = nz / 2.0
    ra, rv = spec.r_artery, spec.r_vein
    gap = ra + rv
    lo, hi = 4.0, nx - 5.0
    ya, yv = 30.0 * s[1], 80.0 * s[1]
    x_turn = hi - 11.0 * s[0]
    x_end = max(x_turn - spec.contact_len, 28.0 * s[0])
    y_back = ya + gap if spec.contact_len > 0 else ya + gap + 8.0
    # a thin vein lifted one voxel meets the artery along a two-voxel seam
    # instead of a full face of its 3x3 cross-section
    zv = c + 1.0 if spec.preset == "one-voxel-contact" else c
    if zv != c:
        y_back = ya + np.sqrt(gap * gap - 1.0) + 1e-6 if spec.contact_len > 0 else y_back
    loop = [(lo, yv, zv), (x_turn, yv, zv), (hi - 1.0, yv - 10.0 * s[1], zv),
            (hi - 1.0, y_back + 10.0 * s[1], zv), (x_turn, y_back, zv)]
    if spec.preset != "helix-pair" or spec.contact_len == 0:
        artery = [(lo, ya, c), (hi, ya, c)]
        return artery, loop + [(x_end, y_back, zv)]
    axis, R = _helix_axis(spec)
    pitch = 50.0 * s[0]
    ha = _helix(x_end, x_turn, axis, R, np.pi, pitch)
    hv = _helix(x_end, x_turn, axis, R, 0.0, pitch)
    artery = np.vstack([[(lo, ya, c)], ha, [(hi, ya, c)]])
    vein = np.vstack([loop[:-1], hv[::-1]])
    return artery, vein


def _helix_axis(spec: PhantomSpec):
    """Twist axis (y, z) and radius of the ``helix-pair`` contact stretch."""
    gap = spec.r_artery + spec.r_vein
    return (30.0 * spec.dims[1] / 96.0 + gap / 2.0, spec.dims[2] / 2.0), gap / 2.0


def _pinch_lines(spec: PhantomSpec):
    """A vein that narrows to a one-voxel thread where it passes the artery root.

    The thread runs along y and grazes the sphere of radius ``PINCH_SEED_MM``
    around the artery root so that exactly two of its voxels fall inside it;
    with root-distance seeding those two voxels are pinned to the artery while
    the rest of the vein, including the branch beyond the thread, is free.
    The vein passes above the artery without touching it.
    """
    nx, ny, nz = spec.dims
    root, x0, z0 = _pinch_frame(spec)
    rv = spec.r_vein
    thin, ramp = PINCH_THREAD, 6.0
    yc = root[1]
    artery = [tuple(root), (nx - 5.0, root[1], root[2])]
    ys = [ny - 5.0, yc + thin + ramp, yc + thin, yc - thin, yc - thin - ramp, 4.0]
    rs = [rv, rv, 0.5, 0.5, rv, rv]
    vein = [(x0, y, z0, r) for y, r in zip(ys, rs)]
    return artery, vein


PINCH_SEED_MM = 11.0
PINCH_THREAD = 8.0   # half-length of the one-voxel thread, voxels


def _pinch_frame(spec: PhantomSpec):
    """Artery root and the (x, z) of the vein thread for the pinch preset.

    The root sits half a voxel off the grid in y and z so that the thread's
    grid voxels straddle the closest approach in pairs; ``(a, k)`` are picked
    so that only the middle pair lies within the seed sphere, with the widest
    margin available.
    """
    t2 = (PINCH_SEED_MM / spec.spacing) ** 2
    c = spec.dims[2] / 2.0
    root = np.array([4.0, np.floor(spec.dims[1] / 2.0) + 0.5, np.floor(c) + 0.5])
    lift = spec.r_artery + spec.r_vein + 2.0
    best = None
    for a in range(0, 16):
        for k in range(int(lift), 20):
            v = a * a + (k + 0.5) ** 2
            margin = min(v - (t2 - 2.25), (t2 - 0.25) - v)
            if margin > 0 and (best is None or margin > best[0]):
                best = (margin, a, k)
    if best is None:
        raise ValueError("no grid placement gives a two-voxel pinch at this spacing")
    _, a, k = best
    return root, root[0] + a, root[2] + k + 0.5


def _with_radius(points, r):
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] not in (3, 4):
        raise ValueError("a centerline needs at least two [x, y, z] or [x, y, z, r] points")
    if p.shape[1] == 3:
        p = np.hstack([p, np.full((len(p), 1), r)])
    if (p[:, 3] <= 0).any():
        raise ValueError("tube radii must be positive")
    return p


def scene_lines(spec: PhantomSpec):
    """Artery and vein polylines as ``(k, 4)`` arrays of x, y, z, radius (voxels)."""
    if spec.control_points is not None:
        a, v = spec.control_points["artery"], spec.control_points["vein"]
    else:
        a, v = _preset_lines(spec)
    return _with_radius(a, spec.r_artery), _with_radius(v, spec.r_vein)


def side_directions(spec: PhantomSpec, artery, vein):
    """Unit vectors pointing from each centerline point towards the airway
    (artery) and the interlobar sheet (vein).

    By default the airway lies above the artery (+z) and the sheet below the
    vein (-z); ``h-cross`` and ``pinch`` flip both since their vein passes above
    the artery.  On the twisted stretch of ``helix-pair`` both point radially
    away from the twist axis, keeping each on its own vessel's far side.
    """
    up = np.array([0.0, 0.0, 1.0])
    if spec.preset in ("h-cross", "pinch"):
        up = -up   # the vein passes above the artery
    a_dir = np.tile(up, (len(artery), 1))
    v_dir = np.tile(-up, (len(vein), 1))
    if spec.preset == "helix-pair" and spec.control_points is None and spec.contact_len > 0:
        axis, R = _helix_axis(spec)
        for line, out in ((artery, a_dir), (vein, v_dir)):
            rad = line[:, 1:] - np.asarray(axis)
            on = np.abs(np.linalg.norm(rad, axis=1) - R) < 1e-6
            out[on, 0] = 0.0
            out[on, 1:] = rad[on] / R
    return a_dir, v_dir


# ------------------------------------------------------------ rasterising

def tube_distance(line, dims):
    """Distance to the centerline and inside-tube flag for a variable-radius tube.

    ``line`` rows are x, y, z, radius; the radius is interpolated along each
    segment at the closest point.
    """
    p = np.asarray(line, dtype=np.float64)
    dist = np.full(dims, np.inf)
    inside = np.zeros(dims, dtype=bool)
    hi_lim = np.array(dims) - 1
    for a4, b4 in zip(p[:-1], p[1:]):
        a, b = a4[:3], b4[:3]
        reach = max(a4[3], b4[3]) + 1
        lo = np.maximum(np.floor(np.minimum(a, b) - reach), 0).astype(int)
        hi = np.minimum(np.ceil(np.maximum(a, b) + reach), hi_lim).astype(int)
        if (hi < lo).any():
            continue
        gx, gy, gz = np.meshgrid(*(np.arange(lo[k], hi[k] + 1) for k in range(3)), indexing="ij")
        q = np.stack([gx, gy, gz], axis=-1).astype(np.float64)
        ab = b - a
        den = ab @ ab
        t = np.zeros(gx.shape) if den == 0 else np.clip(((q - a) @ ab) / den, 0.0, 1.0)
        d = np.linalg.norm(q - a - t[..., None] * ab, axis=-1)
        r = a4[3] + t * (b4[3] - a4[3])
        box = (slice(lo[0], hi[0] + 1), slice(lo[1], hi[1] + 1), slice(lo[2], hi[2] + 1))
        np.minimum(dist[box], d, out=dist[box])
        inside[box] |= d <= r
    return dist, inside


def _check_inside(line, dims, name):
    p, radius = line[:, :3], line[:, 3:]
    if (p - radius < 0).any() or (p + radius > np.array(dims) - 1).any():
        raise ValueError(f"{name} tube leaves the volume")


def _sheet_mask(points, directions, dims, offset, depth):
    """Voxels swept by a polyline pushed out along per-point unit ``directions``
    from ``offset`` to ``offset + depth``."""
    both = resample_polyline(np.hstack([points, directions]), 0.5)
    line, d = both[:, :3], both[:, 3:]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    mask = np.zeros(dims, dtype=bool)
    for t in np.arange(offset, offset + depth + 1e-9, 0.5):
        q = np.rint(line + t * d).astype(int)
        ok = ((q >= 0) & (q < np.array(dims))).all(axis=1)
        mask[q[ok, 0], q[ok, 1], q[ok, 2]] = True
    return mask


def generate(spec: PhantomSpec, seed: int = 0) -> PhantomScene:
    """Deterministic scene for ``(spec, seed)``."""
    dims = spec.dims
    artery4, vein4 = scene_lines(spec)
    _check_inside(artery4, dims, "artery")
    _check_inside(vein4, dims, "vein")
    artery, vein = artery4[:, :3], vein4[:, :3]

    da, in_a = tube_distance(artery4, dims)
    dv, in_v = tube_distance(vein4, dims)
    is_a = in_a & (~in_v | (da <= dv))
    is_v = in_v & ~is_a
    labels = np.zeros(dims, dtype=np.uint8)
    labels[is_a] = ARTERY_LABEL
    labels[is_v] = VEIN_LABEL

    rng = np.random.default_rng(seed)
    img = np.full(dims, spec.background_hu, dtype=np.float64)
    img[is_a] = spec.vessel_hu + spec.contrast / 2
    img[is_v] = spec.vessel_hu - spec.contrast / 2
    if spec.noise > 0:
        img += rng.normal(0.0, spec.noise, dims)
    sp = (spec.spacing,) * 3

    a_dir, v_dir = side_directions(spec, artery, vein)
    _, airway_mask = tube_distance(_with_radius(artery + spec.airway_offset * a_dir, spec.airway_radius), dims)
    sheet = _sheet_mask(vein, v_dir, dims, spec.sheet_offset, spec.sheet_depth)
    spatial = SpatialMaps(distance_transform(Volume((~airway_mask).astype(np.uint8), sp)),
                          distance_transform(Volume((~sheet).astype(np.uint8), sp)))

    lines = {"artery": resample_polyline(artery) * spec.spacing,
             "vein": resample_polyline(vein) * spec.spacing}
    return PhantomScene(spec, int(seed), Volume(img.astype(np.float32), sp), Volume(labels, sp),
                        lines, spatial, _landmarks(spec))


def _landmarks(spec: PhantomSpec) -> dict:
    if spec.preset != "pinch" or spec.control_points is not None:
        return {}
    root, x0, z0 = _pinch_frame(spec)
    mm = lambda *p: [float(v * spec.spacing) for v in p]
    return {"pinch": mm(x0, root[1], z0), "branch_start": mm(x0, root[1] - PINCH_THREAD, z0)}


def branch_beyond(scene: PhantomScene, vessel: str, landmark: str) -> np.ndarray:
    """Indices of ``vessel`` centerline points from the one nearest ``landmark`` onwards."""
    pts = scene.centerlines[vessel]
    i = int(np.argmin(np.linalg.norm(pts - np.asarray(scene.landmarks[landmark]), axis=1)))
    return np.arange(i, len(pts))


def preset_spec(name: str, **overrides) -> PhantomSpec:
    """Spec for a named preset; ``one-voxel-contact`` defaults to radius 1.5."""
    base = PhantomSpec(preset=name)
    if name == "one-voxel-contact":
        base = replace(base, radius=1.5)
    return replace(base, **overrides)


# ---------------------------------------------------------- ground truth

def sample_centerline_labels(scene: PhantomScene, result: Volume) -> dict:
    """Result label at the voxel containing each centerline point, per vessel."""
    if result.dims != scene.labels.dims:
        raise ValueError("result and scene dimensions differ")
    out = {}
    for name, pts in scene.centerlines.items():
        idx = np.floor(pts / np.asarray(scene.labels.spacing) + 0.5).astype(int)
        idx = np.clip(idx, 0, np.array(result.dims) - 1)
        out[name] = result.data[idx[:, 0], idx[:, 1], idx[:, 2]].copy()
    return out


# ------------------------------------------------------------ persistence

def _spec_to_json(spec: PhantomSpec) -> dict:
    d = asdict(spec)
    d["dims"] = list(spec.dims)
    return d


def save_scene(scene: PhantomScene, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_rvol(d / "intensity.rvol", scene.intensity)
    write_rvol(d / "labels.rvol", scene.labels)
    write_rvol(d / "airway_dist.rvol", scene.spatial.airway_dist)
    write_rvol(d / "interlobar_dist.rvol", scene.spatial.interlobar_dist)
    lines = {k: v.tolist() for k, v in scene.centerlines.items()}
    (d / "centerlines.json").write_text(json.dumps(lines, indent=1) + "\n")
    pa, pv = scene.roots
    meta = {"roots": {"artery": pa.tolist(), "vein": pv.tolist()},
            "spec": _spec_to_json(scene.spec), "seed": scene.seed, "landmarks": scene.landmarks}
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_scene(directory) -> PhantomScene:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"scene directory {d} does not exist")
    meta = json.loads((d / "meta.json").read_text())
    spec = PhantomSpec(**meta["spec"])
    lines = {k: np.asarray(v, dtype=np.float64)
             for k, v in json.loads((d / "centerlines.json").read_text()).items()}
    spatial = SpatialMaps(read_rvol(d / "airway_dist.rvol"), read_rvol(d / "interlobar_dist.rvol"))
    return PhantomScene(spec, int(meta["seed"]), read_rvol(d / "intensity.rvol"),
                        read_rvol(d / "labels.rvol"), lines, spatial, meta.get("landmarks", {}))
