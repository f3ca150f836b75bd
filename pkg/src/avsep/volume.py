"""3D scalar volumes and the numeric kernels that operate on them.

A :class:`Volume` stores its samples as a ``(nx, ny, nz)`` array indexed
``[x, y, z]``.  Linear voxel indices follow x-fastest order, i.e.
``i = x + nx * (y + ny * z)``, which is also the byte order of the RVOL
container.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

RVOL_MAGIC = b"RVOL1\n"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_DTYPE_NAMES = {np.dtype("float32"): "f32", np.dtype("uint8"): "u8"}


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if data.dtype == np.bool_:
            data = data.astype(np.uint8)
        elif np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32, copy=False)
        elif data.dtype != np.uint8:
            raise ValueError(f"unsupported volume dtype {data.dtype}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        data = np.array(data, copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return tuple(int(n) for n in self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_isotropic(self) -> bool:
        s = self.spacing
        return abs(s[0] - s[1]) <= 1e-6 * s[0] and abs(s[0] - s[2]) <= 1e-6 * s[0]

    def flat(self) -> np.ndarray:
        """Samples in x-fastest linear order."""
        return self.data.ravel(order="F")

    def index(self, x, y, z):
        nx, ny, _ = self.dims
        return np.asarray(x) + nx * (np.asarray(y) + ny * np.asarray(z))

    def coords(self, index) -> np.ndarray:
        """Voxel coordinates ``(..., 3)`` of linear indices."""
        return np.stack(np.unravel_index(np.asarray(index), self.dims, order="F"), axis=-1)

    def positions_mm(self, index) -> np.ndarray:
        return self.coords(index) * np.asarray(self.spacing)

    def with_data(self, data) -> "Volume":
        return Volume(data, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.spacing == other.spacing and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))

    __hash__ = None


def from_flat(flat, dims, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Build a volume from x-fastest samples."""
    flat = np.asarray(flat)
    if flat.size != int(np.prod(dims)):
        raise ValueError(f"data length {flat.size} does not match dims {tuple(dims)}")
    return Volume(flat.reshape(tuple(dims), order="F"), spacing)


# ---------------------------------------------------------------- RVOL I/O

def rvol_bytes(vol: Volume) -> bytes:
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "dtype": _DTYPE_NAMES[vol.dtype],
        "order": "x-fastest",
    }
    payload = vol.flat().astype(_DTYPES[header["dtype"]], copy=False).tobytes()
    return RVOL_MAGIC + json.dumps(header).encode("ascii") + b"\n\x00" + payload


def parse_rvol(buf: bytes) -> Volume:
    if not buf.startswith(RVOL_MAGIC):
        raise ValueError("not an RVOL file (bad magic)")
    end = buf.find(b"\n", len(RVOL_MAGIC))
    if end < 0 or end + 1 >= len(buf) or buf[end + 1] != 0:
        raise ValueError("malformed RVOL header")
    header = json.loads(buf[len(RVOL_MAGIC):end].decode("ascii"))
    dtype_name = header.get("dtype")
    if dtype_name not in _DTYPES:
        raise ValueError(f"unknown RVOL dtype {dtype_name!r}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise ValueError(f"unsupported RVOL order {header.get('order')!r}")
    dims = [int(n) for n in header["dims"]]
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"bad RVOL dims {dims}")
    dtype = _DTYPES[dtype_name]
    payload = buf[end + 2:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"RVOL payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype=dtype)
    return from_flat(flat, dims, header["spacing"])


def write_rvol(path, vol: Volume) -> None:
    Path(path).write_bytes(rvol_bytes(vol))


def read_rvol(path) -> Volume:
    return parse_rvol(Path(path).read_bytes())


# ------------------------------------------------------------- resampling

def _axis_samples(n_in: int, s_in: float, t: float, order: int):
    n_out = max(1, math.ceil(n_in * s_in / t - 1e-9))
    pos = np.arange(n_out) * (t / s_in)
    pos = np.clip(pos, 0.0, n_in - 1)
    if order == 0:
        i0 = np.minimum(np.floor(pos + 0.5).astype(np.intp), n_in - 1)
        return i0, i0, np.zeros(n_out)
    i0 = np.minimum(np.floor(pos).astype(np.intp), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resample_isotropic(vol: Volume, target_mm: float, order: int = 1) -> Volume:
    """Resample onto an isotropic grid of ``target_mm`` spacing.

    Output sample ``i`` on each axis sits at physical offset ``i * target_mm``
    from the first input voxel centre; positions past the last input sample
    replicate the border.  ``order=1`` is trilinear (intensities), ``order=0``
    nearest-neighbour (label volumes).
    """
    if not target_mm > 0:
        raise ValueError("target spacing must be positive")
    if min(vol.dims) < 2:
        raise ValueError(f"cannot resample degenerate volume with dims {vol.dims}")
    out = vol.data.astype(np.float64)
    for axis in range(3):
        i0, i1, frac = _axis_samples(vol.dims[axis], vol.spacing[axis], target_mm, order)
        shape = [1, 1, 1]
        shape[axis] = -1
        frac = frac.reshape(shape)
        out = np.take(out, i0, axis=axis) * (1.0 - frac) + np.take(out, i1, axis=axis) * frac
    if vol.dtype == np.uint8:
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return Volume(out, (target_mm,) * 3)


# -------------------------------------------------------- Hessian analysis

def _gaussian_kernels(sigma: float):
    """Sampled Gaussian and its first two derivatives, truncated at 4 sigma.

    Each kernel is renormalised so that it is exact on polynomials up to
    degree two: the smoothing kernel sums to one, the second-derivative kernel
    sums to zero.  Plain sampling leaves a large DC term at small sigma.
    """
    r = max(1, int(4.0 * sigma + 0.5))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g0 = np.exp(-x * x / (2.0 * sigma * sigma))
    g0 /= g0.sum()
    g1 = -x * g0
    g1 /= -(g1 * x).sum()          # convolution with x yields 1
    g2 = (x * x - sigma * sigma) * g0
    g2 -= g0 * g2.sum()
    g2 /= (g2 * x * x).sum() / 2.0  # convolution with x^2/2 yields 1
    return g0, g1, g2


def hessian(vol: Volume, sigma_vox: float):
    """Gaussian-smoothed second derivatives in HU/mm^2.

    Returns the six upper-triangular components ``(xx, yy, zz, xy, xz, yz)``.
    """
    if not vol.is_isotropic:
        raise ValueError("Hessian requires an isotropic volume; resample first")
    if not 0.3 <= sigma_vox <= 8:
        raise ValueError(f"sigma {sigma_vox} outside [0.3, 8] voxels")
    img = vol.data.astype(np.float64)
    kernels = _gaussian_kernels(sigma_vox)
    h2 = vol.spacing[0] ** 2
    orders = [(2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1)]
    out = []
    for o in orders:
        d = img
        for axis, k in enumerate(o):
            d = ndi.convolve1d(d, kernels[k], axis=axis, mode="mirror")
        out.append(d / h2)
    return tuple(out)


def eigvals_sym3(a11, a22, a33, a12, a13, a23) -> np.ndarray:
    """Closed-form eigenvalues of symmetric 3x3 matrices, sorted by |lambda|.

    Inputs broadcast elementwise; the result has a trailing axis of length 3.
    """
    a11, a22, a33, a12, a13, a23 = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (a11, a22, a33, a12, a13, a23)))
    q = (a11 + a22 + a33) / 3.0
    b11, b22, b33 = a11 - q, a22 - q, a33 - q
    p1 = a12 * a12 + a13 * a13 + a23 * a23
    p2 = b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    # determinant of (A - qI) / p, normalised first so tiny matrices do not underflow
    b11, b22, b33 = b11 / safe, b22 / safe, b33 / safe
    c12, c13, c23 = a12 / safe, a13 / safe, a23 / safe
    det = (b11 * (b22 * b33 - c23 * c23)
           - c12 * (c12 * b33 - c23 * c13)
           + c13 * (c12 * c23 - b22 * c13))
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    eig = np.stack([e1, e2, e3], axis=-1)
    order = np.argsort(np.abs(eig), axis=-1, kind="stable")
    return np.take_along_axis(eig, order, axis=-1)


def hessian_eigs(vol: Volume, sigma_vox: float) -> np.ndarray:
    """Per-voxel Hessian eigenvalues, shape ``dims + (3,)``, |l1| <= |l2| <= |l3|."""
    return eigvals_sym3(*hessian(vol, sigma_vox))


def plateness(vol: Volume, sigmas: Sequence[float] = (0.5, 1.0),
              sigma_rab: float = 0.5, sigma_s: float = 8.0) -> Volume:
    """Sheet-likeness of the intensity, maximised over Gaussian scales.

    Per scale ``H = exp(-R_AB / sigma_rab**2) * (1 - exp(-R_S**2 / sigma_s**2))``
    with ``R_AB = sqrt(|l1 l2|) / |l3|`` and ``R_S`` the Frobenius norm of the
    eigenvalues.  Voxels with ``|l3| < 1e-12`` score zero.
    """
    if len(sigmas) == 0:
        raise ValueError("at least one scale is required")
    best = np.zeros(vol.dims, dtype=np.float64)
    for sigma in sigmas:
        lam = hessian_eigs(vol, sigma)
        l1, l2, l3 = np.abs(lam[..., 0]), np.abs(lam[..., 1]), np.abs(lam[..., 2])
        flat = l3 < 1e-12
        rab = np.sqrt(l1 * l2) / np.where(flat, 1.0, l3)
        rs2 = l1 * l1 + l2 * l2 + l3 * l3
        h = np.exp(-rab / sigma_rab ** 2) * (1.0 - np.exp(-rs2 / sigma_s ** 2))
        h[flat] = 0.0
        np.maximum(best, h, out=best)
    return Volume(np.clip(best, 0.0, 1.0).astype(np.float32), vol.spacing)


def tubeness(vol: Volume, sigmas: Sequence[float] = (1.0, 2.0, 4.0),
             alpha: float = 0.5, beta: float = 0.5) -> Volume:
    """Frangi vesselness for bright tubes, maximised over scales.

    Derivatives are scale-normalised by ``sigma**2``; the structureness
    constant is half the largest Hessian norm at each scale.
    """
    best = np.zeros(vol.dims, dtype=np.float64)
    for sigma in sigmas:
        lam = hessian_eigs(vol, sigma) * (sigma * vol.spacing[0]) ** 2
        l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
        a1, a2, a3 = np.abs(l1), np.abs(l2), np.abs(l3)
        s2 = a1 * a1 + a2 * a2 + a3 * a3
        c = 0.5 * math.sqrt(float(s2.max())) if s2.size else 0.0
        if c <= 0:
            continue
        ra = a2 / np.where(a3 > 0, a3, 1.0)
        rb = a1 / np.sqrt(np.where(a2 * a3 > 0, a2 * a3, 1.0))
        v = ((1.0 - np.exp(-ra ** 2 / (2 * alpha ** 2))) * np.exp(-rb ** 2 / (2 * beta ** 2))
             * (1.0 - np.exp(-s2 / (2 * c * c))))
        v[(l2 > 0) | (l3 > 0)] = 0.0
        np.maximum(best, v, out=best)
    return Volume(best.astype(np.float32), vol.spacing)


# ------------------------------------------------------ distance transform

def squared_distance_transform(mask) -> np.ndarray:
    """Exact squared Euclidean distance (voxel units, int64) to the nearest background voxel.

    Background voxels map to 0.  A mask with no background at all is measured
    against the outside of the volume, as if padded by one background layer.
    """
    m = np.asarray(mask.data if isinstance(mask, Volume) else mask)
    if m.dtype != np.bool_ and not np.isin(np.unique(m), (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    fg = m.astype(bool)
    pad = bool(fg.all())
    if pad:
        fg = np.pad(fg, 1, constant_values=False)
    if not fg.any():
        return np.zeros(m.shape, dtype=np.int64)
    idx = ndi.distance_transform_edt(fg, return_distances=False, return_indices=True)
    grid = np.indices(fg.shape)
    d2 = ((idx - grid).astype(np.int64) ** 2).sum(axis=0)
    d2[~fg] = 0
    if pad:
        d2 = d2[1:-1, 1:-1, 1:-1]
    return d2


def distance_transform(mask: Volume) -> Volume:
    """Interior Euclidean distance map (float32, voxels) of a binary mask."""
    d2 = squared_distance_transform(mask)
    return Volume(np.sqrt(d2).astype(np.float32), mask.spacing)
