"""Volume container, isotropic resampling, padding and HU normalization.

Volumes are stored as float64 arrays indexed ``data[i, j, k]`` with ``i``
along x.  World coordinates refer to voxel centers: voxel ``(0, 0, 0)`` sits
at ``origin``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import (
    DimensionOverflowError,
    FileFormatError,
    InvalidArgumentError,
    StateError,
)

HU_MIN = -1000.0
HU_MAX = 400.0
PAD_HU = -1000.0

CVOL_MAGIC = b"CVOL0001"
_CVOL_HEADER = struct.Struct("<8s3I3d3dB")

Triple = Tuple[float, float, float]


def _triple(values, dtype=float, name="value"):
    out = tuple(dtype(v) for v in np.broadcast_to(np.asarray(values), (3,)))
    if len(out) != 3:
        raise InvalidArgumentError(f"{name} must have three components")
    return out


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar grid with spacing/origin metadata.

    Parameters
    ----------
    data : ndarray of shape (nx, ny, nz)
        Hounsfield units, or values in [0, 1] when ``normalized``.
    spacing : triple of float
        Voxel size in mm per axis.
    origin : triple of float
        World position (mm) of the center of voxel (0, 0, 0).
    normalized : bool
    """

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    normalized: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidArgumentError(f"volume data must be 3D and non-empty, got shape {data.shape}")
        data.flags.writeable = False
        spacing = _triple(self.spacing, float, "spacing")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise InvalidArgumentError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin, float, "origin"))
        object.__setattr__(self, "normalized", bool(self.normalized))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data, **changes) -> "Volume":
        kw = dict(spacing=self.spacing, origin=self.origin, normalized=self.normalized)
        kw.update(changes)
        return Volume(data, **kw)

    def voxel_to_world(self, idx):
        return voxel_to_world(self, idx)

    def world_to_voxel(self, point):
        return world_to_voxel(self, point)


@dataclass(frozen=True)
class GridSpec:
    """Fixed network grid: isotropic spacing and padded dimensions."""

    target_spacing: float = 2.0
    target_dims: Tuple[int, int, int] = (128, 128, 152)
    pad_value_hu: float = PAD_HU

    def __post_init__(self):
        if not self.target_spacing > 0:
            raise InvalidArgumentError("target_spacing must be > 0")
        dims = _triple(self.target_dims, int, "target_dims")
        if min(dims) < 1:
            raise InvalidArgumentError("target_dims components must be >= 1")
        object.__setattr__(self, "target_dims", dims)


def voxel_to_world(v: Volume, idx) -> np.ndarray:
    """Map (possibly fractional) voxel indices to world mm.

    Accepts a single triple or an array whose last axis has length 3.
    """
    idx = np.asarray(idx, dtype=np.float64)
    return np.asarray(v.origin) + idx * np.asarray(v.spacing)


def world_to_voxel(v: Volume, point) -> np.ndarray:
    point = np.asarray(point, dtype=np.float64)
    return (point - np.asarray(v.origin)) / np.asarray(v.spacing)


def resampled_dims(dims, spacing, target_spacing: float) -> Tuple[int, int, int]:
    """Output grid size for isotropic resampling (floor, at least 1)."""
    if not target_spacing > 0:
        raise InvalidArgumentError(f"target spacing must be > 0, got {target_spacing}")
    if any(not s > 0 for s in spacing):
        raise InvalidArgumentError(f"spacing must be > 0, got {tuple(spacing)}")
    # the epsilon absorbs products like 0.49 * 512 landing a hair under an integer
    return tuple(max(1, int(math.floor(n * s / target_spacing + 1e-9))) for n, s in zip(dims, spacing))


def _axis_weights(coords: np.ndarray, n: int):
    """Lower index, fractional weight and in-domain mask for 1D linear interpolation."""
    tol = 1e-9
    valid = (coords >= -tol) & (coords <= n - 1 + tol)
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.intp), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    w = c - i0
    w[i0 == i1] = 0.0
    return i0, i1, w, valid


def trilinear_sample(data: np.ndarray, coords: np.ndarray, fill: float) -> np.ndarray:
    """Trilinear interpolation of ``data`` at voxel coordinates.

    ``coords`` has shape (3, ...). Points outside ``[0, n-1]`` on any axis
    take ``fill``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    shape = coords.shape[1:]
    cx, cy, cz = (c.ravel() for c in coords)
    nx, ny, nz = data.shape
    x0, x1, wx, vx = _axis_weights(cx, nx)
    y0, y1, wy, vy = _axis_weights(cy, ny)
    z0, z1, wz, vz = _axis_weights(cz, nz)

    def lerp(a, b, w):
        return a + w * (b - a)

    c00 = lerp(data[x0, y0, z0], data[x1, y0, z0], wx)
    c10 = lerp(data[x0, y1, z0], data[x1, y1, z0], wx)
    c01 = lerp(data[x0, y0, z1], data[x1, y0, z1], wx)
    c11 = lerp(data[x0, y1, z1], data[x1, y1, z1], wx)
    out = lerp(lerp(c00, c10, wy), lerp(c01, c11, wy), wz)
    out = np.clip(out, data.min(), data.max())
    out[~(vx & vy & vz)] = fill
    return out.reshape(shape)


def _resample_axis(data: np.ndarray, axis: int, coords: np.ndarray):
    n = data.shape[axis]
    i0, i1, w, valid = _axis_weights(coords, n)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    bshape = [1, 1, 1]
    bshape[axis] = -1
    return a + w.reshape(bshape) * (b - a), valid


def resample(v: Volume, target_spacing: float, pad_value_hu: float = PAD_HU) -> Volume:
    """Trilinear resampling onto an isotropic grid with the same origin.

    Output voxel ``j`` on axis ``a`` is centered at ``origin_a + j * target_spacing``.
    """
    if v.normalized:
        raise StateError("resample expects a raw (HU) volume")
    out_dims = resampled_dims(v.dims, v.spacing, target_spacing)
    data = v.data
    masks = []
    for axis in range(3):
        coords = np.arange(out_dims[axis], dtype=np.float64) * (target_spacing / v.spacing[axis])
        data, valid = _resample_axis(data, axis, coords)
        masks.append(valid)
    data = np.clip(data, v.data.min(), v.data.max())
    inside = masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]
    data = np.where(inside, data, pad_value_hu)
    return Volume(data, spacing=(target_spacing,) * 3, origin=v.origin, normalized=False)


def pad_to(v: Volume, spec: GridSpec) -> Volume:
    """Pad at the high-index end of each axis up to ``spec.target_dims``."""
    target = spec.target_dims
    if any(n > t for n, t in zip(v.dims, target)):
        raise DimensionOverflowError(
            f"volume dims {v.dims} exceed target grid {target}; resample first"
        )
    if v.dims == target:
        return v
    fill = normalize_value(spec.pad_value_hu) if v.normalized else spec.pad_value_hu
    widths = [(0, t - n) for n, t in zip(v.dims, target)]
    return v.with_data(np.pad(v.data, widths, mode="constant", constant_values=fill))


def crop(v: Volume, dims) -> Volume:
    nx, ny, nz = _triple(dims, int, "dims")
    return v.with_data(v.data[:nx, :ny, :nz])


def normalize_value(hu):
    """Scalar/array HU -> [0, 1] with clamping outside [-1000, 400]."""
    hu = np.clip(np.asarray(hu, dtype=np.float64), HU_MIN, HU_MAX)
    out = (hu - HU_MIN) / (HU_MAX - HU_MIN)
    return float(out) if out.ndim == 0 else out


def normalize(v: Volume) -> Volume:
    if v.normalized:
        raise StateError("volume is already normalized")
    return v.with_data(normalize_value(v.data), normalized=True)


def preprocess(v: Volume, spec: GridSpec) -> Volume:
    """resample -> pad_to -> normalize, the network's input path."""
    r = resample(v, spec.target_spacing, spec.pad_value_hu)
    return normalize(pad_to(r, spec))


# -- CVOL file format --------------------------------------------------------

def write_cvol(v: Volume, path) -> None:
    nx, ny, nz = v.dims
    header = _CVOL_HEADER.pack(CVOL_MAGIC, nx, ny, nz, *v.spacing, *v.origin, int(v.normalized))
    flat = v.data.ravel(order="F")
    if v.normalized:
        payload = flat.astype("<f4").tobytes()
    else:
        payload = np.clip(np.rint(flat), -32768, 32767).astype("<i2").tobytes()
    Path(path).write_bytes(header + payload)


def read_cvol(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _CVOL_HEADER.size:
        raise FileFormatError(f"{path}: truncated CVOL header")
    magic, nx, ny, nz, sx, sy, sz, ox, oy, oz, flag = _CVOL_HEADER.unpack_from(raw)
    if magic != CVOL_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    dtype = np.dtype("<f4") if flag else np.dtype("<i2")
    count = nx * ny * nz
    body = raw[_CVOL_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise FileFormatError(f"{path}: expected {count} voxels, got {len(body) // dtype.itemsize}")
    data = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape((nx, ny, nz), order="F")
    return Volume(data, spacing=(sx, sy, sz), origin=(ox, oy, oz), normalized=bool(flag))
