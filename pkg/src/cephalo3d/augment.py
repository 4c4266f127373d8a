"""Rigid 3D augmentation applied identically to a volume and its landmarks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InvalidArgumentError, SampleRejected
from .landmarks import LandmarkSet, round_half_away
from .volgrid import PAD_HU, Volume, normalize_value, trilinear_sample

TRANSLATE_FRAC = 0.15
ROTATE_DEG = 15.0


@dataclass(frozen=True)
class AugmentParams:
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # voxels
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # degrees about x, y, z
    seed: int = 0

    @property
    def is_identity(self) -> bool:
        return not any(self.translation) and not any(self.rotation)


def rotation_matrix(rotation_deg) -> np.ndarray:
    """R = Rz @ Ry @ Rx, i.e. rotate about x first."""
    ax, ay, az = np.deg2rad(np.asarray(rotation_deg, dtype=np.float64))
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def sample_params(dims, rng_seed: int, translate_frac: float = TRANSLATE_FRAC,
                  rotate_deg: float = ROTATE_DEG) -> AugmentParams:
    """Draw translation/rotation uniformly from the envelope; pure in ``rng_seed``."""
    if translate_frac < 0 or rotate_deg < 0:
        raise InvalidArgumentError("augmentation envelope must be non-negative")
    rng = np.random.default_rng(rng_seed)
    bound_t = translate_frac * np.asarray(dims, dtype=np.float64)
    t = rng.uniform(-1.0, 1.0, size=3) * bound_t
    r = rng.uniform(-1.0, 1.0, size=3) * rotate_deg
    return AugmentParams(tuple(float(x) for x in t), tuple(float(x) for x in r), int(rng_seed))


def _center(dims) -> np.ndarray:
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0


def transform_points(points, dims, p: AugmentParams) -> np.ndarray:
    """Forward rigid map of voxel coordinates: rotate about the grid center, then shift."""
    c = _center(dims)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return (pts - c) @ rotation_matrix(p.rotation).T + c + np.asarray(p.translation)


def apply(v: Volume, lm: LandmarkSet, p: AugmentParams):
    """Augment a (volume, voxel landmarks) pair with one parameter draw.

    Raises
    ------
    SampleRejected
        If any transformed landmark leaves the grid.
    """
    if lm.frame != "voxel":
        raise InvalidArgumentError("augmentation needs voxel-frame landmarks")
    dims = v.dims
    moved = {}
    for name, point in lm.entries.items():
        idx = round_half_away(transform_points(point, dims, p)[0])
        if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
            raise SampleRejected(f"augmentation moved {name} outside the grid", landmark=name)
        moved[name] = idx
    if p.is_identity:
        return v, LandmarkSet(moved, frame="voxel")

    fill = normalize_value(PAD_HU) if v.normalized else PAD_HU
    c = _center(dims)
    grid = np.indices(dims, dtype=np.float64).reshape(3, -1)
    # inverse map: source = R^T (q - c - t) + c
    rot = rotation_matrix(p.rotation)
    src = rot.T @ (grid - (c + np.asarray(p.translation))[:, None]) + c[:, None]
    data = trilinear_sample(v.data, src, fill).reshape(dims)
    return v.with_data(data), LandmarkSet(moved, frame="voxel")


def augment_sample(v: Volume, lm: LandmarkSet, rng: np.random.Generator,
                   translate_frac: float = TRANSLATE_FRAC, rotate_deg: float = ROTATE_DEG,
                   max_tries: int = 20):
    """Draw parameters until the landmarks stay inside the grid.

    Falls back to the unaugmented pair after ``max_tries`` rejections.
    """
    for _ in range(max_tries):
        seed = int(rng.integers(0, 2**63 - 1))
        p = sample_params(v.dims, seed, translate_frac, rotate_deg)
        try:
            return apply(v, lm, p)
        except SampleRejected:
            continue
    return v, lm
