"""Synthetic skull phantoms with analytically placed landmarks.

Axes: x runs right (-) to left (+), y posterior to anterior, z inferior to
superior.  All geometry is expressed as fractions of the grid extent so the
same phantom family renders at any grid size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .landmarks import LandmarkSet, read_landmarks, write_landmarks
from .volgrid import Volume, read_cvol, write_cvol

MAX_RETRIES = 25


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (64, 64, 76)
    spacing: float = 2.0
    semi_axes_frac: Tuple[float, float, float] = (0.33, 0.39, 0.30)
    center_frac: Tuple[float, float, float] = (0.5, 0.5, 0.59)
    shell_mm: float = 5.8
    bone_hu: float = 1000.0
    interior_hu: float = 40.0
    background_hu: float = -1000.0
    noise_hu: float = 0.0
    jitter: float = 0.10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.bone_hu > self.interior_hu > self.background_hu:
            raise InvalidArgumentError("need bone_hu > interior_hu > background_hu")
        if not self.spacing > 0 or min(self.dims) < 8:
            raise InvalidArgumentError("phantom grid too small or spacing not positive")
        if not 0 <= self.jitter < 0.5:
            raise InvalidArgumentError("jitter must be in [0, 0.5)")
        ext = self.extent
        margin = 2 * self.spacing
        for a in range(3):
            c = self.center_frac[a] * ext[a]
            r = self.semi_axes_frac[a] * ext[a]
            if c - r < margin or c + r > ext[a] - margin:
                raise InvalidArgumentError(f"skull does not fit axis {a} with a 2-voxel margin")

    @property
    def extent(self) -> np.ndarray:
        return (np.asarray(self.dims) - 1) * self.spacing


@dataclass(frozen=True)
class _Geometry:
    center: np.ndarray
    axes: np.ndarray
    shell: float
    foramen_r: float
    canal_r: float
    jaw_z: float
    jaw_y: float
    jaw_mx: float
    jaw_my: float
    body_r: float
    ramus_r: float
    ramus_h: float


def _geometry(spec: PhantomSpec, rng: np.random.Generator) -> _Geometry:
    ext = spec.extent
    j = spec.jitter

    def wobble(size=None):
        return 1.0 + rng.uniform(-j, j, size=size)

    center = np.asarray(spec.center_frac) * ext + rng.uniform(-j, j, 3) * 0.1 * ext
    axes = np.asarray(spec.semi_axes_frac) * ext * wobble(3)
    return _Geometry(
        center=center,
        axes=axes,
        shell=spec.shell_mm,
        foramen_r=0.014 * ext[0],
        canal_r=0.03 * ext[2],
        jaw_z=0.17 * ext[2] * wobble(),
        jaw_y=center[1] + 0.08 * ext[1],
        jaw_mx=0.23 * ext[0] * wobble(),
        jaw_my=0.23 * ext[1] * wobble(),
        body_r=0.04 * ext[0],
        ramus_r=0.035 * ext[0],
        ramus_h=0.2 * ext[2] * wobble(),
    )


def _shell_point(g: _Geometry, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Point at mid-thickness of the cranial shell in a given direction."""
    az, el = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    u = np.array([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])
    return g.center + (g.axes - g.shell / 2) * u


def _landmarks(g: _Geometry) -> dict:
    cx = g.center[0]
    pts = {
        "Na": _shell_point(g, 0.0, -10.0),
        "Bregma": _shell_point(g, 0.0, 90.0),
        "CFM": g.center - np.array([0.0, 0.0, g.axes[2] - g.shell / 2]),
        "Me": np.array([cx, g.jaw_y + g.jaw_my, g.jaw_z - 0.5 * g.body_r]),
    }
    for side, sign in (("R", -1.0), ("L", 1.0)):
        po = _shell_point(g, sign * 90.0, -25.0)
        pts[f"{side}_Or"] = _shell_point(g, sign * 28.0, -22.0)
        pts[f"{side}_Po"] = po
        pts[f"{side}_Cor"] = np.array([cx + sign * g.jaw_mx, g.jaw_y, g.jaw_z + g.ramus_h - 0.5 * g.ramus_r])
        pts[f"{side}_F"] = np.array([cx + sign * (g.jaw_mx - 0.5 * g.ramus_r), g.jaw_y, g.jaw_z + 0.45 * g.ramus_h])
    return pts


def _render(spec: PhantomSpec, g: _Geometry, lms: dict, rng: np.random.Generator) -> np.ndarray:
    coords = np.indices(spec.dims, dtype=np.float64) * spec.spacing
    x, y, z = coords
    dx, dy, dz = x - g.center[0], y - g.center[1], z - g.center[2]
    outer = (dx / g.axes[0]) ** 2 + (dy / g.axes[1]) ** 2 + (dz / g.axes[2]) ** 2 <= 1.0
    inner_axes = g.axes - g.shell
    inner = (dx / inner_axes[0]) ** 2 + (dy / inner_axes[1]) ** 2 + (dz / inner_axes[2]) ** 2 <= 1.0

    vol = np.full(spec.dims, spec.background_hu)
    vol[outer] = spec.bone_hu
    vol[inner] = spec.interior_hu

    # foramen magnum: vertical hole through the inferior pole
    hole = (dx ** 2 + dy ** 2 <= g.foramen_r ** 2) & (dz < 0) & outer
    vol[hole] = spec.interior_hu
    # auditory canals: lateral tubes whose top edge sits just under porion
    for side in ("R_Po", "L_Po"):
        po = lms[side]
        cy, cz = po[1], po[2] - g.canal_r - 1.0
        canal = ((y - cy) ** 2 + (z - cz) ** 2 <= g.canal_r ** 2) & (np.abs(dx) > 0.5 * g.axes[0]) & outer & ~inner
        vol[canal] = spec.interior_hu

    # mandible: U-shaped body plus two vertical rami
    theta = np.linspace(-np.pi / 2, np.pi / 2, 181)
    arc = np.stack([g.center[0] + g.jaw_mx * np.sin(theta), g.jaw_y + g.jaw_my * np.cos(theta)], axis=1)
    near = np.abs(z - g.jaw_z) <= g.body_r
    body = np.zeros(spec.dims, dtype=bool)
    for ax_, ay_ in arc:
        body |= near & ((x - ax_) ** 2 + (y - ay_) ** 2 + (z - g.jaw_z) ** 2 <= g.body_r ** 2)
    vol[body] = spec.bone_hu
    for sign in (-1.0, 1.0):
        rx = g.center[0] + sign * g.jaw_mx
        ramus = ((x - rx) ** 2 + (y - g.jaw_y) ** 2 <= g.ramus_r ** 2) & (z >= g.jaw_z) & (z <= g.jaw_z + g.ramus_h)
        vol[ramus] = spec.bone_hu

    if spec.noise_hu > 0:
        vol = vol + rng.uniform(-spec.noise_hu, spec.noise_hu, size=spec.dims)
    return vol


def generate(spec: PhantomSpec) -> Tuple[Volume, LandmarkSet]:
    """Render one phantom; deterministic in ``spec``.

    Jitter draws that push a landmark off the grid are redrawn from the same
    stream, up to ``MAX_RETRIES`` times.
    """
    rng = np.random.default_rng(spec.seed)
    hi = spec.extent
    for _ in range(MAX_RETRIES):
        g = _geometry(spec, rng)
        lms = _landmarks(g)
        pts = np.stack(list(lms.values()))
        if np.all(pts >= 0) and np.all(pts <= hi):
            data = _render(spec, g, lms, rng)
            vol = Volume(data, spacing=(spec.spacing,) * 3, origin=(0.0, 0.0, 0.0))
            return vol, LandmarkSet(lms, frame="world")
    raise InvalidArgumentError(f"phantom landmarks left the grid after {MAX_RETRIES} jitter draws")


def sample_seed(base_seed: int, k: int) -> int:
    return int(np.random.SeedSequence(int(base_seed), spawn_key=(4, k)).generate_state(1, np.uint32)[0])


def generate_dataset(n: int, base: PhantomSpec) -> List[Tuple[Volume, LandmarkSet]]:
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    return [generate(replace(base, seed=sample_seed(base.seed, k))) for k in range(n)]


def split_indices(n: int, ratio: Tuple[int, int] = (2, 1), seed: int = 0):
    """Shuffled train/test index partition with ``round(n * a / (a + b))`` training items."""
    a, b = ratio
    n_train = int(round(n * a / (a + b)))
    perm = np.random.default_rng(seed).permutation(n)
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


def write_dataset(directory, samples: Sequence[Tuple[Volume, LandmarkSet]], seeds: Sequence[int]) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    manifest = []
    for k, ((vol, lm), seed) in enumerate(zip(samples, seeds)):
        d = root / f"sample_{k}"
        d.mkdir(exist_ok=True)
        write_cvol(vol, d / "volume.cvol")
        write_landmarks(lm, d / "landmarks.txt")
        manifest.append(f"sample_{k}\t{seed}")
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")


def read_dataset(directory) -> List[Tuple[str, Volume, LandmarkSet]]:
    """Load ``sample_<k>`` directories in manifest order (or sorted by k)."""
    root = Path(directory)
    manifest = root / "manifest.txt"
    if manifest.exists():
        names = [ln.split("\t")[0] for ln in manifest.read_text(encoding="utf-8").splitlines() if ln.strip()]
    else:
        names = sorted((p.name for p in root.glob("sample_*")), key=lambda s: int(s.split("_")[1]))
    out = []
    for name in names:
        d = root / name
        out.append((name, read_cvol(d / "volume.cvol"), read_landmarks(d / "landmarks.txt")))
    return out
