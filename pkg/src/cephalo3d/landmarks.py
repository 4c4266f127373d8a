"""Landmark catalog, frame conversion and per-axis target encoding."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .errors import FileFormatError, InvalidArgumentError, OutOfBoundsError
from .volgrid import Volume, voxel_to_world, world_to_voxel


class Group(str, enum.Enum):
    MIDSAGITTAL = "Midsagittal"
    HORIZONTAL = "Horizontal"
    MANDIBLE = "Mandible"


LANDMARK_GROUPS: Mapping[str, Group] = MappingProxyType({
    "Na": Group.MIDSAGITTAL,
    "Bregma": Group.MIDSAGITTAL,
    "CFM": Group.MIDSAGITTAL,
    "R_Or": Group.HORIZONTAL,
    "L_Or": Group.HORIZONTAL,
    "R_Po": Group.HORIZONTAL,
    "L_Po": Group.HORIZONTAL,
    "Me": Group.MANDIBLE,
    "R_Cor": Group.MANDIBLE,
    "L_Cor": Group.MANDIBLE,
    "R_F": Group.MANDIBLE,
    "L_F": Group.MANDIBLE,
})

LANDMARK_NAMES: Tuple[str, ...] = tuple(LANDMARK_GROUPS)

DESCRIPTIONS = {
    "Na": "nasion, frontonasal junction on the midline",
    "Bregma": "junction of coronal and sagittal sutures",
    "CFM": "center of foramen magnum at the level of basion",
    "Or": "lowest point of the orbital rim",
    "Po": "highest point of the external auditory meatus",
    "Me": "lowest point of the mandibular symphysis",
    "Cor": "tip of the coronoid process",
    "F": "lowest point of the mandibular foramen opening",
}

FRAMES = ("world", "voxel")


def group_members(group: Group) -> Tuple[str, ...]:
    return tuple(n for n, g in LANDMARK_GROUPS.items() if g is Group(group))


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class LandmarkSet:
    """Named 3D points tagged with a coordinate frame ("world" mm or "voxel")."""

    entries: Mapping[str, np.ndarray]
    frame: str = "world"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise InvalidArgumentError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        clean = {}
        for name, point in self.entries.items():
            if name not in LANDMARK_GROUPS:
                raise InvalidArgumentError(f"unknown landmark id {name!r}")
            p = np.array(point, dtype=np.float64).reshape(3)
            p.flags.writeable = False
            clean[name] = p
        ordered = {n: clean[n] for n in LANDMARK_NAMES if n in clean}
        object.__setattr__(self, "entries", MappingProxyType(ordered))

    def __getitem__(self, name) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def complete(self) -> bool:
        return len(self.entries) == len(LANDMARK_NAMES)

    def missing(self) -> Tuple[str, ...]:
        return tuple(n for n in LANDMARK_NAMES if n not in self.entries)

    def as_array(self, names: Iterable[str] = LANDMARK_NAMES) -> np.ndarray:
        return np.stack([self.entries[n] for n in names])


def _check_in_grid(name, idx, dims):
    if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
        raise OutOfBoundsError(
            f"landmark {name} at voxel {tuple(idx.astype(int))} is outside grid {tuple(dims)}",
            landmark=name,
        )


def landmarks_world_to_voxel(lm: LandmarkSet, v: Volume) -> LandmarkSet:
    """World mm -> nearest integer voxel index on ``v``'s grid."""
    if lm.frame != "world":
        raise InvalidArgumentError("expected a world-frame landmark set")
    out = {}
    for name, p in lm.entries.items():
        idx = round_half_away(world_to_voxel(v, p))
        _check_in_grid(name, idx, v.dims)
        out[name] = idx
    return LandmarkSet(out, frame="voxel")


def landmarks_voxel_to_world(lm: LandmarkSet, v: Volume) -> LandmarkSet:
    if lm.frame != "voxel":
        raise InvalidArgumentError("expected a voxel-frame landmark set")
    return LandmarkSet({n: voxel_to_world(v, p) for n, p in lm.entries.items()}, frame="world")


@dataclass(frozen=True)
class AxisTarget:
    """Three 1D probability vectors (x, y, z) for one landmark."""

    tx: np.ndarray
    ty: np.ndarray
    tz: np.ndarray
    sigma: float

    def __iter__(self):
        return iter((self.tx, self.ty, self.tz))


def gaussian_profile(n: int, mu: int, sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian over indices 0..n-1 peaked at ``mu``."""
    i = np.arange(n, dtype=np.float64)
    t = np.exp(-((i - mu) ** 2) / (2.0 * sigma * sigma))
    # keeps the far tail strictly positive where exp underflows
    t = np.maximum(t, 1e-300)
    return t / t.sum()


def encode_targets(lm: LandmarkSet, dims, sigma: float = 3.0) -> Dict[str, AxisTarget]:
    """Smooth-decay supervision: one normalized Gaussian per landmark axis."""
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be > 0, got {sigma}")
    if lm.frame != "voxel":
        raise InvalidArgumentError("encode_targets needs voxel-frame landmarks")
    dims = tuple(int(d) for d in dims)
    out = {}
    for name, p in lm.entries.items():
        idx = round_half_away(p)
        _check_in_grid(name, idx, dims)
        out[name] = AxisTarget(*(gaussian_profile(n, int(m), sigma) for n, m in zip(dims, idx)), sigma=float(sigma))
    return out


def decode_axis(prob, mode: str = "argmax"):
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidArgumentError("probability vector must be 1D and non-empty")
    if mode == "argmax":
        return int(np.argmax(p))  # first maximum wins ties
    if mode == "expectation":
        return float(np.dot(np.arange(p.size), p) / p.sum())
    raise InvalidArgumentError(f"unknown decode mode {mode!r}")


def decode_prediction(probs, mode: str = "argmax") -> np.ndarray:
    """Per-axis decode of an (x, y, z) triple of probability vectors."""
    probs = list(probs)
    if len(probs) != 3:
        raise InvalidArgumentError("expected three probability vectors")
    return np.array([decode_axis(p, mode) for p in probs], dtype=np.float64)


# -- landmark text file --------------------------------------------------------

def write_landmarks(lm: LandmarkSet, path) -> None:
    lines = [f"#frame={lm.frame}"]
    for name, p in lm.entries.items():
        lines.append(f"{name} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_landmarks(path) -> LandmarkSet:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("#frame="):
        raise FileFormatError(f"{path}: missing '#frame=world|voxel' header")
    frame = text[0].split("=", 1)[1].strip()
    entries = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in LANDMARK_GROUPS:
            raise FileFormatError(f"{path}:{lineno}: expected '<id> <x> <y> <z>', got {line!r}")
        try:
            entries[parts[0]] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise FileFormatError(f"{path}:{lineno}: {exc}") from None
    try:
        return LandmarkSet(entries, frame=frame)
    except InvalidArgumentError as exc:
        raise FileFormatError(f"{path}: {exc}") from None
