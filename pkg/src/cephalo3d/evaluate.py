"""Localization error metrics, grouped reporting and agreement/rank statistics."""

from __future__ import annotations

import json
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np
from scipy.special import gammaincc
from scipy.stats import rankdata

from .errors import (
    DegenerateDataError,
    IncompleteDataError,
    InsufficientDataError,
    InvalidArgumentError,
)
from .landmarks import LANDMARK_GROUPS, LANDMARK_NAMES, Group, LandmarkSet, group_members

AXES = ("d3", "dx", "dy", "dz")


@dataclass(frozen=True)
class LandmarkError:
    id: str
    dx: float
    dy: float
    dz: float
    d3: float

    def __post_init__(self):
        if self.id not in LANDMARK_GROUPS:
            raise InvalidArgumentError(f"unknown landmark id {self.id!r}")
        if min(self.dx, self.dy, self.dz, self.d3) < 0:
            raise InvalidArgumentError("error components must be non-negative")

    def get(self, axis: str) -> float:
        return getattr(self, axis)


def landmark_error(reference, predicted, id: str) -> LandmarkError:
    """Absolute per-axis and Euclidean distance between two points (mm)."""
    r = np.asarray(reference, dtype=np.float64).reshape(3)
    p = np.asarray(predicted, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
        raise InvalidArgumentError(f"non-finite coordinate for landmark {id}")
    d = np.abs(p - r)
    return LandmarkError(id, float(d[0]), float(d[1]), float(d[2]), float(math.sqrt(float(d @ d))))


def set_errors(reference: LandmarkSet, predicted: LandmarkSet) -> List[LandmarkError]:
    """Errors for every landmark of ``reference``; a missing prediction is an error."""
    if reference.frame != predicted.frame:
        raise InvalidArgumentError("reference and prediction are in different frames")
    out = []
    for name in reference:
        if name not in predicted:
            raise IncompleteDataError(f"prediction lacks landmark {name}")
        out.append(landmark_error(reference[name], predicted[name], name))
    return out


def reference_from_observers(a: LandmarkSet, b: LandmarkSet) -> LandmarkSet:
    """Componentwise mean of two observers' annotations."""
    if a.frame != b.frame or set(a) != set(b):
        raise InvalidArgumentError("observer sets must share frame and landmark ids")
    return LandmarkSet({n: (a[n] + b[n]) / 2.0 for n in a}, frame=a.frame)


def _sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


@dataclass
class EvalReport:
    """Table-1 style summary.

    ``landmarks[name][axis]`` holds ``(mean, sd)`` over subjects. Group and
    total rows are unweighted means of the per-landmark means.
    """

    landmarks: Dict[str, Dict[str, tuple]]
    group_means: Dict[str, float]
    totals: Dict[str, float]
    total_sd: Dict[str, float]
    n_subjects: int
    group_d3: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def overall_2d(self) -> float:
        return float(np.mean([self.totals[a] for a in ("dx", "dy", "dz")]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["overall_2d"] = self.overall_2d
        return d

    def to_records(self) -> List[dict]:
        rows = []
        for name, stats in self.landmarks.items():
            group = LANDMARK_GROUPS[name].value
            row = {"landmark": name, "group": group}
            for axis in AXES:
                row[f"{axis}_mean"], row[f"{axis}_sd"] = stats[axis]
            row["group_mean"] = self.group_means[group]
            rows.append(row)
        return rows

    def to_table(self) -> str:
        cols = ["landmark", "group"] + [f"{a}_{s}" for a in AXES for s in ("mean", "sd")] + ["group_mean"]
        lines = ["\t".join(cols)]
        for row in self.to_records():
            lines.append("\t".join(
                row[c] if isinstance(row[c], str) else f"{row[c]:.2f}" for c in cols
            ))
        total = ["Total", "Average"]
        for a in AXES:
            total += [f"{self.totals[a]:.2f}", f"{self.total_sd[a]:.2f}"]
        total.append(f"{self.totals['d3']:.2f}")
        lines.append("\t".join(total))
        lines.append(f"# overall_2d\t{self.overall_2d:.2f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"records": self.to_records(), **self.to_dict()}, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        lm = {n: {a: tuple(v) for a, v in s.items()} for n, s in d["landmarks"].items()}
        return cls(lm, d["group_means"], d["totals"], d["total_sd"], d["n_subjects"], d.get("group_d3", {}))


def build_report(errors: Mapping[str, Iterable[LandmarkError]]) -> EvalReport:
    """Aggregate per-subject landmark errors.

    Parameters
    ----------
    errors : mapping subject id -> iterable of LandmarkError
        Every subject must cover all 12 landmarks.
    """
    if not errors:
        raise IncompleteDataError("no subjects to report on")
    table = {n: {a: [] for a in AXES} for n in LANDMARK_NAMES}
    for subject in sorted(errors, key=str):
        seen = {}
        for e in errors[subject]:
            seen[e.id] = e
        for name in LANDMARK_NAMES:
            if name not in seen:
                raise IncompleteDataError(f"subject {subject} lacks landmark {name}")
            for a in AXES:
                table[name][a].append(seen[name].get(a))
    per = {}
    for name in LANDMARK_NAMES:
        per[name] = {}
        for a in AXES:
            vals = np.sort(np.asarray(table[name][a]))  # order-free summation
            per[name][a] = (float(np.mean(vals)), _sd(vals))
    group_means = {}
    group_d3 = {}
    for g in Group:
        members = group_members(g)
        group_d3[g.value] = [per[n]["d3"][0] for n in members]
        group_means[g.value] = float(np.mean(group_d3[g.value]))
    totals = {a: float(np.mean([per[n][a][0] for n in LANDMARK_NAMES])) for a in AXES}
    total_sd = {a: _sd(np.sort(np.concatenate([table[n][a] for n in LANDMARK_NAMES]))) for a in AXES}
    return EvalReport(per, group_means, totals, total_sd, len(errors), group_d3)


def group_samples(errors: Mapping[str, Iterable[LandmarkError]], axis: str = "d3") -> Dict[str, List[float]]:
    """Pool subject-level errors by landmark group (input for Kruskal-Wallis)."""
    out = {g.value: [] for g in Group}
    for subject in sorted(errors, key=str):
        for e in errors[subject]:
            out[LANDMARK_GROUPS[e.id].value].append(e.get(axis))
    return out


# -- agreement ------------------------------------------------------------------------

def icc_cronbach(rater_a: Sequence[float], rater_b: Sequence[float]) -> float:
    """Cronbach's alpha for two raters measuring the same items."""
    a = np.asarray(rater_a, dtype=np.float64)
    b = np.asarray(rater_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError("rater series must be 1D and of equal length")
    if a.size < 2:
        raise InsufficientDataError("need at least two items")
    total_var = np.var(a + b, ddof=1)
    if total_var == 0:
        raise DegenerateDataError("summed scores have zero variance")
    k = 2
    return float(k / (k - 1) * (1 - (np.var(a, ddof=1) + np.var(b, ddof=1)) / total_var))


# -- rank tests -----------------------------------------------------------------------

WilcoxonResult = namedtuple("WilcoxonResult", "statistic pvalue w_plus w_minus n method")
KruskalResult = namedtuple("KruskalResult", "statistic pvalue df")

EXACT_MAX_N = 25


def _normal_two_sided(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _signed_rank_null_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each value of 2*W+ (ranks pre-doubled to integers)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(differences: Sequence[float], method: str = "auto") -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zeros are dropped; tied magnitudes get mid-ranks.  ``method`` is
    ``"exact"`` (conditional null distribution over all sign patterns),
    ``"approx"`` (normal, tie-corrected variance) or ``"auto"`` (exact up
    to 25 non-zero differences).
    """
    d = np.asarray(differences, dtype=np.float64).ravel()
    if not np.all(np.isfinite(d)):
        raise InvalidArgumentError("differences must be finite")
    d = d[d != 0]
    n = d.size
    if n < 6:
        raise InsufficientDataError(f"need at least 6 non-zero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "approx"
    mean = n * (n + 1) / 4.0
    if method == "exact":
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_null_counts(ranks2)
        values = np.arange(counts.size) / 2.0
        dev = abs(w_plus - mean)
        p = counts[np.abs(values - mean) >= dev - 1e-9].sum() / counts.sum()
    elif method == "approx":
        _, t = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(t ** 3 - t) / 48.0
        p = 1.0 if var <= 0 else _normal_two_sided((w - mean) / math.sqrt(var))
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    return WilcoxonResult(w, float(min(1.0, p)), w_plus, w_minus, n, method)


def kruskal_wallis(*groups: Sequence[float]) -> KruskalResult:
    """Kruskal-Wallis H with tie correction; chi-square p with ``len(groups) - 1`` df."""
    if len(groups) < 2:
        raise InvalidArgumentError("need at least two groups")
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if any(a.size == 0 for a in arrays):
        raise InvalidArgumentError("every group needs at least one observation")
    pooled = np.concatenate(arrays)
    n = pooled.size
    if n < 5:
        raise InsufficientDataError(f"need at least 5 observations in total, got {n}")
    ranks = rankdata(pooled)
    h = 0.0
    start = 0
    for a in arrays:
        r = ranks[start:start + a.size]
        h += r.sum() ** 2 / a.size
        start += a.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    _, t = np.unique(pooled, return_counts=True)
    correction = 1.0 - np.sum(t ** 3 - t) / (n ** 3 - n)
    df = len(arrays) - 1
    if correction <= 0:
        return KruskalResult(0.0, 1.0, df)
    h = max(h / correction, 0.0)
    return KruskalResult(float(h), float(gammaincc(df / 2.0, h / 2.0)), df)
