"""Closed-form accuracy and cost model of a cascade detector.

Chunk labels at level 0 are independent Bernoulli(p). Detector decisions are
independent of each other given the true label of the chunk they look at. A
chunk at level ``k >= 1`` is positive iff any of its level-0 descendants is.

Undefined quantities (precision when there is nothing to be precise about) are
reported as ``None``, never as ``nan`` or a silent zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from ._validation import check_positive_int, check_probability, safe_ratio


@dataclass(frozen=True)
class DetectorProfile:
    """True and false positive rate of one level's chunk classifier."""

    tpr: float
    fpr: float

    def __post_init__(self):
        object.__setattr__(self, "tpr", check_probability(self.tpr, "tpr"))
        object.__setattr__(self, "fpr", check_probability(self.fpr, "fpr"))


@dataclass(frozen=True)
class CascadeModel:
    """Prevalence, dimension and per-level detector profiles.

    ``profiles[0]`` is the finest (level-0) detector.
    """

    dim: int
    prevalence: float
    profiles: tuple[DetectorProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "dim", check_positive_int(self.dim, "dim"))
        object.__setattr__(self, "prevalence", check_probability(self.prevalence, "prevalence"))
        profiles = tuple(
            p if isinstance(p, DetectorProfile) else DetectorProfile(*p) for p in self.profiles
        )
        if not profiles:
            raise ValueError("profiles must be non-empty")
        object.__setattr__(self, "profiles", profiles)

    @property
    def levels(self) -> int:
        return len(self.profiles)

    def with_profile(self, level: int, *, tpr: float | None = None, fpr: float | None = None):
        prof = self.profiles[level]
        new = DetectorProfile(
            prof.tpr if tpr is None else tpr, prof.fpr if fpr is None else fpr
        )
        profiles = self.profiles[:level] + (new,) + self.profiles[level + 1 :]
        return replace(self, profiles=profiles)


@dataclass(frozen=True)
class CascadeMetrics:
    tpr: float
    fpr: float
    precision: float | None
    expected_calls_per_l0_chunk: tuple[float, ...] = field(default=(1.0,))

    @property
    def sensitivity(self) -> float:
        return self.tpr

    @property
    def specificity(self) -> float:
        return 1.0 - self.fpr

    @property
    def total_calls_per_l0_chunk(self) -> float:
        """Expected calls to any classifier, normalized by the level-0 chunk count."""
        return float(sum(self.expected_calls_per_l0_chunk))


def bayes_precision(prevalence: float, tpr: float, fpr: float) -> float | None:
    """P(object | positive prediction); ``None`` if no objects exist or nothing is flagged."""
    if prevalence == 0:
        return None
    return safe_ratio(prevalence * tpr, prevalence * tpr + (1.0 - prevalence) * fpr)


def _fold(upper_tpr, upper_fpr, lower: DetectorProfile, q, m):
    # One two-level step: ``upper`` gates ``lower``; ``q`` is the probability a
    # lower-level chunk is empty, ``m`` the number of siblings including itself.
    q_siblings = q ** (m - 1)
    q_all = q**m
    tpr = upper_tpr * lower.tpr
    fpr = q_siblings * (upper_fpr * lower.fpr) + (1 - q_siblings) * (upper_tpr * lower.fpr)
    calls = upper_tpr + q_all * (upper_fpr - upper_tpr)
    return tpr, fpr, calls


def two_level_metrics(model: CascadeModel) -> CascadeMetrics:
    """Sensitivity, FPR, precision and expected calls of a two-level cascade.

    With ``q = 1 - p`` and ``m = 2**dim`` (8 for volumes)::

        tpr   = b1 * b0
        fpr   = q**(m-1) * a1 * a0 + (1 - q**(m-1)) * b1 * a0
        calls = b1 + q**m * (a1 - b1)        # level-0 calls per level-0 chunk

    The level-1 detector always sees every level-1 chunk, i.e. ``1/m`` calls
    per level-0 chunk.
    """
    if model.levels != 2:
        raise ValueError(f"two_level_metrics needs exactly 2 profiles, got {model.levels}")
    return multi_level_metrics(model)


def single_level_metrics(profile: DetectorProfile, prevalence: float) -> CascadeMetrics:
    prevalence = check_probability(prevalence, "prevalence")
    return CascadeMetrics(
        tpr=profile.tpr,
        fpr=profile.fpr,
        precision=bayes_precision(prevalence, profile.tpr, profile.fpr),
        expected_calls_per_l0_chunk=(1.0,),
    )


def multi_level_metrics(model: CascadeModel) -> CascadeMetrics:
    """Metrics of an arbitrary-depth cascade, folded top-down.

    The top two levels are treated as a two-level cascade over level ``L-1``
    chunks, whose prevalence is the occupancy probability
    ``1 - (1-p)**(m**(L-1))``. The resulting composite detector then gates
    level ``L-2`` and so on down to level 0. Because a positive chunk implies
    positive ancestors, and a negative chunk's ancestors depend only on its
    siblings, each fold is exact under the independence model.
    """
    if model.levels < 2:
        raise ValueError(f"a cascade needs at least 2 profiles, got {model.levels}")
    m = 2**model.dim
    q = 1.0 - model.prevalence
    top = model.levels - 1
    tpr, fpr = model.profiles[top].tpr, model.profiles[top].fpr
    calls = [0.0] * model.levels
    calls[top] = 1.0 / m**top
    for level in range(top - 1, -1, -1):
        q_level = q ** (m**level)
        tpr, fpr, per_chunk = _fold(tpr, fpr, model.profiles[level], q_level, m)
        calls[level] = per_chunk / m**level
    return CascadeMetrics(
        tpr=tpr,
        fpr=fpr,
        precision=bayes_precision(model.prevalence, tpr, fpr),
        expected_calls_per_l0_chunk=tuple(calls),
    )


def cascade_metrics(model: CascadeModel) -> CascadeMetrics:
    """Single-level metrics for a one-profile model, cascade metrics otherwise."""
    if model.levels == 1:
        return single_level_metrics(model.profiles[0], model.prevalence)
    return multi_level_metrics(model)


@dataclass(frozen=True)
class SweepPoint:
    value: float
    cascade: CascadeMetrics
    single: CascadeMetrics


def _apply(model: CascadeModel, parameter: str, value: float) -> CascadeModel:
    if parameter == "p":
        return replace(model, prevalence=value)
    kind, _, level = parameter.partition("_")
    if kind not in ("tpr", "fpr", "tnr") or not level.isdigit():
        raise ValueError(
            f"unknown sweep parameter {parameter!r}; expected p, tpr_K, fpr_K or tnr_K"
        )
    level = int(level)
    if level >= model.levels:
        raise ValueError(f"sweep parameter {parameter!r} names a level the model lacks")
    if kind == "tpr":
        return model.with_profile(level, tpr=value)
    if kind == "fpr":
        return model.with_profile(level, fpr=value)
    return model.with_profile(level, fpr=1.0 - value)


def sweep(model: CascadeModel, parameter: str, grid: Sequence[float]) -> list[SweepPoint]:
    """Vary one parameter over ``grid``, holding the rest of ``model`` fixed.

    ``parameter`` is ``"p"``, ``"tpr_K"``, ``"fpr_K"`` or ``"tnr_K"`` (the
    latter sets ``fpr_K = 1 - value``). Points come back in grid order.
    """
    values = [check_probability(v, f"{parameter} grid value") for v in grid]
    points = []
    for v in values:
        m = _apply(model, parameter, v)
        points.append(
            SweepPoint(v, cascade_metrics(m), single_level_metrics(m.profiles[0], m.prevalence))
        )
    return points


BASELINE_MODEL = CascadeModel(
    dim=3,
    prevalence=0.1,
    profiles=(DetectorProfile(0.85, 0.05), DetectorProfile(0.8, 0.1)),
)
