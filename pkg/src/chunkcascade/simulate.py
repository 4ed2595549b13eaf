"""Monte Carlo and exhaustive checks of the cascade model.

Random streams are derived counter-style from ``(seed, block_id)`` through
:class:`numpy.random.SeedSequence` spawn keys and fed to the Philox
generator. Trials are processed in fixed-size blocks, so tallies do not
depend on how many workers run them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from ._validation import check_positive_int, check_probability, safe_ratio
from .pyramid import PyramidSpec, derived_labels, expand_to_children
from .stats import CascadeMetrics, CascadeModel, DetectorProfile

BLOCK_SIZE = 1 << 15
MAX_EXHAUSTIVE_CHUNKS = 16


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ChunkWorld:
    spec: PyramidSpec
    l0_labels: np.ndarray
    derived_labels: tuple[np.ndarray, ...]

    def labels(self, level: int) -> np.ndarray:
        return self.l0_labels if level == 0 else self.derived_labels[level - 1]


@dataclass(frozen=True)
class SimEstimate:
    mean: float | None
    std_error: float
    trials: int


def sample_world(spec: PyramidSpec, p: float, seed: int) -> ChunkWorld:
    p = check_probability(p, "p")
    rng = stream(seed, 0)
    l0 = rng.random(spec.shape(0)) < p
    levels = derived_labels(l0, spec)
    return ChunkWorld(spec, levels[0], tuple(levels[1:]))


def stochastic_detector_decision(label: bool, profile: DetectorProfile, rng_draw: float) -> bool:
    """Positive with probability ``tpr`` for objects and ``fpr`` for background."""
    return bool(rng_draw < (profile.tpr if label else profile.fpr))


def _check_pair(model: CascadeModel, spec: PyramidSpec) -> None:
    if spec.levels != model.levels:
        raise ValueError(f"spec has {spec.levels} levels but model has {model.levels} profiles")
    if spec.dim != model.dim:
        raise ValueError(f"spec.dim={spec.dim} does not match model.dim={model.dim}")


@dataclass
class _Tally:
    # Integer sums over trials; merging is exact and order-free.
    trials: int = 0
    tp: int = 0
    pos: int = 0
    tp2: int = 0
    pos2: int = 0
    tp_pos: int = 0
    fp: int = 0
    neg: int = 0
    fp2: int = 0
    neg2: int = 0
    fp_neg: int = 0
    flagged: int = 0
    flagged2: int = 0
    tp_flagged: int = 0
    calls: tuple = ()
    calls2: tuple = ()

    def __add__(self, other: "_Tally") -> "_Tally":
        out = _Tally()
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, tuple):
                a = a or (0,) * len(b)
                b = b or (0,) * len(a)
                setattr(out, f.name, tuple(x + y for x, y in zip(a, b)))
            else:
                setattr(out, f.name, a + b)
        return out


def _isum(x) -> int:
    return int(np.sum(x, dtype=np.int64))


def _run_block(model: CascadeModel, spec: PyramidSpec, seed: int, block: int, size: int) -> _Tally:
    rng = stream(seed, block)
    batch = (size,)
    labels = derived_labels(rng.random(batch + spec.shape(0)) < model.prevalence, spec)
    axes = tuple(range(1, spec.dim + 1))
    top = spec.top
    calls = [None] * spec.levels
    flagged = None
    for level in range(top, -1, -1):
        prof = model.profiles[level]
        draws = rng.random(batch + spec.shape(level))
        decision = draws < np.where(labels[level], prof.tpr, prof.fpr)
        if level == top:
            flagged = decision
            calls[level] = np.full(size, decision[0].size, dtype=np.int64)
        else:
            visited = expand_to_children(flagged, spec.dim)
            calls[level] = visited.sum(axis=axes, dtype=np.int64)
            flagged = decision & visited
    lab0 = labels[0]
    tp = (flagged & lab0).sum(axis=axes, dtype=np.int64)
    fp = (flagged & ~lab0).sum(axis=axes, dtype=np.int64)
    pos = lab0.sum(axis=axes, dtype=np.int64)
    neg = spec.n - pos
    fl = tp + fp
    return _Tally(
        trials=size,
        tp=_isum(tp), pos=_isum(pos), tp2=_isum(tp * tp), pos2=_isum(pos * pos),
        tp_pos=_isum(tp * pos),
        fp=_isum(fp), neg=_isum(neg), fp2=_isum(fp * fp), neg2=_isum(neg * neg),
        fp_neg=_isum(fp * neg),
        flagged=_isum(fl), flagged2=_isum(fl * fl), tp_flagged=_isum(tp * fl),
        calls=tuple(_isum(c) for c in calls),
        calls2=tuple(_isum(c * c) for c in calls),
    )


def _ratio_estimate(sx, sy, sxx, syy, sxy, trials) -> SimEstimate:
    # Delta-method standard error of sum(x)/sum(y) with trials as clusters.
    r = safe_ratio(sx, sy)
    if r is None:
        return SimEstimate(None, 0.0, trials)
    ybar = sy / trials
    resid = max(sxx - 2 * r * sxy + r * r * syy, 0.0)
    s2 = resid / max(trials - 1, 1)
    return SimEstimate(r, math.sqrt(s2 / trials) / ybar, trials)


def _mean_estimate(s, s2, trials, scale) -> SimEstimate:
    mean = s / trials
    var = max(s2 / trials - mean * mean, 0.0) * trials / max(trials - 1, 1)
    return SimEstimate(mean / scale, math.sqrt(var / trials) / scale, trials)


def run_trials(
    model: CascadeModel,
    spec: PyramidSpec,
    trials: int,
    seed: int,
    *,
    n_jobs: int = 1,
    block_size: int = BLOCK_SIZE,
) -> dict[str, SimEstimate]:
    """Simulate ``trials`` independent worlds and run the cascade on each.

    Returns estimates keyed ``tpr``, ``fpr``, ``precision`` and
    ``calls_L{k}`` (calls at level ``k`` per level-0 chunk). TPR and FPR are
    pooled ratio estimators, so trials without positives (or negatives) add
    nothing to the corresponding numerator or denominator.
    """
    _check_pair(model, spec)
    trials = check_positive_int(trials, "trials")
    sizes = [min(block_size, trials - start) for start in range(0, trials, block_size)]
    jobs = [(model, spec, seed, b, s) for b, s in enumerate(sizes)]
    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda a: _run_block(*a), jobs))
    else:
        parts = [_run_block(*a) for a in jobs]
    t = _Tally()
    for part in parts:
        t = t + part

    out = {
        "tpr": _ratio_estimate(t.tp, t.pos, t.tp2, t.pos2, t.tp_pos, t.trials),
        "fpr": _ratio_estimate(t.fp, t.neg, t.fp2, t.neg2, t.fp_neg, t.trials),
        "precision": _ratio_estimate(
            t.tp, t.flagged, t.tp2, t.flagged2, t.tp_flagged, t.trials
        ),
    }
    if t.pos == 0:
        out["precision"] = SimEstimate(None, 0.0, t.trials)
    for level in range(spec.levels):
        out[f"calls_L{level}"] = _mean_estimate(t.calls[level], t.calls2[level], t.trials, spec.n)
    return out


def exhaustive_small_world(model: CascadeModel, spec: PyramidSpec) -> CascadeMetrics:
    """Exact metrics by enumerating every level-0 label pattern.

    Detector randomness is marginalized analytically: a level-0 chunk ends up
    positive with probability equal to the product of its own and all its
    ancestors' detection probabilities. Quantities with an empty conditioning
    event (TPR with no objects, FPR with no background) come back as ``None``.
    """
    _check_pair(model, spec)
    n = spec.n
    if n > MAX_EXHAUSTIVE_CHUNKS:
        raise ValueError(
            f"exhaustive enumeration supports at most {MAX_EXHAUSTIVE_CHUNKS} level-0 chunks, got {n}"
        )
    codes = np.arange(2**n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    labels = derived_labels(bits.reshape((2**n,) + spec.shape(0)), spec)
    k = bits.sum(axis=1)
    p = model.prevalence
    weights = p**k * (1.0 - p) ** (n - k)

    axes = tuple(range(1, spec.dim + 1))
    calls = [0.0] * spec.levels
    reach = None
    for level in range(spec.top, -1, -1):
        prof = model.profiles[level]
        detect = np.where(labels[level], prof.tpr, prof.fpr)
        if reach is None:
            calls[level] = float(detect[0].size)
            reach = detect
        else:
            visited = expand_to_children(reach, spec.dim)
            calls[level] = float(weights @ visited.sum(axis=axes))
            reach = detect * visited
    lab0 = labels[0]
    e_tp = float(weights @ (reach * lab0).sum(axis=axes))
    e_fp = float(weights @ (reach * ~lab0).sum(axis=axes))
    e_pos = float(weights @ k)
    e_neg = n - e_pos
    precision = None if e_pos == 0 else safe_ratio(e_tp, e_tp + e_fp)
    return CascadeMetrics(
        tpr=safe_ratio(e_tp, e_pos),
        fpr=safe_ratio(e_fp, e_neg),
        precision=precision,
        expected_calls_per_l0_chunk=tuple(c / n for c in calls),
    )
