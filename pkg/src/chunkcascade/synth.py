"""Synthetic sparse-object scenes and the pixel-level tools used on them.

A scene places at most one hard-edged ball per level-0 chunk, renders it over a
noisy background and mean-pools the result into a pyramid. Threshold chunk
classifiers stand in for learned detectors; connected components with an area
filter turn segmentations into point detections.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_probability
from .cascade import ArrayChunkSource
from .pyramid import PyramidSpec, derived_labels
from .simulate import stream
from .stats import DetectorProfile


@dataclass(frozen=True)
class SynthSceneConfig:
    spec: PyramidSpec
    pixels_per_chunk_axis: int = 8
    object_prevalence: float = 0.05
    object_radius_px: float = 2.5
    foreground_intensity: float = 1.0
    background_intensity: float = 0.0
    noise_std: float = 0.25
    seed: int = 0

    def __post_init__(self):
        check_probability(self.object_prevalence, "object_prevalence")
        if self.pixels_per_chunk_axis < 1:
            raise ValueError("pixels_per_chunk_axis must be >= 1")
        if not self.foreground_intensity > self.background_intensity:
            raise ValueError("foreground_intensity must exceed background_intensity")
        if not 0 < self.object_radius_px < self.pixels_per_chunk_axis:
            raise ValueError("object_radius_px must be positive and smaller than a chunk")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def with_seed(self, seed: int) -> "SynthSceneConfig":
        return replace(self, seed=seed)


def mean_pool(image: np.ndarray) -> np.ndarray:
    """Average every 2x2(x2...) block; all axes must have even length."""
    image = np.asarray(image, dtype=np.float64)
    split = []
    for s in image.shape:
        if s % 2:
            raise ValueError(f"cannot halve axis of length {s}")
        split.extend((s // 2, 2))
    return image.reshape(split).mean(axis=tuple(range(1, 2 * image.ndim, 2)))


def build_pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    images = [np.asarray(image, dtype=np.float64)]
    for _ in range(1, levels):
        images.append(mean_pool(images[-1]))
    return images


def chunk_stack(image: np.ndarray, grid: Sequence[int]) -> np.ndarray:
    """Split ``image`` into chunks, stacked in row-major chunk order."""
    image = np.asarray(image)
    d = image.ndim
    cs = [s // g for s, g in zip(image.shape, grid)]
    split = [v for pair in zip(grid, cs) for v in pair]
    blocks = image.reshape(split).transpose(list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2)))
    return blocks.reshape((-1, *cs))


@dataclass
class LabeledPyramid:
    spec: PyramidSpec
    images: list[np.ndarray]
    l0_chunk_labels: np.ndarray
    segmentation_mask: np.ndarray
    centroids: np.ndarray

    def labels(self, level: int) -> np.ndarray:
        return derived_labels(self.l0_chunk_labels, self.spec)[level]

    def chunks(self, level: int) -> np.ndarray:
        return chunk_stack(self.images[level], self.spec.shape(level))

    def source(self) -> ArrayChunkSource:
        return ArrayChunkSource(self.images, self.spec)


def generate_scene(cfg: SynthSceneConfig) -> LabeledPyramid:
    spec = cfg.spec
    ppc = cfg.pixels_per_chunk_axis
    grid = spec.shape(0)
    shape = tuple(g * ppc for g in grid)
    rng = stream(cfg.seed, 1)

    labels = rng.random(grid) < cfg.object_prevalence
    offsets = rng.integers(0, ppc, size=(spec.n, spec.dim))
    origins = np.stack(np.unravel_index(np.arange(spec.n), grid), axis=1) * ppc
    centroids = (origins + offsets)[labels.ravel()].astype(np.float64)

    mask = np.zeros(shape, dtype=bool)
    r = cfg.object_radius_px
    for c in centroids:
        lo = np.maximum(np.floor(c - r).astype(int), 0)
        hi = np.minimum(np.ceil(c + r).astype(int) + 1, shape)
        box = tuple(slice(a, b) for a, b in zip(lo, hi))
        coords = np.ogrid[box]
        dist2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
        mask[box] |= dist2 <= r * r

    image = np.full(shape, cfg.background_intensity, dtype=np.float64)
    image[mask] = cfg.foreground_intensity
    if cfg.noise_std > 0:
        image += rng.normal(0.0, cfg.noise_std, size=shape)
    return LabeledPyramid(spec, build_pyramid(image, spec.levels), labels, mask, centroids)


def _order_scores(chunks: np.ndarray, k: int) -> np.ndarray:
    # A chunk has >= k pixels at or above t iff its k-th largest value is >= t.
    flat = np.asarray(chunks, dtype=np.float64).reshape(len(chunks), -1)
    if k <= 0:
        return np.full(len(flat), np.inf)
    if k > flat.shape[1]:
        return np.full(len(flat), -np.inf)
    pos = flat.shape[1] - k
    return np.partition(flat, pos, axis=1)[:, pos]


class ThresholdChunkClassifier(ClassifierMixin, BaseEstimator):
    """Flags a chunk when at least ``min_hot_pixels`` pixels reach ``threshold``.

    With ``min_area_px > 0`` the hot-pixel mask is first cleaned of connected
    components smaller than ``min_area_px``, so the area filter acts before any
    descent decision.

    ``fit`` measures the classifier on labelled chunks. If ``threshold`` is
    ``None`` it also picks one: the highest threshold reaching ``min_tpr`` if
    given, else the lowest with false positive rate at most ``max_fpr`` if
    given, else the one maximizing ``tpr - fpr``.
    """

    concurrent_safe = True

    def __init__(
        self,
        threshold=None,
        min_hot_pixels=1,
        min_area_px=0,
        connectivity="face",
        level=0,
        min_tpr=None,
        max_fpr=None,
    ):
        self.threshold = threshold
        self.min_hot_pixels = min_hot_pixels
        self.min_area_px = min_area_px
        self.connectivity = connectivity
        self.level = level
        self.min_tpr = min_tpr
        self.max_fpr = max_fpr

    def _active_threshold(self):
        t = getattr(self, "threshold_", self.threshold)
        if t is None:
            raise ValueError("no threshold set; pass one or call fit on labelled chunks")
        return t

    def _hot_count(self, chunk, t) -> int:
        hot = np.asarray(chunk) >= t
        if self.min_area_px > 0:
            kept = area_filter(connected_components(hot, self.connectivity), self.min_area_px)
            return sum(c.area for c in kept)
        return int(np.count_nonzero(hot))

    def classify(self, chunk_data) -> bool:
        return bool(self._hot_count(chunk_data, self._active_threshold()) >= self.min_hot_pixels)

    def _predict_with(self, X, t) -> np.ndarray:
        if self.min_area_px > 0:
            return np.array([self._hot_count(x, t) >= self.min_hot_pixels for x in X], dtype=bool)
        return _order_scores(X, self.min_hot_pixels) >= t

    def decision_function(self, X) -> np.ndarray:
        """Score whose comparison with the threshold gives the prediction
        (the ``min_hot_pixels``-th largest pixel; area filtering ignored)."""
        return _order_scores(X, self.min_hot_pixels)

    def predict(self, X) -> np.ndarray:
        return self._predict_with(X, self._active_threshold())

    def _candidates(self, X, scores=None) -> np.ndarray:
        if self.min_area_px > 0:
            values = np.asarray(X, dtype=np.float64).ravel()
            qs = np.unique(np.quantile(values, np.linspace(0.5, 1.0, 101)))
            return qs
        scores = np.unique(scores if scores is not None else _order_scores(X, self.min_hot_pixels))
        scores = scores[np.isfinite(scores)]
        if scores.size < 2:
            return scores
        # Midpoints generalize better than the observed scores themselves.
        return np.concatenate([scores[:1], (scores[1:] + scores[:-1]) / 2])

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=bool).ravel()
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} chunks but y has {len(y)} labels")
        self.classes_ = np.array([False, True])
        n_pos, n_neg = int(y.sum()), int((~y).sum())
        scores = None if self.min_area_px > 0 else _order_scores(X, self.min_hot_pixels)

        def rates(t):
            pred = self._predict_with(X, t) if scores is None else scores >= t
            tpr = np.count_nonzero(pred & y) / n_pos if n_pos else 0.0
            fpr = np.count_nonzero(pred & ~y) / n_neg if n_neg else 0.0
            return tpr, fpr

        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
        else:
            cands = self._candidates(X, scores)
            if cands.size == 0:
                raise ValueError("cannot calibrate a threshold on constant chunks")
            table = [(t, *rates(t)) for t in cands]
            if self.min_tpr is not None:
                ok = [row for row in table if row[1] >= self.min_tpr]
                best = max(ok, key=lambda r: r[0]) if ok else min(table, key=lambda r: r[0])
            elif self.max_fpr is not None:
                ok = [row for row in table if row[2] <= self.max_fpr]
                best = min(ok, key=lambda r: r[0]) if ok else max(table, key=lambda r: r[0])
            else:
                best = max(table, key=lambda r: (r[1] - r[2], r[0]))
            self.threshold_ = float(best[0])
        tpr, fpr = rates(self.threshold_)
        self.profile_ = DetectorProfile(tpr, fpr)
        return self


def threshold_chunk_classifier(
    threshold: float, min_hot_pixels: int = 1, *, level: int = 0, min_area_px: int = 0
) -> ThresholdChunkClassifier:
    return ThresholdChunkClassifier(
        threshold=threshold, min_hot_pixels=min_hot_pixels, level=level, min_area_px=min_area_px
    )


@dataclass(frozen=True)
class Component:
    pixels: np.ndarray
    area: int
    centroid: tuple[float, ...]


def connected_components(mask, connectivity: str = "face") -> list[Component]:
    """Label ``mask``; ``face`` joins axis neighbours, ``full`` also diagonals.

    Components are listed in raster order of their first pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    if connectivity == "face":
        structure = ndimage.generate_binary_structure(mask.ndim, 1)
    elif connectivity == "full":
        structure = ndimage.generate_binary_structure(mask.ndim, mask.ndim)
    else:
        raise ValueError(f"connectivity must be 'face' or 'full', got {connectivity!r}")
    labels, count = ndimage.label(mask, structure=structure)
    if count == 0:
        return []
    coords = np.argwhere(labels)
    ids = labels[tuple(coords.T)]
    order = np.argsort(ids, kind="stable")
    coords, ids = coords[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, count + 2))
    out = []
    for i in range(count):
        pix = coords[bounds[i] : bounds[i + 1]]
        out.append(Component(pix, len(pix), tuple(float(v) for v in pix.mean(axis=0))))
    return out


def area_filter(components: Sequence[Component], min_area_px: int) -> list[Component]:
    """Drop components strictly smaller than ``min_area_px``."""
    return [c for c in components if c.area >= min_area_px]


def detection_metrics(detections, ground_truth, match_radius_px: float):
    """Greedy one-to-one matching by ascending distance.

    Returns ``(recall, precision)``; either is ``None`` when its denominator
    is empty.
    """
    det = np.asarray(detections, dtype=np.float64)
    truth = np.asarray(ground_truth, dtype=np.float64)
    matched = 0
    if len(det) and len(truth):
        det = det.reshape(len(det), -1)
        truth = truth.reshape(len(truth), -1)
        dist = cdist(det, truth)
        pairs = np.argwhere(dist <= match_radius_px)
        order = np.lexsort((pairs[:, 1], pairs[:, 0], dist[tuple(pairs.T)]))
        used_d, used_t = set(), set()
        for i, j in pairs[order]:
            if i not in used_d and j not in used_t:
                used_d.add(i)
                used_t.add(j)
        matched = len(used_d)
    recall = matched / len(truth) if len(truth) else None
    precision = matched / len(det) if len(det) else None
    return recall, precision


def segment_detections(
    image: np.ndarray,
    chunk_predictions: np.ndarray,
    threshold: float,
    min_area_px: int = 0,
    connectivity: str = "face",
) -> list[Component]:
    """Threshold ``image`` inside positive chunks and return area-filtered components."""
    image = np.asarray(image)
    pred = np.asarray(chunk_predictions, dtype=bool)
    region = pred
    for ax in range(pred.ndim):
        region = np.repeat(region, image.shape[ax] // pred.shape[ax], axis=ax)
    comps = connected_components((image >= threshold) & region, connectivity)
    return area_filter(comps, min_area_px)
