"""scikit-learn style wrapper around calibration and cascade execution."""

from __future__ import annotations

from numbers import Integral, Real

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .cascade import ArrayChunkSource, RunReport, run_cascade, run_single_level
from .pyramid import PyramidSpec, derived_labels
from .stats import CascadeMetrics, CascadeModel, cascade_metrics
from .synth import ThresholdChunkClassifier, build_pyramid, chunk_stack


def _per_level(value, levels: int, name: str) -> list:
    if value is None or isinstance(value, (Integral, Real, str)):
        return [value] * levels
    value = list(value)
    if len(value) != levels:
        raise ValueError(f"{name} has {len(value)} entries, expected one per level ({levels})")
    return value


def _check_image(X, y_shape, ppc: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    expected = tuple(s * ppc for s in y_shape)
    if X.shape != expected:
        raise ValueError(f"image shape {X.shape} does not match chunk grid {y_shape} x {ppc} px")
    if not np.isfinite(X).all():
        raise ValueError("image contains non-finite values")
    return X


class CascadeDetector(ClassifierMixin, BaseEstimator):
    """Coarse-to-fine chunk detector over a mean-pooled image pyramid.

    ``fit`` takes a level-0 image and its chunk-grid labels, builds the
    pyramid and calibrates one :class:`ThresholdChunkClassifier` per level
    (``base_classifier`` is cloned and its ``level`` set). ``predict`` runs the
    cascade (or, with ``mode="single"``, only the level-0 classifier) and
    returns boolean predictions over the level-0 chunk grid. The run's call
    counts land in ``report_``.

    Per-level options (``min_hot_pixels``, ``min_area_px``, ``min_tpr``) take a
    scalar or one value per level, finest first.
    """

    def __init__(
        self,
        levels=2,
        pixels_per_chunk_axis=8,
        min_hot_pixels=1,
        min_area_px=0,
        min_tpr=None,
        mode="cascade",
        n_jobs=1,
        base_classifier=None,
    ):
        self.levels = levels
        self.pixels_per_chunk_axis = pixels_per_chunk_axis
        self.min_hot_pixels = min_hot_pixels
        self.min_area_px = min_area_px
        self.min_tpr = min_tpr
        self.mode = mode
        self.n_jobs = n_jobs
        self.base_classifier = base_classifier

    def _spec(self, grid_shape) -> PyramidSpec:
        return PyramidSpec(len(grid_shape), self.levels, tuple(grid_shape))

    def fit(self, X, y):
        y = np.asarray(y, dtype=bool)
        spec = self._spec(y.shape)
        X = _check_image(X, y.shape, self.pixels_per_chunk_axis)
        images = build_pyramid(X, spec.levels)
        labels = derived_labels(y, spec)
        base = self.base_classifier or ThresholdChunkClassifier()
        hot = _per_level(self.min_hot_pixels, spec.levels, "min_hot_pixels")
        area = _per_level(self.min_area_px, spec.levels, "min_area_px")
        tpr = _per_level(self.min_tpr, spec.levels, "min_tpr")
        self.classifiers_ = []
        for level in range(spec.levels):
            clf = clone(base).set_params(
                level=level, min_hot_pixels=hot[level], min_area_px=area[level], min_tpr=tpr[level]
            )
            clf.fit(chunk_stack(images[level], spec.shape(level)), labels[level].ravel())
            self.classifiers_.append(clf)
        self.profiles_ = [c.profile_ for c in self.classifiers_]
        self.spec_ = spec
        self.prevalence_ = float(y.mean())
        self.classes_ = np.array([False, True])
        return self

    def run(self, X) -> RunReport:
        check_is_fitted(self, "classifiers_")
        spec = self.spec_
        X = _check_image(X, spec.shape(0), self.pixels_per_chunk_axis)
        source = ArrayChunkSource(build_pyramid(X, spec.levels), spec)
        if self.mode == "single":
            report = run_single_level(self.classifiers_[0], source, spec, n_jobs=self.n_jobs)
        elif self.mode == "cascade":
            report = run_cascade(self.classifiers_, source, spec, n_jobs=self.n_jobs)
        else:
            raise ValueError(f"mode must be 'cascade' or 'single', got {self.mode!r}")
        self.report_ = report
        return report

    def predict(self, X) -> np.ndarray:
        return self.run(X).predictions

    def score(self, X, y, sample_weight=None) -> float:
        """Chunk-level accuracy."""
        pred = self.predict(X).ravel()
        y = np.asarray(y, dtype=bool).ravel()
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        return float(np.sum(w * (pred == y)) / np.sum(w))

    def model(self, prevalence: float | None = None) -> CascadeModel:
        """Independence model built from the measured per-level profiles."""
        check_is_fitted(self, "profiles_")
        p = self.prevalence_ if prevalence is None else prevalence
        profiles = self.profiles_ if self.mode == "cascade" else self.profiles_[:1]
        return CascadeModel(self.spec_.dim, p, tuple(profiles))

    def expected_metrics(self, prevalence: float | None = None) -> CascadeMetrics:
        return cascade_metrics(self.model(prevalence))
