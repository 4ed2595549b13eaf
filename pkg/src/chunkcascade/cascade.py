"""Single-level and cascade execution over a chunked pyramid.

A classifier is any object with an integer ``level`` attribute and a
``classify(chunk_data) -> bool`` method. Classifiers that set
``concurrent_safe = True`` may be called from several threads at once when the
engine is given ``n_jobs > 1``; results never depend on ``n_jobs``.

Chunk data comes from a *source*: any object with ``get(idx)``. Three are
provided, over in-memory level images, a plain mapping, and a directory of raw
little-endian chunk files described by ``manifest.json``.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .pyramid import ChunkIndex, PyramidSpec, as_spec, iter_level, sorted_children

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "chunkcascade-raw/1"


class ChunkClassifier(Protocol):
    level: int

    def classify(self, chunk_data) -> bool: ...


class ChunkSource(Protocol):
    def get(self, idx: ChunkIndex) -> np.ndarray: ...


class ChunkNotFoundError(FileNotFoundError):
    """A data source has no data for the requested chunk."""

    def __init__(self, index: ChunkIndex, where: str = ""):
        self.index = index
        msg = f"no data for chunk level={index.level} coords={tuple(index.coords)}"
        super().__init__(f"{msg} ({where})" if where else msg)


@dataclass
class FunctionClassifier:
    """Wrap a plain callable as a chunk classifier."""

    func: Callable[[np.ndarray], bool]
    level: int = 0
    concurrent_safe: bool = True

    def classify(self, chunk_data) -> bool:
        return bool(self.func(chunk_data))


def constant_classifier(value: bool, level: int) -> FunctionClassifier:
    return FunctionClassifier(lambda _: value, level)


class ArrayChunkSource:
    """Chunks sliced out of one dense image per pyramid level."""

    def __init__(self, images: Sequence[np.ndarray], spec: PyramidSpec):
        self.spec = as_spec(spec)
        if len(images) < self.spec.levels:
            raise ValueError(f"need {self.spec.levels} level images, got {len(images)}")
        self.images = [np.asarray(im) for im in images]
        self.chunk_shapes = []
        for level in range(self.spec.levels):
            img, grid = self.images[level], self.spec.shape(level)
            if img.ndim != self.spec.dim or any(s % g for s, g in zip(img.shape, grid)):
                raise ValueError(
                    f"level {level} image shape {img.shape} does not tile into chunk grid {grid}"
                )
            self.chunk_shapes.append(tuple(s // g for s, g in zip(img.shape, grid)))

    def get(self, idx: ChunkIndex) -> np.ndarray:
        if not 0 <= idx.level < self.spec.levels:
            raise ChunkNotFoundError(idx, "level outside pyramid")
        grid = self.spec.shape(idx.level)
        if len(idx.coords) != len(grid) or any(not 0 <= c < g for c, g in zip(idx.coords, grid)):
            raise ChunkNotFoundError(idx, "coords outside level grid")
        cs = self.chunk_shapes[idx.level]
        sl = tuple(slice(c * s, (c + 1) * s) for c, s in zip(idx.coords, cs))
        return self.images[idx.level][sl]


class MappingChunkSource:
    def __init__(self, chunks: Mapping[ChunkIndex, np.ndarray]):
        self.chunks = {ChunkIndex(k[0], tuple(k[1])): v for k, v in chunks.items()}

    def get(self, idx: ChunkIndex) -> np.ndarray:
        try:
            return self.chunks[ChunkIndex(idx.level, tuple(idx.coords))]
        except KeyError:
            raise ChunkNotFoundError(idx) from None


def chunk_filename(idx: ChunkIndex) -> str:
    return os.path.join(f"level_{idx.level}", "_".join(str(c) for c in idx.coords) + ".bin")


def write_chunk_directory(
    source: ChunkSource, spec: PyramidSpec, root, dtype: str = "<f4"
) -> Path:
    """Export every chunk of ``source`` as raw little-endian files plus a manifest."""
    root = Path(root)
    dt = np.dtype(dtype).newbyteorder("<")
    chunk_shapes = []
    for level in range(spec.levels):
        (root / f"level_{level}").mkdir(parents=True, exist_ok=True)
        shape = None
        for idx in iter_level(spec, level):
            data = np.ascontiguousarray(source.get(idx), dtype=dt)
            if shape is None:
                shape = data.shape
            elif data.shape != shape:
                raise ValueError(f"chunk {idx} has shape {data.shape}, expected {shape}")
            (root / chunk_filename(idx)).write_bytes(data.tobytes(order="C"))
        chunk_shapes.append(list(shape))
    manifest = {
        "format": MANIFEST_FORMAT,
        "dim": spec.dim,
        "levels": spec.levels,
        "l0_chunks_per_axis": list(spec.l0_chunks_per_axis),
        "dtype": dt.str,
        "order": "C",
        "chunk_shape": chunk_shapes,
        "layout": "level_{level}/{c0}_{c1}_..._{cN}.bin",
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


class DirectoryChunkSource:
    """Reads chunks written by :func:`write_chunk_directory`."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        try:
            manifest = json.loads(manifest_path.read_text())
        except FileNotFoundError:
            raise FileNotFoundError(f"missing chunk manifest {manifest_path}") from None
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"unsupported chunk manifest format {manifest.get('format')!r}")
        self.manifest = manifest
        self.spec = as_spec(manifest)
        self.dtype = np.dtype(manifest["dtype"])
        if self.dtype.byteorder == ">":
            raise ValueError("chunk files must be little-endian")
        self.chunk_shapes = [tuple(s) for s in manifest["chunk_shape"]]

    def get(self, idx: ChunkIndex) -> np.ndarray:
        path = self.root / chunk_filename(idx)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise ChunkNotFoundError(idx, str(path)) from None
        shape = self.chunk_shapes[idx.level]
        data = np.frombuffer(raw, dtype=self.dtype)
        if data.size != int(np.prod(shape)):
            raise OSError(f"chunk file {path} holds {data.size} values, expected {shape}")
        return data.reshape(shape)


@dataclass
class RunReport:
    predictions: np.ndarray
    calls_per_level: list[int]
    wall_clock_seconds: float
    mode: str = "cascade"
    metadata: dict = field(default_factory=dict)

    def call_string(self) -> str:
        """Calls from the top level down, e.g. ``"12:40"`` for L1:L0."""
        return ":".join(str(c) for c in reversed(self.calls_per_level))


def _classify_all(clf, source: ChunkSource, indices: list[ChunkIndex], n_jobs: int):
    # Data is loaded before the clock starts; only classification is timed.
    data = [source.get(idx) for idx in indices]
    start = time.perf_counter()
    if n_jobs > 1 and getattr(clf, "concurrent_safe", False) and len(data) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            out = [bool(v) for v in pool.map(clf.classify, data)]
    else:
        out = [bool(clf.classify(d)) for d in data]
    return out, time.perf_counter() - start


_TIMING_NOTE = "monotonic clock around classifier calls only; chunk loading excluded"


def run_single_level(
    classifier: ChunkClassifier, source: ChunkSource, spec: PyramidSpec, *, n_jobs: int = 1
) -> RunReport:
    if getattr(classifier, "level", 0) != 0:
        raise ValueError(f"single-level runs need a level-0 classifier, got level {classifier.level}")
    indices = list(iter_level(spec, 0))
    out, elapsed = _classify_all(classifier, source, indices, n_jobs)
    preds = np.array(out, dtype=bool).reshape(spec.shape(0))
    calls = [0] * spec.levels
    calls[0] = len(indices)
    return RunReport(preds, calls, elapsed, "single", {"timing": _TIMING_NOTE})


def run_cascade(
    classifiers: Sequence[ChunkClassifier],
    source: ChunkSource,
    spec: PyramidSpec,
    *,
    n_jobs: int = 1,
) -> RunReport:
    """Classify every top-level chunk, then descend one level at a time into
    the children of positive chunks only. Unvisited level-0 chunks are
    predicted negative."""
    if len(classifiers) != spec.levels:
        raise ValueError(f"need one classifier per level ({spec.levels}), got {len(classifiers)}")
    for level, clf in enumerate(classifiers):
        if getattr(clf, "level", level) != level:
            raise ValueError(f"classifier at position {level} serves level {clf.level}")

    calls = [0] * spec.levels
    elapsed = 0.0
    frontier = list(iter_level(spec, spec.top))
    for level in range(spec.top, -1, -1):
        out, dt = _classify_all(classifiers[level], source, frontier, n_jobs)
        elapsed += dt
        calls[level] = len(frontier)
        positives = [idx for idx, v in zip(frontier, out) if v]
        if level == 0:
            break
        frontier = [c for idx in positives for c in sorted_children(spec, idx)]
    preds = np.zeros(spec.shape(0), dtype=bool)
    for idx in positives:
        preds[idx.coords] = True
    meta = {"timing": _TIMING_NOTE, "descent": "adjacent levels only, children of positives"}
    return RunReport(preds, calls, elapsed, "cascade", meta)


def recall_precision(predictions, ground_truth) -> tuple[float | None, float | None]:
    """Element-wise recall and precision; ``None`` where the denominator is empty."""
    pred = np.asarray(predictions, dtype=bool)
    truth = np.asarray(ground_truth, dtype=bool)
    tp = int(np.count_nonzero(pred & truth))
    n_true = int(np.count_nonzero(truth))
    n_pred = int(np.count_nonzero(pred))
    recall = tp / n_true if n_true else None
    precision = tp / n_pred if n_pred and n_true else None
    return recall, precision


def format_agreement(agreement: float) -> str:
    if agreement < 1.0 and 1.0 - agreement < 0.01:
        return ">0.99"
    return f"{agreement:.2f}"


@dataclass(frozen=True)
class ComparisonRow:
    recall_a: float | None
    precision_a: float | None
    recall_b: float | None
    precision_b: float | None
    agreement: float
    calls_a: str
    calls_b: str
    runtime_a: float
    runtime_b: float

    @property
    def agreement_label(self) -> str:
        return format_agreement(self.agreement)


def compare_runs(a: RunReport, b: RunReport, ground_truth) -> ComparisonRow:
    pa = np.asarray(a.predictions, dtype=bool)
    pb = np.asarray(b.predictions, dtype=bool)
    truth = np.asarray(ground_truth, dtype=bool)
    if pa.size != pb.size or pa.size != truth.size:
        raise ValueError(
            f"prediction/truth sizes differ: {pa.size}, {pb.size}, {truth.size}"
        )
    pa, pb, truth = pa.ravel(), pb.ravel(), truth.ravel()
    ra, pra = recall_precision(pa, truth)
    rb, prb = recall_precision(pb, truth)
    agreement = float(np.count_nonzero(pa == pb)) / pa.size if pa.size else 1.0
    return ComparisonRow(
        ra, pra, rb, prb, agreement,
        a.call_string(), b.call_string(), a.wall_clock_seconds, b.wall_clock_seconds,
    )
