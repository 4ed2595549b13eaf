"""Cascade (coarse-to-fine) detection of sparse objects in multiresolution chunk grids."""

from .cascade import (
    ArrayChunkSource,
    ChunkNotFoundError,
    DirectoryChunkSource,
    RunReport,
    compare_runs,
    run_cascade,
    run_single_level,
    write_chunk_directory,
)
from .estimator import CascadeDetector
from .pyramid import ChunkIndex, PyramidSpec, children, chunk_count, parent
from .simulate import exhaustive_small_world, run_trials, sample_world
from .stats import (
    CascadeMetrics,
    CascadeModel,
    DetectorProfile,
    cascade_metrics,
    multi_level_metrics,
    single_level_metrics,
    sweep,
    two_level_metrics,
)
from .synth import SynthSceneConfig, ThresholdChunkClassifier, generate_scene

__version__ = "0.1.0"

__all__ = [
    "ArrayChunkSource",
    "CascadeDetector",
    "CascadeMetrics",
    "CascadeModel",
    "ChunkIndex",
    "ChunkNotFoundError",
    "DetectorProfile",
    "DirectoryChunkSource",
    "PyramidSpec",
    "RunReport",
    "SynthSceneConfig",
    "ThresholdChunkClassifier",
    "cascade_metrics",
    "children",
    "chunk_count",
    "compare_runs",
    "exhaustive_small_world",
    "generate_scene",
    "multi_level_metrics",
    "parent",
    "run_cascade",
    "run_single_level",
    "run_trials",
    "sample_world",
    "single_level_metrics",
    "sweep",
    "two_level_metrics",
    "write_chunk_directory",
]
