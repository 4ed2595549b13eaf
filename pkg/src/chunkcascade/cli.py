"""Command-line front end.

    chunkcascade analyze  [--config cfg.yaml] [overrides]
    chunkcascade sweep    [--param p --grid 0,0.1,0.2] [--out DIR_OR_FILE]
    chunkcascade simulate [--trials N --seed N --jobs N]
    chunkcascade bench    [--seed N --jobs N --include-timing]

Exit codes: 0 success, 2 configuration error, 3 a Monte Carlo check failed.
Reals are written with 17 significant digits; undefined values as
``undefined`` (CSV) or ``null`` (JSON).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cascade import compare_runs, run_cascade, run_single_level
from .pyramid import PyramidSpec
from .simulate import run_trials
from .stats import CascadeModel, DetectorProfile, cascade_metrics, single_level_metrics, sweep
from .synth import (
    SynthSceneConfig,
    ThresholdChunkClassifier,
    detection_metrics,
    generate_scene,
    segment_detections,
)

log = logging.getLogger("chunkcascade")

EXIT_CONFIG = 2
EXIT_CHECK_FAILED = 3
MIN_TRIALS_FOR_VERDICT = 1000
SE_MULTIPLIER = 4.0
DEFAULT_SWEEPS = ("p", "tpr_1", "tnr_1")
DEFAULT_GRID_POINTS = 50

DEFAULTS = {
    "model": {"dim": 3, "prevalence": 0.1, "tpr": [0.85, 0.8], "fpr": [0.05, 0.1]},
    "pyramid": {},
    "simulate": {"trials": 1_000_000, "seed": 0, "jobs": 1},
    "sweep": {},
    "scene": {
        "l0_chunks_per_axis": [16, 16, 16],
        "levels": 2,
        "pixels_per_chunk_axis": 8,
        "prevalence": 0.05,
        "object_radius_px": 2.5,
        "foreground_intensity": 1.0,
        "background_intensity": 0.0,
        "noise_std": 0.25,
        "seed": 0,
    },
    "bench": {
        "min_hot_pixels": [3, 2],
        "min_tpr": [None, 0.97],
        "min_area_px": [0, 0],
        "segmentation_threshold": None,
        "object_min_area_px": 5,
        "match_radius_px": 5.0,
    },
    "output": {"path": None, "format": "csv"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    model: CascadeModel
    spec: PyramidSpec
    trials: int
    seed: int
    jobs: int
    sweep_parameter: str | None
    sweep_grid: list[float] | None
    scene: SynthSceneConfig
    bench: dict
    out: Path | None
    fmt: str
    include_timing: bool = False
    raw: dict = field(default_factory=dict)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _prob(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a probability, got {value!r}") from None
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name}: probability must be in [0, 1], got {value!r}")
    return value


def _int(value, name: str, minimum: int = 1) -> int:
    try:
        ok = int(value) == float(value)
    except (TypeError, ValueError):
        ok = False
    if not ok or int(value) < minimum:
        raise ConfigError(f"{name}: expected an integer >= {minimum}, got {value!r}")
    return int(value)


def _grid(spec, name: str) -> list[float]:
    if isinstance(spec, dict):
        num = _int(spec.get("num", DEFAULT_GRID_POINTS), f"{name}.num")
        start = _prob(spec.get("start", 0.0), f"{name}.start")
        stop = _prob(spec.get("stop", 1.0), f"{name}.stop")
        return [float(v) for v in np.linspace(start, stop, num)]
    if not isinstance(spec, (list, tuple)) or not spec:
        raise ConfigError(f"{name}: expected a non-empty list of probabilities")
    return [_prob(v, f"{name}[{i}]") for i, v in enumerate(spec)]


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = DEFAULTS
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: invalid YAML in {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be a mapping")
        raw = _merge(raw, loaded)

    overrides: dict = {}
    for flag, section, key in [
        ("dim", "model", "dim"),
        ("prevalence", "model", "prevalence"),
        ("tpr", "model", "tpr"),
        ("fpr", "model", "fpr"),
        ("levels", "pyramid", "levels"),
        ("axes", "pyramid", "l0_chunks_per_axis"),
        ("trials", "simulate", "trials"),
        ("jobs", "simulate", "jobs"),
        ("param", "sweep", "parameter"),
        ("grid", "sweep", "grid"),
        ("out", "output", "path"),
        ("format", "output", "format"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    if args.seed is not None:
        overrides.setdefault("simulate", {})["seed"] = args.seed
        overrides.setdefault("scene", {})["seed"] = args.seed
    raw = _merge(raw, overrides)

    m = raw["model"]
    dim = _int(m.get("dim"), "model.dim")
    tprs, fprs = list(m.get("tpr") or []), list(m.get("fpr") or [])
    if not tprs or len(tprs) != len(fprs):
        raise ConfigError("model.tpr/model.fpr: need equal, non-empty per-level lists")
    profiles = tuple(
        DetectorProfile(_prob(t, f"model.tpr[{i}]"), _prob(f, f"model.fpr[{i}]"))
        for i, (t, f) in enumerate(zip(tprs, fprs))
    )
    model = CascadeModel(dim, _prob(m.get("prevalence"), "model.prevalence"), profiles)
    if args.mode == "analyze" and model.levels < 2:
        raise ConfigError("model.tpr: analyze needs at least 2 levels")

    p = raw["pyramid"]
    levels = _int(p.get("levels", model.levels), "pyramid.levels")
    if levels != model.levels:
        raise ConfigError(f"pyramid.levels: {levels} does not match {model.levels} model levels")
    axes = p.get("l0_chunks_per_axis") or [2 ** max(levels - 1, 1)] * dim
    try:
        spec = PyramidSpec(dim, levels, tuple(_int(a, "pyramid.l0_chunks_per_axis") for a in axes))
    except ValueError as exc:
        raise ConfigError(f"pyramid.l0_chunks_per_axis: {exc}") from None

    s = raw["simulate"]
    trials = _int(s.get("trials"), "simulate.trials")
    seed = _int(s.get("seed"), "simulate.seed", minimum=0)
    jobs = _int(s.get("jobs", 1), "simulate.jobs")

    sw = raw["sweep"]
    parameter = sw.get("parameter")
    grid = None
    if sw.get("grid") is not None:
        grid = _grid(sw["grid"], "sweep.grid")
    if parameter is not None:
        valid = {"p"} | {f"{k}_{i}" for k in ("tpr", "fpr", "tnr") for i in range(model.levels)}
        if parameter not in valid:
            raise ConfigError(f"sweep.parameter: {parameter!r} is not one of {sorted(valid)}")

    sc = raw["scene"]
    try:
        scene_levels = _int(sc.get("levels", 2), "scene.levels", minimum=2)
        scene_axes = tuple(_int(a, "scene.l0_chunks_per_axis") for a in sc["l0_chunks_per_axis"])
        scene = SynthSceneConfig(
            spec=PyramidSpec(len(scene_axes), scene_levels, scene_axes),
            pixels_per_chunk_axis=_int(sc["pixels_per_chunk_axis"], "scene.pixels_per_chunk_axis"),
            object_prevalence=_prob(sc["prevalence"], "scene.prevalence"),
            object_radius_px=float(sc["object_radius_px"]),
            foreground_intensity=float(sc["foreground_intensity"]),
            background_intensity=float(sc["background_intensity"]),
            noise_std=float(sc["noise_std"]),
            seed=_int(sc["seed"], "scene.seed", minimum=0),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scene: {exc}") from None

    fmt = raw["output"].get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output.format: expected csv or json, got {fmt!r}")
    out = raw["output"].get("path")
    return ExperimentConfig(
        mode=args.mode,
        model=model,
        spec=spec,
        trials=trials,
        seed=seed,
        jobs=jobs,
        sweep_parameter=parameter,
        sweep_grid=grid,
        scene=scene,
        bench=dict(raw["bench"]),
        out=Path(out) if out else None,
        fmt=fmt,
        include_timing=bool(getattr(args, "include_timing", False)),
        raw=raw,
    )


# -- formatting ---------------------------------------------------------------


def fmt_value(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(format(float(value), ".17g"))
    if isinstance(value, dict):
        return {k: _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return value


def render(rows: list[dict], fmt: str, meta: dict | None = None) -> str:
    if fmt == "json":
        doc = {"rows": _json_value(rows)}
        if meta:
            doc["meta"] = _json_value(meta)
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    columns = list(rows[0]) if rows else []
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_value(row[c]) for c in columns])
    return buf.getvalue()


def emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- commands -----------------------------------------------------------------


def _metric_dict(m) -> dict:
    out = {
        "sensitivity": m.tpr,
        "specificity": m.specificity,
        "fpr": m.fpr,
        "precision": m.precision,
        "calls_total": m.total_calls_per_l0_chunk,
    }
    for level, c in enumerate(m.expected_calls_per_l0_chunk):
        out[f"calls_L{level}"] = c
    return out


def cmd_analyze(cfg: ExperimentConfig) -> list[dict]:
    cascade = _metric_dict(cascade_metrics(cfg.model))
    single = _metric_dict(single_level_metrics(cfg.model.profiles[0], cfg.model.prevalence))
    return [
        {"metric": k, "cascade": v, "single_level": single.get(k, 0.0)} for k, v in cascade.items()
    ]


def _sweep_rows(model: CascadeModel, parameter: str, grid: list[float]) -> list[dict]:
    rows = []
    for pt in sweep(model, parameter, grid):
        c, s = pt.cascade, pt.single
        row = {
            "parameter": parameter,
            "value": pt.value,
            "cascade_sensitivity": c.tpr,
            "cascade_specificity": c.specificity,
            "cascade_precision": c.precision,
            "cascade_calls": c.total_calls_per_l0_chunk,
        }
        for level, v in enumerate(c.expected_calls_per_l0_chunk):
            row[f"cascade_calls_L{level}"] = v
        row.update(
            single_sensitivity=s.tpr,
            single_specificity=s.specificity,
            single_precision=s.precision,
            single_calls=s.total_calls_per_l0_chunk,
        )
        rows.append(row)
    return rows


def cmd_sweep(cfg: ExperimentConfig) -> dict[str, list[dict]]:
    """One table per swept parameter, keyed by parameter name."""
    default_grid = [float(v) for v in np.linspace(0.0, 1.0, DEFAULT_GRID_POINTS)]
    grid = cfg.sweep_grid or default_grid
    params = [cfg.sweep_parameter] if cfg.sweep_parameter else list(DEFAULT_SWEEPS)
    return {p: _sweep_rows(cfg.model, p, grid) for p in params}


def _closed_form(model: CascadeModel) -> dict:
    m = cascade_metrics(model)
    out = {"tpr": m.tpr, "fpr": m.fpr, "precision": m.precision}
    for level, c in enumerate(m.expected_calls_per_l0_chunk):
        out[f"calls_L{level}"] = c
    return out


def cmd_simulate(cfg: ExperimentConfig) -> tuple[list[dict], bool]:
    est = run_trials(cfg.model, cfg.spec, cfg.trials, cfg.seed, n_jobs=cfg.jobs)
    analytic = _closed_form(cfg.model)
    verdicts = cfg.trials >= MIN_TRIALS_FOR_VERDICT
    rows, ok = [], True
    for name, e in est.items():
        a = analytic.get(name)
        z = passed = None
        if e.mean is not None and a is not None:
            diff = abs(e.mean - a)
            if e.std_error > 0:
                z = diff / e.std_error
            if verdicts:
                passed = diff <= SE_MULTIPLIER * e.std_error or diff <= 1e-12 * max(1.0, abs(a))
                ok &= passed
        rows.append(
            {
                "metric": name,
                "empirical": e.mean,
                "std_error": e.std_error,
                "analytic": a,
                "z": z,
                "pass": "n/a" if passed is None else passed,
                "trials": e.trials,
            }
        )
    return rows, ok


def _bench_list(cfg: ExperimentConfig, key: str, levels: int) -> list:
    value = cfg.bench.get(key)
    if not isinstance(value, list):
        value = [value] * levels
    if len(value) != levels:
        raise ConfigError(f"bench.{key}: expected {levels} per-level entries, got {len(value)}")
    return value


def cmd_bench(cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    scene_cfg = cfg.scene
    spec = scene_cfg.spec
    hot = _bench_list(cfg, "min_hot_pixels", spec.levels)
    min_tpr = _bench_list(cfg, "min_tpr", spec.levels)
    area = _bench_list(cfg, "min_area_px", spec.levels)

    calibration = generate_scene(scene_cfg.with_seed(scene_cfg.seed + 1))
    classifiers = []
    for level in range(spec.levels):
        clf = ThresholdChunkClassifier(
            min_hot_pixels=int(hot[level]),
            min_area_px=int(area[level]),
            min_tpr=min_tpr[level],
            level=level,
        )
        clf.fit(calibration.chunks(level), calibration.labels(level).ravel())
        classifiers.append(clf)

    scene = generate_scene(scene_cfg)
    source = scene.source()
    single = run_single_level(classifiers[0], source, spec, n_jobs=cfg.jobs)
    cascade = run_cascade(classifiers, source, spec, n_jobs=cfg.jobs)
    comparison = compare_runs(single, cascade, scene.l0_chunk_labels)

    profiles = [c.profile_ for c in classifiers]
    predicted = cascade_metrics(
        CascadeModel(spec.dim, scene_cfg.object_prevalence, tuple(profiles))
    )
    seg_threshold = cfg.bench.get("segmentation_threshold")
    if seg_threshold is None:
        seg_threshold = (scene_cfg.foreground_intensity + scene_cfg.background_intensity) / 2
    rows = []
    for name, report, recall, precision in [
        ("single-level", single, comparison.recall_a, comparison.precision_a),
        ("cascade", cascade, comparison.recall_b, comparison.precision_b),
    ]:
        dets = segment_detections(
            scene.images[0],
            report.predictions,
            float(seg_threshold),
            int(cfg.bench.get("object_min_area_px", 0)),
        )
        obj_recall, obj_precision = detection_metrics(
            [d.centroid for d in dets], scene.centroids, float(cfg.bench["match_radius_px"])
        )
        row = {
            "detector": name,
            "chunk_recall": recall,
            "chunk_precision": precision,
            "object_recall": obj_recall,
            "object_precision": obj_precision,
            "calls": report.call_string(),
            "l0_calls_fraction": report.calls_per_level[0] / spec.n,
            "predicted_l0_calls_fraction": (
                1.0 if name == "single-level" else predicted.expected_calls_per_l0_chunk[0]
            ),
            "agreement_with_single": 1.0 if name == "single-level" else comparison.agreement,
        }
        if cfg.include_timing:
            row["runtime_s"] = report.wall_clock_seconds
        rows.append(row)
    log.info(
        "runtime single-level %.4fs, cascade %.4fs", single.wall_clock_seconds,
        cascade.wall_clock_seconds,
    )
    meta = {
        "n_l0_chunks": spec.n,
        "calibrated_thresholds": [c.threshold_ for c in classifiers],
        "calibrated_tpr": [p.tpr for p in profiles],
        "calibrated_fpr": [p.fpr for p in profiles],
        "l1_area_filter": "applied to the level-1 classifier mask before the descent decision",
        "timing": cascade.metadata["timing"],
    }
    return rows, meta


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="chunkcascade", description="Cascade detector model, simulation and benchmark."
    )
    ap.add_argument("mode", choices=["analyze", "sweep", "simulate", "bench"])
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--out", help="output file (a directory for the default sweeps)")
    ap.add_argument("--format", choices=["csv", "json"])
    ap.add_argument("--jobs", type=int, help="worker threads for simulate/bench")
    ap.add_argument("--dim", type=int)
    ap.add_argument("--prevalence", "-p", type=float)
    ap.add_argument("--tpr", type=_floats, help="per-level TPRs, finest first, comma separated")
    ap.add_argument("--fpr", type=_floats, help="per-level FPRs, finest first, comma separated")
    ap.add_argument("--levels", type=int)
    ap.add_argument("--axes", type=_ints, help="level-0 chunk counts per axis")
    ap.add_argument("--param", help="sweep parameter: p, tpr_K, fpr_K or tnr_K")
    ap.add_argument("--grid", type=_floats, help="sweep grid values, comma separated")
    ap.add_argument("--include-timing", action="store_true", help="add wall-clock runtimes")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if cfg.mode == "analyze":
            emit(render(cmd_analyze(cfg), cfg.fmt), cfg.out)
        elif cfg.mode == "sweep":
            tables = cmd_sweep(cfg)
            if len(tables) > 1 and cfg.out is not None:
                ext = "json" if cfg.fmt == "json" else "csv"
                for name, rows in tables.items():
                    emit(render(rows, cfg.fmt), cfg.out / f"sweep_{name}.{ext}")
            else:
                rows = [r for t in tables.values() for r in t]
                emit(render(rows, cfg.fmt), cfg.out)
        elif cfg.mode == "simulate":
            rows, ok = cmd_simulate(cfg)
            emit(render(rows, cfg.fmt), cfg.out)
            if not ok:
                print("simulate: closed form and Monte Carlo disagree beyond 4 SE", file=sys.stderr)
                return EXIT_CHECK_FAILED
        else:
            rows, meta = cmd_bench(cfg)
            emit(render(rows, cfg.fmt, meta if cfg.fmt == "json" else None), cfg.out)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
