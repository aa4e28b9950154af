"""Command-line front end.

Commands: convert, synth, sample, fit, eval, bench-matrix, report. Exit
codes: 0 success, 1 internal error, 2 usage or input error. With
``--error-json`` a failure also prints ``{"error", "message", "exit_code"}``
as one JSON line on stderr.

Run configs are JSON documents::

    {
      "seed": 42,
      "output": "results",
      "manifests": "bench/manifests"            # a directory, split by role
                 | {"train": [...], "test": [...]},
      "sampler": {"strategy": "constant-density", "radius": 30, "density": 1},
      "baseline_sampler": {"strategy": "naive", "n_points": 65536},
      "grids": {"density": [{sampler}, ...]},
      "augmentation": {...AugmentOptions...},
      "training": {"epochs": 10, "samples_per_epoch": 100, "points_per_sample": 4096},
      "evaluation": {"std_over": "datasets"},
      "formats": ["json", "csv", "table"]
    }

Relative paths are resolved against the config file's directory. Command
line flags override config values.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from aerialseg import __version__
from aerialseg.baseline import load_model, save_model
from aerialseg.errors import AerialSegError, ManifestError
from aerialseg.evaluation import FORMATS, STD_OVER, EvalReport, render_report
from aerialseg.pipeline import TrainOptions, bench_matrix, evaluate, fit, write_grid, write_report
from aerialseg.sampling import (
    STRATEGIES,
    AugmentOptions,
    SamplerConfig,
    augment,
    derive_rng,
    draw_sample,
    epoch_schedule,
)
from aerialseg.spatial import KdTree
from aerialseg.synth import default_benchmark_config, generate_benchmark, load_benchmark_config
from aerialseg.taxonomy import SensorKind
from aerialseg.tilestore import (
    DatasetManifest,
    Role,
    TileEntry,
    load_class_map,
    load_manifest,
    read_ply,
    remap_cloud,
    save_manifest,
    write_tile,
)

logger = logging.getLogger("aerialseg")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2
_SUFFIX = {"json": "json", "csv": "csv", "table": "txt"}


class UsageError(AerialSegError):
    """Bad combination of command-line arguments or config values."""


# -- config helpers --------------------------------------------------------

def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_run_config(path) -> tuple[dict, Path]:
    """Parsed run config and the directory relative paths resolve against."""
    path = Path(path)
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise UsageError(f"run config {path} must be a JSON object")
    return doc, path.parent


def collect_manifests(spec, base: Path) -> dict:
    """Role -> list of DatasetManifest from a directory or a {role: [paths]} mapping.

    Every manifest is loaded and validated (tiles exist and decode).
    """
    out = {r.value: [] for r in Role}
    if spec is None:
        return out
    if isinstance(spec, (str, Path)):
        root = _resolve(base, spec)
        if not root.is_dir():
            raise ManifestError(f"manifest directory {root} does not exist")
        manifests = [load_manifest(p) for p in sorted(root.glob("*.json"))]
        if not manifests:
            raise ManifestError(f"no manifests in {root}")
    elif isinstance(spec, dict):
        manifests = []
        for role, paths in spec.items():
            Role(role)
            for p in paths:
                m = load_manifest(_resolve(base, p))
                if m.role.value != role:
                    raise ManifestError(f"manifest {p} has role {m.role.value!r}, listed under {role!r}")
                manifests.append(m)
    else:
        raise UsageError("'manifests' must be a directory path or a {role: [paths]} object")
    for m in manifests:
        m.validate()
        out[m.role.value].append(m)
    return out


def _manifest_list(paths) -> list:
    manifests = [load_manifest(p) for p in paths]
    for m in manifests:
        m.validate()
    return manifests


def sampler_from_args(args, fallback: dict | None = None) -> SamplerConfig:
    doc = dict(fallback or {})
    if args.strategy is not None:
        doc = {"strategy": args.strategy}
    for key, value in (("n_points", args.n_points), ("radius", args.radius), ("density", args.density)):
        if value is not None:
            doc[key] = value
    if "strategy" not in doc:
        raise UsageError("no sampler given: pass --strategy (and its parameters) or a config 'sampler'")
    return SamplerConfig.from_json(doc)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def _seed(args, config: dict | None = None, default: int = 0) -> int:
    if args.seed is not None:
        return int(args.seed)
    if config and "seed" in config:
        return int(config["seed"])
    return default


def _output(args, config: dict | None, base: Path, default: str) -> Path:
    if args.output is not None:
        return Path(args.output)
    if config and config.get("output"):
        return _resolve(base, config["output"])
    return Path(default)


def _train_options(config: dict, args) -> TrainOptions:
    doc = dict(config.get("training", {}))
    if "augmentation" in config:
        doc["augmentation"] = config["augmentation"]
    for key in ("epochs", "samples_per_epoch", "points_per_sample"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    return TrainOptions.from_json(doc)


def _formats(args, config: dict | None) -> tuple:
    if args.format is not None:
        return (args.format,)
    formats = tuple((config or {}).get("formats", ["json"]))
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise UsageError(f"unknown report format(s) {bad}")
    return formats


def _std_over(config: dict | None) -> str:
    value = (config or {}).get("evaluation", {}).get("std_over", "datasets")
    if value not in STD_OVER:
        raise UsageError(f"evaluation.std_over must be one of {STD_OVER}")
    return value


def _print(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -- commands --------------------------------------------------------------

def cmd_convert(args) -> int:
    cmap = load_class_map(args.class_map)
    try:
        raw = read_ply(args.ply, args.vocab or "")
        if not raw.source_vocab_id:
            raw = replace(raw, source_vocab_id=cmap.vocab_id)
        tile, counts = remap_cloud(raw, cmap, dataset_id=args.dataset_id, subset_tags=list(args.subset),
                                   sensor_kind=SensorKind.parse(args.sensor_kind))
    except OSError as exc:
        raise UsageError(f"cannot read {args.ply}: {exc.strerror or exc}") from None
    except AerialSegError as exc:
        exc.args = (f"{args.ply}: {exc}",)
        raise
    out = Path(args.output or "aerialseg-out")
    manifest_path = Path(args.manifest) if args.manifest else out / "manifests" / f"{args.dataset_id}.json"
    if manifest_path.exists():
        manifest = load_manifest(manifest_path)
        if manifest.dataset_id != args.dataset_id:
            raise ManifestError(f"{manifest_path} belongs to dataset {manifest.dataset_id!r}")
        if manifest.sensor_kind != tile.sensor_kind:
            raise ManifestError(f"{manifest_path} holds {manifest.sensor_kind.value} tiles")
    else:
        manifest = DatasetManifest(args.dataset_id, Role(args.role), tile.sensor_kind,
                                   base_dir=manifest_path.parent)
    tile_path = out / "tiles" / args.dataset_id / (args.tile_name or Path(args.ply).stem + ".apct")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tile_path.parent.mkdir(parents=True, exist_ok=True)
    write_tile(tile, tile_path)
    rel = Path(os.path.relpath(tile_path.resolve(), manifest_path.parent.resolve())).as_posix()
    manifest.tiles = [e for e in manifest.tiles if e.path != rel] + [TileEntry(rel, list(args.subset))]
    save_manifest(manifest, manifest_path)
    _print(json.dumps({"tile": tile_path.as_posix(), "manifest": manifest_path.as_posix(),
                       "points": len(tile), "class_counts": {c.title: n for c, n in counts.items()},
                       "overhead_density": tile.overhead_density}))
    return EXIT_OK


def cmd_synth(args) -> int:
    config = load_benchmark_config(args.config) if args.config else default_benchmark_config()
    out = _output(args, None, Path("."), "aerialseg-out")
    paths = generate_benchmark(config, out, seed=args.seed)
    _print(json.dumps({role: [str(p) for p in ps] for role, ps in paths.items()}))
    return EXIT_OK


def cmd_sample(args) -> int:
    manifest = load_manifest(args.manifest)
    manifest.validate()
    sampler = sampler_from_args(args)
    seed = _seed(args)
    options = AugmentOptions() if args.augment else None
    tiles = [manifest.load_tile(i) for i in range(len(manifest.tiles))]
    trees = [KdTree(t.positions) for t in tiles]
    draws = epoch_schedule({manifest.dataset_id: [len(t) for t in tiles]}, args.count, derive_rng(seed, 0))
    samples = []
    for i, draw in enumerate(draws):
        rng = derive_rng(seed, 1, i)
        s = draw_sample(tiles[draw.tile_index], trees[draw.tile_index], draw.origin_index, sampler, rng)
        if options is not None:
            s = augment(s, rng, options)
        samples.append((draw, s))
    out = _output(args, None, Path("."), "aerialseg-out")
    out.mkdir(parents=True, exist_ok=True)
    summary = {"seed": seed, "sampler": sampler.to_json(), "dataset": manifest.dataset_id, "samples": []}
    for i, (draw, s) in enumerate(samples):
        name = f"sample_{i:04d}.npz"
        with open(out / name, "wb") as fh:
            np.savez(fh, positions=s.positions, unified_labels=s.unified_labels,
                     original_indices=s.original_indices, synthetic_mask=s.synthetic_mask, origin=s.origin)
        summary["samples"].append({"file": name, "tile_index": draw.tile_index,
                                   "origin_index": draw.origin_index, "points": len(s),
                                   "synthetic": s.n_synthetic})
    (out / "samples.json").write_text(json.dumps(summary, indent=2) + "\n")
    _print(json.dumps({"samples": len(samples), "points": [e["points"] for e in summary["samples"]]}))
    return EXIT_OK


def _config_or_empty(args) -> tuple[dict, Path]:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return {}, Path(".")


def cmd_fit(args) -> int:
    config, base = _config_or_empty(args)
    if args.train:
        train = _manifest_list(args.train)
    else:
        train = collect_manifests(config.get("manifests"), base)["train"]
    if not train:
        raise UsageError("no training manifests: pass --train or a config with 'manifests'")
    sampler = sampler_from_args(args, config.get("sampler"))
    options = _train_options(config, args)
    seed = _seed(args, config)
    out = _output(args, config, base, "aerialseg-out")
    model = fit(train, sampler, options, seed)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    _print(json.dumps({"model": str(out / "model.json"), "seed": seed, "sampler": sampler.label}))
    return EXIT_OK


def cmd_eval(args) -> int:
    config, base = _config_or_empty(args)
    model = load_model(args.model)
    if args.test:
        test = _manifest_list(args.test)
    else:
        test = collect_manifests(config.get("manifests"), base)["test"]
    if not test:
        raise UsageError("no test manifests: pass --test or a config with 'manifests'")
    sampler = sampler_from_args(args, config.get("sampler") or model.meta.get("sampler"))
    seed = _seed(args, config, model.meta.get("seed", 0))
    formats = _formats(args, config)
    out = _output(args, config, base, "aerialseg-out")
    meta = {"training": model.meta["training"]} if "training" in model.meta else {}
    report = evaluate(model, test, sampler, seed, args.threads, _std_over(config), meta=meta)
    write_report(report, out, "report", formats)
    _print(render_report(report, formats[0]))
    return EXIT_OK


def cmd_bench_matrix(args) -> int:
    config, base = load_run_config(args.config)
    manifests = collect_manifests(args.manifests if args.manifests else config.get("manifests"),
                                  Path(".") if args.manifests else base)
    if not manifests["train"] or not manifests["test"]:
        raise ManifestError("bench-matrix needs train and test manifests")
    seed = _seed(args, config)
    options = _train_options(config, args)
    if "baseline_sampler" not in config:
        raise UsageError("run config needs a 'baseline_sampler' (the naive reference column)")
    baseline = SamplerConfig.from_json(config["baseline_sampler"])
    grids = {name: [SamplerConfig.from_json(doc) for doc in docs]
             for name, docs in config.get("grids", {}).items()}
    if not grids:
        raise UsageError("run config defines no 'grids'")
    formats = _formats(args, config)
    out = _output(args, config, base, "aerialseg-out")

    cells = []
    results = bench_matrix(manifests["train"], manifests["test"], grids, baseline, options, seed,
                           args.threads, _std_over(config),
                           on_cell=lambda s, m, r: cells.append((s, m, r)))
    # all computation is done; one writer serializes the outputs
    out.mkdir(parents=True, exist_ok=True)
    for sampler, model, report in cells:
        cell_dir = out / "cells" / _slug(sampler.label)
        write_report(report, cell_dir, "report", ("json",))
        save_model(model, cell_dir / "model.json")
    for result in results:
        write_grid(result, out, formats)
    for result in results:
        _print(result.to_table() if "table" in formats else json.dumps(result.to_json()))
    failed = [c.sampler.label for r in results for c in r.columns() if c.error]
    return EXIT_INTERNAL if failed and len(failed) == len({c.sampler for r in results for c in r.columns()}) \
        else EXIT_OK


def cmd_report(args) -> int:
    doc = _load_json(args.report)
    report = EvalReport.from_json(doc)
    fmt = args.format or "table"
    text = render_report(report, fmt)
    if args.output is not None:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{Path(args.report).stem}.{_SUFFIX[fmt]}").write_text(text)
    _print(text)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    g.add_argument("--threads", type=int, default=1, help="worker threads for tile evaluation")
    g.add_argument("--output", default=None, help="output directory")
    g.add_argument("--format", choices=FORMATS, default=None, help="report format")
    g.add_argument("--error-json", action="store_true", help="print failures as JSON on stderr")
    g.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--density", type=float, default=None)


def _training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--samples-per-epoch", type=int, default=None)
    p.add_argument("--points-per-sample", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="aerialseg", description="Aerial point-cloud sampling and "
                                     "segmentation benchmarking toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="PLY -> tile, with class remapping")
    p.add_argument("ply")
    p.add_argument("--class-map", required=True)
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--manifest", default=None, help="manifest to create or update")
    p.add_argument("--role", choices=[r.value for r in Role], default=Role.TRAIN.value)
    p.add_argument("--sensor-kind", choices=[k.value for k in SensorKind], default=SensorKind.LIDAR.value)
    p.add_argument("--subset", action="append", required=True, help="subset tag (repeatable)")
    p.add_argument("--vocab", default=None, help="source vocabulary if the PLY header names none")
    p.add_argument("--tile-name", default=None)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("--config", default=None, help="benchmark config JSON (default: packaged desk benchmark)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", parents=[common], help="draw samples from a dataset")
    p.add_argument("--manifest", required=True)
    _sampler_args(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--augment", action="store_true", help="apply the default training augmentations")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", parents=[common], help="train the baseline segmenter")
    p.add_argument("--config", default=None, help="run config JSON")
    p.add_argument("--train", nargs="+", default=None, help="training manifests")
    _sampler_args(p)
    _training_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on test manifests")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--test", nargs="+", default=None, help="test manifests")
    _sampler_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-matrix", parents=[common], help="fit + eval every sampler of every grid")
    p.add_argument("--config", required=True)
    p.add_argument("--manifests", default=None, help="manifest directory (overrides the config)")
    _training_args(p)
    p.set_defaults(func=cmd_bench_matrix)

    p = sub.add_parser("report", parents=[common], help="re-render a stored report JSON")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except (AerialSegError, FileNotFoundError) as exc:
        return _fail(args, exc, EXIT_INPUT)
    except Exception as exc:  # noqa: BLE001 - top-level guard maps crashes to exit 1
        logger.debug("internal error", exc_info=True)
        return _fail(args, exc, EXIT_INTERNAL)


def _fail(args, exc: BaseException, code: int) -> int:
    if args.error_json:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    else:
        sys.stderr.write(f"aerialseg: error: {exc}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
