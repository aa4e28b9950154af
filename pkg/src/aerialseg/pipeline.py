"""Training, full-tile inference, evaluation and strategy-grid benchmarks.

Everything here is a deterministic function of its inputs and a global
seed: every sample draws from a generator derived from
``(seed, purpose, position)``, so results do not depend on execution order
or thread count.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aerialseg.baseline import N_NEIGHBOURS, WEIGHTINGS, BaselineModel, FeatureAccumulator, extract_features
from aerialseg.errors import AerialSegError, EvaluationError, SamplingError
from aerialseg.evaluation import ConfusionMatrix, EvalReport, accumulate, aggregate, render_report
from aerialseg.sampling import (
    NAIVE,
    AugmentOptions,
    SamplerConfig,
    augment,
    derive_rng,
    draw_sample,
    epoch_schedule,
    radius_for_count,
    stable_key,
)
from aerialseg.spatial import KdTree
from aerialseg.taxonomy import EVAL_CLASSES, SensorKind
from aerialseg.tilestore import DatasetManifest, Tile, class_weights, load_manifest

logger = logging.getLogger(__name__)

# Stream tags for derive_rng, keeping training, inference and cover draws independent.
_TRAIN, _PREDICT = 1, 2


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 10
    samples_per_epoch: int = 100
    points_per_sample: int = 4096  # feature rows drawn from each sample
    augmentation: AugmentOptions = AugmentOptions()
    weighting: str = "balanced"  # see aerialseg.baseline

    def __post_init__(self):
        if self.epochs < 1 or self.samples_per_epoch < 1 or self.points_per_sample < 1:
            raise AerialSegError("epochs, samples_per_epoch and points_per_sample must be >= 1")
        if self.weighting not in WEIGHTINGS:
            raise AerialSegError(f"weighting must be one of {WEIGHTINGS}")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["augmentation"] = self.augmentation.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainOptions":
        doc = dict(doc)
        aug = doc.pop("augmentation", None)
        unknown = set(doc) - {"epochs", "samples_per_epoch", "points_per_sample", "weighting"}
        if unknown:
            raise AerialSegError(f"unknown training keys {sorted(unknown)}")
        if aug is not None:
            doc["augmentation"] = AugmentOptions.from_json(aug)
        return cls(**doc)


class TileCache:
    """Loads tiles lazily and builds one KD-tree per tile."""

    def __init__(self):
        self._tiles: dict = {}

    def get(self, manifest: DatasetManifest, index: int) -> tuple[Tile, KdTree]:
        key = (str(manifest.tile_path(index)),)
        if key not in self._tiles:
            tile = manifest.load_tile(index)
            self._tiles[key] = (tile, KdTree(tile.positions))
        return self._tiles[key]


def _as_manifests(manifests) -> list:
    out = []
    for m in manifests:
        out.append(m if isinstance(m, DatasetManifest) else load_manifest(m))
    return out


# -- training --------------------------------------------------------------

def fit(train_manifests, sampler: SamplerConfig, options: TrainOptions = TrainOptions(),
        seed: int = 0, cache: TileCache | None = None) -> BaselineModel:
    """Fit the nearest-centroid baseline on samples drawn from the training sets.

    Each epoch draws ``samples_per_epoch`` samples split equally over the
    training datasets, augments them, and accumulates features of up to
    ``points_per_sample`` points per sample.
    """
    manifests = _as_manifests(train_manifests)
    if not manifests:
        raise AerialSegError("fit needs at least one training manifest")
    cache = cache or TileCache()
    by_id = {m.dataset_id: m for m in manifests}
    if len(by_id) != len(manifests):
        raise AerialSegError("duplicate training dataset ids")
    sizes = {m.dataset_id: [len(cache.get(m, i)[0]) for i in range(len(m.tiles))] for m in manifests}
    weights = class_weights(manifests)
    acc = FeatureAccumulator()
    for epoch in range(options.epochs):
        schedule = epoch_schedule(sizes, options.samples_per_epoch, derive_rng(seed, _TRAIN, epoch))
        for pos, draw in enumerate(schedule):
            rng = derive_rng(seed, _TRAIN, epoch, pos + 1)
            tile, tree = cache.get(by_id[draw.dataset_id], draw.tile_index)
            sample = draw_sample(tile, tree, draw.origin_index, sampler, rng)
            sample = augment(sample, rng, options.augmentation)
            if len(sample) <= N_NEIGHBOURS:
                continue
            rows = np.arange(len(sample))
            if len(rows) > options.points_per_sample:
                rows = np.sort(rng.choice(len(rows), options.points_per_sample, replace=False))
            feats = extract_features(sample.positions, query_indices=rows)
            acc.add(feats, sample.unified_labels[rows])
    meta = {"sampler": sampler.to_json(), "training": options.to_json(), "seed": seed,
            "train_datasets": sorted(by_id)}
    return acc.finish(weights, meta, options.weighting)


# -- inference -------------------------------------------------------------

def _coverage_spacing(tile: Tile, sampler: SamplerConfig) -> float:
    if sampler.strategy == NAIVE:
        return radius_for_count(min(sampler.n_points, len(tile)), tile.overhead_density)
    return sampler.radius


def grid_origins(tile: Tile, tree: KdTree, spacing: float) -> np.ndarray:
    """Tile points nearest to the nodes of an xy grid with the given spacing."""
    lo, hi = tree.bounds
    xs = np.arange(lo[0], hi[0] + spacing, spacing)
    ys = np.arange(lo[1], hi[1] + spacing, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    mid_z = 0.5 * (lo[2] + hi[2])
    nodes = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, mid_z)])
    flat = tile.positions.copy()
    flat[:, 2] = mid_z
    idx, _ = KdTree(flat).knn_many(nodes, 1)
    return np.unique(idx[:, 0])


def predict_tile(model: BaselineModel, tile: Tile, tree: KdTree, sampler: SamplerConfig,
                 seed: int = 0, tile_key: int = 0, max_samples: int | None = None) -> np.ndarray:
    """Label every tile point from overlapping samples by majority vote.

    Samples are centred on a grid whose spacing equals the sample radius
    (the analytic radius for naive sampling), then on still-unlabelled
    points until every point has at least one vote. Vote ties resolve in
    Ground, Building, Vegetation order. If ``max_samples`` is exhausted,
    leftover points take the label of their nearest voted neighbour.
    """
    n = len(tile)
    n_sample = min(sampler.n_points, n) if sampler.strategy == NAIVE else sampler.n_points
    if sampler.strategy == NAIVE and n_sample != sampler.n_points:
        sampler = SamplerConfig(NAIVE, n_points=n_sample, seed=sampler.seed)
    if max_samples is None:
        max_samples = 64 * math.ceil(n / max(1, n_sample)) + 256
    votes = np.zeros((n, len(EVAL_CLASSES)), dtype=np.int32)
    covered = np.zeros(n, dtype=bool)
    cover_rng = derive_rng(seed, _PREDICT, tile_key, 0)

    def run(step: int, origin: int) -> None:
        rng = derive_rng(seed, _PREDICT, tile_key, step + 1)
        try:
            sample = draw_sample(tile, tree, int(origin), sampler, rng)
        except SamplingError:
            return
        if len(sample) <= N_NEIGHBOURS:
            return
        pred = model.predict(sample.positions)
        real = ~sample.synthetic_mask
        idx = sample.original_indices[real]
        np.add.at(votes, (idx, pred[real].astype(np.int64)), 1)
        covered[idx] = True

    step = 0
    if sampler.strategy == NAIVE and n_sample == n:
        origins = np.zeros(1, dtype=np.int64)  # one sample already holds the whole tile
    else:
        origins = grid_origins(tile, tree, _coverage_spacing(tile, sampler))
    for origin in origins:
        if step >= max_samples:
            break
        run(step, origin)
        step += 1
    while step < max_samples and not covered.all():
        pending = np.flatnonzero(~covered)
        run(step, pending[cover_rng.integers(len(pending))])
        step += 1
    if not covered.all():
        if not covered.any():
            raise EvaluationError("no sample could be drawn from the tile")
        voted = np.flatnonzero(covered)
        nearest, _ = KdTree(tile.positions[voted]).knn_many(tile.positions[~covered], 1)
        votes[~covered] = votes[voted[nearest[:, 0]]]
        logger.info("tile %d: %d points labelled by nearest neighbour", tile_key, int((~covered).sum()))
    logger.debug("tile %d: %d samples", tile_key, step)
    return np.asarray(EVAL_CLASSES, dtype=np.uint8)[votes.argmax(axis=1)]


def evaluate(model: BaselineModel, test_manifests, sampler: SamplerConfig, seed: int = 0,
             threads: int = 1, std_over: str = "datasets", cache: TileCache | None = None,
             meta: dict | None = None) -> EvalReport:
    """Predict every test tile and aggregate per (dataset, subset) confusion matrices."""
    manifests = _as_manifests(test_manifests)
    if not manifests:
        raise EvaluationError("evaluate needs at least one test manifest")
    cache = cache or TileCache()
    jobs = [(m, i) for m in manifests for i in range(len(m.tiles))]

    def work(job):
        manifest, i = job
        tile, tree = cache.get(manifest, i)
        key = stable_key(f"{manifest.dataset_id}/{manifest.tiles[i].path}")
        pred = predict_tile(model, tile, tree, sampler, seed, key)
        return accumulate(ConfusionMatrix(), tile.unified_labels, pred)

    if threads > 1:
        for m, i in jobs:  # load serially; tree building is not worth racing
            cache.get(m, i)
        with ThreadPoolExecutor(threads) as pool:
            matrices = list(pool.map(work, jobs))
    else:
        matrices = [work(job) for job in jobs]

    leaves: dict = {}
    for (manifest, i), cm in zip(jobs, matrices):
        for tag in manifest.tiles[i].subset_tags:
            key = (manifest.dataset_id, tag)
            leaves[key] = leaves.get(key, ConfusionMatrix()) + cm
    kinds = {m.dataset_id: m.sensor_kind for m in manifests}
    info = {"sampler": sampler.to_json(), "seed": seed}
    info.update(meta or {})
    return aggregate(leaves, kinds, std_over=std_over, meta=info)


# -- benchmark grids -------------------------------------------------------

@dataclass
class CellResult:
    sampler: SamplerConfig
    report: EvalReport | None = None
    error: str | None = None


@dataclass
class GridResult:
    name: str
    baseline: CellResult
    cells: list = field(default_factory=list)

    def columns(self) -> list:
        return [self.baseline] + [c for c in self.cells if c.sampler != self.baseline.sampler]

    def rows(self) -> list:
        """(row label, [value per column]) following the hierarchy of the reports."""
        cols = self.columns()
        reports = [c.report for c in cols]
        first = next((r for r in reports if r is not None), None)
        if first is None:
            return []
        out = []
        for d in first.datasets:
            out.append((d.dataset, [r.dataset(d.dataset).score if r else None for r in reports]))
            if len(d.subsets) > 1:
                for s in d.subsets:
                    out.append((f"{d.dataset} {s}",
                                [r.dataset(d.dataset).subsets.get(s) if r else None for r in reports]))
        out.append(("Overall LIDAR", [r.groups.get(SensorKind.LIDAR) if r else None for r in reports]))
        out.append(("Overall Photogrammetry",
                    [r.groups.get(SensorKind.PHOTOGRAMMETRY) if r else None for r in reports]))
        out.append(("Overall", [r.overall if r else None for r in reports]))
        out.append(("Overall (STD)", [r.overall_std if r else None for r in reports]))
        base = self.baseline.report.overall if self.baseline.report else None
        out.append(("PC over naive", [percentage_change(r.overall, base) if r and base else None
                                      for r in reports]))
        return out

    def to_json(self) -> dict:
        cols = self.columns()
        return {
            "grid": self.name,
            "baseline": self.baseline.sampler.label,
            "columns": [c.sampler.label for c in cols],
            "samplers": [c.sampler.to_json() for c in cols],
            "errors": {c.sampler.label: c.error for c in cols if c.error},
            "rows": [{"test_set": name, "values": values} for name, values in self.rows()],
        }

    def to_csv(self) -> str:
        cols = self.columns()
        lines = [",".join(["test_set"] + [_csv_field(c.sampler.label) for c in cols])]
        for name, values in self.rows():
            lines.append(",".join([_csv_field(name)] + ["" if v is None else repr(float(v)) for v in values]))
        for c in cols:
            if c.error:
                lines.append(f"# error {_csv_field(c.sampler.label)}: {c.error}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        cols = self.columns()
        rows = self.rows()
        width = max([len("Test Set")] + [len(r[0]) for r in rows])
        colw = [max(8, len(c.sampler.label)) for c in cols]
        out = ["  ".join(["Test Set".ljust(width)] + [c.sampler.label.rjust(w) for c, w in zip(cols, colw)])]
        for name, values in rows:
            cells = []
            for v, w in zip(values, colw):
                if v is None:
                    cells.append("-".rjust(w))
                elif name == "PC over naive":
                    cells.append(f"{v:.2f}%".rjust(w))
                else:
                    cells.append(f"{v:.3f}".rjust(w))
            out.append("  ".join([name.ljust(width)] + cells))
        return "\n".join(out) + "\n"


def percentage_change(value: float, baseline: float) -> float:
    """``100 * value / baseline``, as in the "PC over naive" rows (100% = no change)."""
    return 100.0 * value / baseline


def _csv_field(text: str) -> str:
    return f'"{text}"' if ("," in text or '"' in text) else text


def run_cell(train_manifests, test_manifests, sampler: SamplerConfig, options: TrainOptions,
             seed: int, threads: int = 1, std_over: str = "datasets",
             cache: TileCache | None = None) -> tuple[BaselineModel, EvalReport]:
    """fit + evaluate for one sampler configuration."""
    cache = cache or TileCache()
    model = fit(train_manifests, sampler, options, seed, cache)
    report = evaluate(model, test_manifests, sampler, seed, threads, std_over, cache,
                      meta={"training": options.to_json()})
    return model, report


def bench_matrix(train_manifests, test_manifests, grids: dict, baseline: SamplerConfig,
                 options: TrainOptions, seed: int, threads: int = 1, std_over: str = "datasets",
                 on_cell=None) -> list:
    """Fit and evaluate every sampler of every grid against a naive baseline column.

    ``grids`` maps a grid name to a list of SamplerConfig. Identical
    configurations are computed once. A failing cell is recorded with its
    error and the remaining cells still run. ``on_cell(sampler, model,
    report)`` is called after each successful cell.
    """
    train = _as_manifests(train_manifests)
    test = _as_manifests(test_manifests)
    cache = TileCache()
    done: dict = {}

    def cell(sampler: SamplerConfig) -> CellResult:
        if sampler not in done:
            try:
                model, report = run_cell(train, test, sampler, options, seed, threads, std_over, cache)
            except AerialSegError as exc:
                logger.warning("cell %s failed: %s", sampler.label, exc)
                done[sampler] = CellResult(sampler, error=str(exc))
            else:
                done[sampler] = CellResult(sampler, report)
                if on_cell is not None:
                    on_cell(sampler, model, report)
        return done[sampler]

    results = []
    base = cell(baseline)
    for name, samplers in grids.items():
        results.append(GridResult(name, base, [cell(s) for s in samplers]))
    return results


def write_grid(result: GridResult, out_dir, formats=("json", "csv", "table")) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            text = json.dumps(result.to_json(), indent=2) + "\n"
            path = out / f"{result.name}.json"
        elif fmt == "csv":
            text = result.to_csv()
            path = out / f"{result.name}.csv"
        elif fmt == "table":
            text = result.to_table()
            path = out / f"{result.name}.txt"
        else:
            raise EvaluationError(f"unknown report format {fmt!r}")
        path.write_text(text)
        written.append(path)
    return written


def write_report(report: EvalReport, out_dir, stem: str = "report", formats=("json",)) -> list:
    """Render every format first, then write; nothing is written if rendering fails."""
    texts = {fmt: render_report(report, fmt) for fmt in formats}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = {"json": "json", "csv": "csv", "table": "txt"}
    paths = []
    for fmt, text in texts.items():
        path = out / f"{stem}.{suffix[fmt]}"
        path.write_text(text)
        paths.append(path)
    return paths
