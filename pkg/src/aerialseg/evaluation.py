"""Per-class IoU and hierarchical mean-IoU reports.

Scores are means of means at every level: class IoUs are averaged into a
subset score, subset scores into a dataset score, and dataset scores into
the overall score (and into one score per sensor kind). Counts are never
pooled across subsets.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from aerialseg.errors import EvaluationError
from aerialseg.taxonomy import EVAL_CLASSES, SensorKind, UnifiedClass

N_EVAL = len(EVAL_CLASSES)
STD_OVER = ("datasets", "subsets", "classes")
FORMATS = ("json", "csv", "table")


@dataclass
class ConfusionMatrix:
    """Counts over Ground/Building/Vegetation; rows are truth, columns prediction.

    ``excluded`` counts submitted points that were not scored (Undefined
    truth or synthetic).
    """

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_EVAL, N_EVAL), dtype=np.int64))
    excluded: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(N_EVAL, N_EVAL)
        if (self.counts < 0).any() or self.excluded < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.excluded + other.excluded)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts) and self.excluded == other.excluded


def accumulate(cm: ConfusionMatrix, truth, predicted, exclusion_mask=None) -> ConfusionMatrix:
    """Return ``cm`` plus the counts of one batch.

    Points whose truth is Undefined or whose ``exclusion_mask`` entry is set
    go to ``excluded``. Predictions must be Ground, Building or Vegetation.
    """
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(predicted).reshape(-1)
    if len(truth) != len(pred):
        raise EvaluationError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if exclusion_mask is None:
        mask = np.zeros(len(truth), dtype=bool)
    else:
        mask = np.asarray(exclusion_mask, dtype=bool).reshape(-1)
        if len(mask) != len(truth):
            raise EvaluationError(f"length mismatch: exclusion mask has {len(mask)} entries")
    if len(pred) and (pred.min() < 0 or pred.max() >= N_EVAL):
        raise EvaluationError("predictions must be Ground, Building or Vegetation (never Undefined)")
    if len(truth) and (truth.min() < 0 or truth.max() > UnifiedClass.UNDEFINED):
        raise EvaluationError("truth labels outside the unified taxonomy")
    scored = ~mask & (truth != UnifiedClass.UNDEFINED)
    t = truth[scored].astype(np.int64)
    p = pred[scored].astype(np.int64)
    batch = np.bincount(t * N_EVAL + p, minlength=N_EVAL * N_EVAL).reshape(N_EVAL, N_EVAL)
    return ConfusionMatrix(cm.counts + batch, cm.excluded + int((~scored).sum()))


def iou_per_class(cm: ConfusionMatrix) -> dict:
    """TP / (TP + FN + FP) per class; ``None`` for classes absent from truth and prediction."""
    tp = np.diag(cm.counts)
    fn = cm.counts.sum(axis=1) - tp
    fp = cm.counts.sum(axis=0) - tp
    out = {}
    for i, c in enumerate(EVAL_CLASSES):
        denom = int(tp[i] + fn[i] + fp[i])
        out[c] = None if denom == 0 else int(tp[i]) / denom
    return out


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _pstd(values) -> float:
    vals = [v for v in values if v is not None]
    if not vals:
        return 0.0
    m = math.fsum(vals) / len(vals)
    return math.sqrt(math.fsum((v - m) ** 2 for v in vals) / len(vals))


@dataclass
class Leaf:
    dataset: str
    subset: str
    matrix: ConfusionMatrix
    iou: dict = field(default_factory=dict)
    score: float | None = None


@dataclass
class DatasetScore:
    dataset: str
    sensor_kind: SensorKind
    subsets: dict  # subset -> score (None when nothing was scored)
    score: float | None


@dataclass
class EvalReport:
    leaves: list
    datasets: list
    groups: dict  # SensorKind -> mean of dataset scores (None if no dataset)
    overall: float
    overall_std: float
    std_over: str = "datasets"
    meta: dict = field(default_factory=dict)

    def dataset(self, name: str) -> DatasetScore:
        for d in self.datasets:
            if d.dataset == name:
                return d
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "leaves": [
                {
                    "dataset": leaf.dataset,
                    "subset": leaf.subset,
                    "matrix": leaf.matrix.counts.tolist(),
                    "excluded": leaf.matrix.excluded,
                    "iou": {c.title: leaf.iou[c] for c in EVAL_CLASSES},
                    "score": leaf.score,
                }
                for leaf in self.leaves
            ],
            "tree": {
                "datasets": [
                    {
                        "dataset": d.dataset,
                        "sensor_kind": d.sensor_kind.value,
                        "score": d.score,
                        "subsets": [{"subset": s, "score": v} for s, v in d.subsets.items()],
                    }
                    for d in self.datasets
                ],
            },
            "groups": {k.value: self.groups.get(k) for k in SensorKind},
            "overall": self.overall,
            "overall_std": self.overall_std,
            "std_over": self.std_over,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        """Rebuild from the stored leaf matrices; derived scores are recomputed."""
        try:
            leaves = [
                ((l["dataset"], l["subset"]), ConfusionMatrix(np.array(l["matrix"]), int(l["excluded"])))
                for l in doc["leaves"]
            ]
            kinds = {d["dataset"]: SensorKind(d["sensor_kind"]) for d in doc["tree"]["datasets"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(f"malformed report JSON: {exc}") from None
        return aggregate(dict(leaves), kinds, std_over=doc.get("std_over", "datasets"),
                         meta=doc.get("meta", {}))


def aggregate(leaf_matrices: dict, sensor_kinds: dict, std_over: str = "datasets",
              meta: dict | None = None) -> EvalReport:
    """Build the report tree from ``(dataset, subset) -> ConfusionMatrix``.

    Args:
        leaf_matrices: one confusion matrix per (dataset, subset).
        sensor_kinds: dataset -> SensorKind, used for the group means.
        std_over: dispersion reported as ``overall_std``: population std of
            dataset scores (default), of subset scores, or of class IoUs.
        meta: free-form metadata stored verbatim (seed, configs).
    """
    if std_over not in STD_OVER:
        raise EvaluationError(f"std_over must be one of {STD_OVER}")
    if not leaf_matrices:
        raise EvaluationError("empty report: no (dataset, subset) results")
    leaves = []
    for (dataset, subset), cm in sorted(leaf_matrices.items()):
        iou = iou_per_class(cm)
        leaves.append(Leaf(dataset, subset, cm, iou, _mean(iou.values())))
    if all(leaf.score is None for leaf in leaves):
        raise EvaluationError("empty report: every point was excluded from scoring")

    datasets = []
    for name in sorted({leaf.dataset for leaf in leaves}):
        if name not in sensor_kinds:
            raise EvaluationError(f"no sensor kind given for dataset {name!r}")
        subs = {leaf.subset: leaf.score for leaf in leaves if leaf.dataset == name}
        datasets.append(DatasetScore(name, SensorKind(sensor_kinds[name]), subs, _mean(subs.values())))

    overall = _mean(d.score for d in datasets)
    groups = {kind: _mean(d.score for d in datasets if d.sensor_kind == kind) for kind in SensorKind}
    if std_over == "datasets":
        spread = _pstd(d.score for d in datasets)
    elif std_over == "subsets":
        spread = _pstd(leaf.score for leaf in leaves)
    else:
        spread = _pstd(v for leaf in leaves for v in leaf.iou.values())
    return EvalReport(leaves, datasets, groups, overall, spread, std_over, dict(meta or {}))


def pooled_iou(leaf_matrices) -> float | None:
    """Mean class IoU of the summed matrices (for contrast with mean-of-means)."""
    total = ConfusionMatrix()
    for cm in leaf_matrices:
        total = total + cm
    return _mean(iou_per_class(total).values())


# -- rendering -------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def render_report(report: EvalReport, fmt: str = "json") -> str:
    """Render as ``json``, ``csv`` (dataset,subset,class,iou,level) or ``table``."""
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "subset", "class", "iou", "level"])
        for leaf in report.leaves:
            for c in EVAL_CLASSES:
                w.writerow([leaf.dataset, leaf.subset, c.title, _fmt(leaf.iou[c]), "class"])
            w.writerow([leaf.dataset, leaf.subset, "", _fmt(leaf.score), "subset"])
        for d in report.datasets:
            w.writerow([d.dataset, "", "", _fmt(d.score), "dataset"])
        for kind in SensorKind:
            w.writerow([kind.value, "", "", _fmt(report.groups.get(kind)), "group"])
        w.writerow(["", "", "", _fmt(report.overall), "overall"])
        w.writerow(["", "", "", _fmt(report.overall_std), "overall_std"])
        return buf.getvalue()
    if fmt == "table":
        rows = []
        for d in report.datasets:
            rows.append((f"{d.dataset}", d.score))
            if len(d.subsets) > 1:
                rows += [(f"  {d.dataset} {s}", v) for s, v in d.subsets.items()]
        rows.append(("Overall LIDAR", report.groups.get(SensorKind.LIDAR)))
        rows.append(("Overall Photogrammetry", report.groups.get(SensorKind.PHOTOGRAMMETRY)))
        rows.append(("Overall", report.overall))
        rows.append(("Overall (STD)", report.overall_std))
        width = max(len(name) for name, _ in rows)
        lines = [f"{'Test Set'.ljust(width)}  Mean IoU"]
        lines.append("-" * (width + 10))
        for name, v in rows:
            lines.append(f"{name.ljust(width)}  {'-' if v is None else f'{v:.3f}'}")
        return "\n".join(lines) + "\n"
    raise EvaluationError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
