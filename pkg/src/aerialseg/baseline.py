"""Geometric nearest-centroid segmenter.

A deliberately small stand-in for a deep network: every point gets five
geometric features, and the class whose centroid is nearest wins, with each
class measuring distance in units of its own per-feature spread (a diagonal
Mahalanobis distance without the log-determinant term). Class weights
(inverse class frequency) enter according to ``weighting``:

* ``"balanced"`` (default): the weights are recorded but not applied.
  Every class statistic is a per-class mean, so class frequency already
  has no say in the decision.
* ``"divisor"``: each class distance is divided by its class weight. This
  pushes decisions hard towards rare classes; with Ground at ~80% of the
  points it relabels most ground.

Features, all computed on the sample as the model sees it:

* ``height``: z minus the lowest z within a 5 m xy-disk.
* ``linearity``, ``planarity``: (l1-l2)/l1 and (l2-l3)/l1 from the
  covariance eigenvalues l1 >= l2 >= l3 of the 16 nearest neighbours.
* ``verticality``: 1 - |n_z| for the neighbourhood normal n (smallest
  eigenvector).
* ``density_ratio``: the sample's median 16-NN radius divided by the
  point's own 16-NN radius (1 = typical local density), capped at 10.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aerialseg.errors import ModelError
from aerialseg.spatial import KdTree
from aerialseg.taxonomy import EVAL_CLASSES, UnifiedClass

FEATURE_NAMES = ("height", "linearity", "planarity", "verticality", "density_ratio")
N_NEIGHBOURS = 16
GROUND_RADIUS = 5.0
MAX_DENSITY_RATIO = 10.0
MODEL_FORMAT = "aerialseg-baseline"
MODEL_VERSION = 2
# Per-class spreads are floored at this fraction of the pooled spread.
MIN_RELATIVE_SCALE = 1e-3
WEIGHTINGS = ("balanced", "divisor")


def covariance_features(neighbourhoods: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and (linearity, planarity, verticality) per neighbourhood.

    ``neighbourhoods`` has shape (m, k, 3). Degenerate neighbourhoods (all
    points coincident) get linearity = planarity = verticality = 0.
    """
    centred = neighbourhoods - neighbourhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centred, centred) / neighbourhoods.shape[1]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    evals = np.clip(evals[:, ::-1], 0.0, None)
    l1, l2, l3 = evals[:, 0], evals[:, 1], evals[:, 2]
    scale = np.abs(neighbourhoods).max(axis=(1, 2)) + 1.0
    ok = l1 > (1e-12 * scale) ** 2
    safe = np.where(ok, l1, 1.0)
    linearity = np.where(ok, (l1 - l2) / safe, 0.0)
    planarity = np.where(ok, (l2 - l3) / safe, 0.0)
    normal_z = np.abs(evecs[:, 2, 0])
    verticality = np.where(ok, 1.0 - normal_z, 0.0)
    feats = np.stack([linearity, planarity, verticality], axis=1)
    return evals, np.clip(feats, 0.0, 1.0)


def lowest_in_disk(positions: np.ndarray, radius: float = GROUND_RADIUS,
                   query_indices: np.ndarray | None = None) -> np.ndarray:
    """Lowest z among points within ``radius`` in xy of each queried point."""
    flat = positions.copy()
    flat[:, 2] = 0.0
    tree = KdTree(flat)
    queries = np.arange(len(positions)) if query_indices is None else np.asarray(query_indices)
    out = positions[queries, 2].copy()
    r2 = radius * radius
    z = positions[:, 2]
    for group, cand, d2 in tree.query_groups(flat[queries], radius):
        masked = np.where(d2 <= r2, z[cand][None, :], np.inf)
        out[group] = np.minimum(out[group], masked.min(axis=1))
    return out


def extract_features(positions, tree: KdTree | None = None,
                     query_indices: np.ndarray | None = None) -> np.ndarray:
    """Feature matrix (m, 5) for the queried points of a sample.

    ``positions`` are the sample's points; ``tree`` is a KdTree over them
    (built when omitted). Requires at least ``N_NEIGHBOURS + 1`` points.
    """
    pts = np.asarray(getattr(positions, "positions", positions), dtype=np.float64)
    if len(pts) < N_NEIGHBOURS + 1:
        raise ModelError(f"feature extraction needs at least {N_NEIGHBOURS + 1} points, got {len(pts)}")
    tree = tree if tree is not None else KdTree(pts)
    queries = np.arange(len(pts)) if query_indices is None else np.asarray(query_indices, dtype=np.int64)
    nbr, dist = tree.knn_many(pts[queries], N_NEIGHBOURS)
    _, shape = covariance_features(pts[nbr])
    height = pts[queries, 2] - lowest_in_disk(pts, GROUND_RADIUS, queries)
    r_k = dist[:, -1]
    # density is judged against the whole sample, not just the queried points
    probe = tree.knn_many(pts[:: max(1, len(pts) // 2048)], N_NEIGHBOURS)[1][:, -1]
    typical = float(np.median(probe))
    if typical <= 0:
        ratio = np.ones(len(queries))
    else:
        ratio = np.minimum(typical / np.maximum(r_k, typical / MAX_DENSITY_RATIO), MAX_DENSITY_RATIO)
    return np.column_stack([height, shape, ratio])


@dataclass
class BaselineModel:
    centroids: np.ndarray  # (3, n_features), rows in EVAL_CLASSES order
    scales: np.ndarray  # (3, n_features) per-class spread
    class_weights: dict  # UnifiedClass -> weight
    meta: dict = field(default_factory=dict)
    weighting: str = "balanced"

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ModelError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        shape = (len(EVAL_CLASSES), len(FEATURE_NAMES))
        if self.centroids.shape != shape or self.scales.shape != shape:
            raise ModelError(f"centroids and scales must have shape {shape}")
        if not (np.isfinite(self.centroids).all() and np.isfinite(self.scales).all()):
            raise ModelError("model parameters must be finite")
        if (self.scales <= 0).any():
            raise ModelError("feature scales must be positive")

    def weights_array(self) -> np.ndarray:
        return np.array([self.class_weights.get(c, 1.0) for c in EVAL_CLASSES])

    def classify(self, features: np.ndarray) -> np.ndarray:
        """Nearest centroid per feature row; returns UnifiedClass codes."""
        z = (features[:, None, :] - self.centroids[None, :, :]) / self.scales[None, :, :]
        dist = np.sqrt((z ** 2).sum(axis=2))
        if self.weighting == "divisor":
            dist = dist / self.weights_array()
        return np.asarray(EVAL_CLASSES, dtype=np.uint8)[dist.argmin(axis=1)]

    def predict(self, sample, tree: KdTree | None = None) -> np.ndarray:
        """Per-point labels for a sample (or a raw (n, 3) array); never Undefined."""
        return self.classify(extract_features(sample, tree))

    def same_as(self, other: "BaselineModel") -> bool:
        return (np.array_equal(self.centroids, other.centroids)
                and np.array_equal(self.scales, other.scales)
                and self.class_weights == other.class_weights
                and self.weighting == other.weighting)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "features": list(FEATURE_NAMES),
            "classes": [c.title for c in EVAL_CLASSES],
            "centroids": self.centroids.tolist(),
            "scales": self.scales.tolist(),
            "class_weights": {c.title: w for c, w in self.class_weights.items()},
            "weighting": self.weighting,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BaselineModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ModelError("not a baseline model document")
        if doc.get("version") != MODEL_VERSION:
            raise ModelError(f"unsupported model version {doc.get('version')}")
        if list(doc.get("features", [])) != list(FEATURE_NAMES):
            raise ModelError("model was trained on a different feature set")
        weights = {UnifiedClass.parse(k): float(v) for k, v in doc["class_weights"].items()}
        return cls(np.array(doc["centroids"]), np.array(doc["scales"]), weights, doc.get("meta", {}),
                   doc.get("weighting", "balanced"))


def save_model(model: BaselineModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=2) + "\n")


def load_model(path) -> BaselineModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from None
    return BaselineModel.from_json(doc)


class FeatureAccumulator:
    """Mergeable per-class sums for centroid fitting.

    Merging is plain addition, so partial accumulators built in any
    grouping give the same model when merged in a fixed order.
    """

    def __init__(self):
        shape = (len(EVAL_CLASSES), len(FEATURE_NAMES))
        self.count = np.zeros(len(EVAL_CLASSES), dtype=np.int64)
        self.sums = np.zeros(shape)
        self.sq_sums = np.zeros(shape)

    def add(self, features: np.ndarray, labels: np.ndarray) -> None:
        labels = np.asarray(labels)
        keep = labels != UnifiedClass.UNDEFINED
        features, labels = features[keep], labels[keep].astype(np.int64)
        for i, c in enumerate(EVAL_CLASSES):
            sel = features[labels == c]
            self.count[i] += len(sel)
            self.sums[i] += sel.sum(axis=0)
            self.sq_sums[i] += (sel ** 2).sum(axis=0)

    def merge(self, other: "FeatureAccumulator") -> None:
        self.count += other.count
        self.sums += other.sums
        self.sq_sums += other.sq_sums

    def finish(self, class_weights: dict, meta: dict | None = None,
               weighting: str = "balanced") -> BaselineModel:
        """Centroids and spreads are per-class means and standard deviations.

        A spread that collapses (a feature constant within a class) is
        floored at ``MIN_RELATIVE_SCALE`` times the pooled spread, which
        keeps the model invariant to uniform feature rescaling.
        """
        missing = [c.title for c, n in zip(EVAL_CLASSES, self.count) if n == 0]
        if missing:
            raise ModelError(f"no training points of class {', '.join(missing)}")
        n = self.count[:, None].astype(np.float64)
        centroids = self.sums / n
        var = np.maximum(self.sq_sums / n - centroids ** 2, 0.0)
        total = float(self.count.sum())
        pooled_mean = self.sums.sum(axis=0) / total
        pooled = np.sqrt(np.maximum(self.sq_sums.sum(axis=0) / total - pooled_mean ** 2, 0.0))
        floor = np.where(pooled > 1e-12, MIN_RELATIVE_SCALE * pooled, 1.0)
        scales = np.maximum(np.sqrt(var), floor[None, :])
        return BaselineModel(centroids, scales, dict(class_weights), dict(meta or {}), weighting)
