"""Acceptance criteria 1-9, one test each.

Every test prints a single ``CRITERION n: PASS|FAIL ...`` line (visible in
``pytest -v`` output) and then asserts. Criteria 8 and 9 run the full desk
benchmark through the CLI twice and take a few minutes.
"""

import json
import math
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from aerialseg.cli import main
from aerialseg.evaluation import ConfusionMatrix, accumulate, aggregate, iou_per_class, pooled_iou
from aerialseg.sampling import (
    NAIVE,
    SamplerConfig,
    center,
    draw_sample,
    jitter,
    max_density,
    radius_for_count,
    rotate_z,
    sample_constant_density,
    sample_constant_radius,
    shuffle,
)
from aerialseg.spatial import KdTree
from aerialseg.synth import SceneSpec, generate_scene
from aerialseg.taxonomy import EVAL_CLASSES, SensorKind, UnifiedClass
from aerialseg.tilestore import Tile

from conftest import brute_knn, brute_radius


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail, elapsed, budget=None):
        within = budget is None or elapsed <= budget
        status = "PASS" if ok and within else "FAIL"
        limit = "" if budget is None else f" (budget {budget:g} s)"
        with capsys.disabled():
            print(f"\nCRITERION {number}: {status} - {detail}; {elapsed:.2f} s{limit}")
        assert ok, detail
        assert within, f"runtime {elapsed:.1f} s exceeds {budget} s"

    return emit


def flat_tile(extent, density, seed):
    spec = SceneSpec(extent=extent, target_density=density, terrain_amplitude=0, terrain_slope=0,
                     building_count=(0, 0), tree_count=(0, 0), clutter_fraction=0, seed=seed)
    return generate_scene(spec)


def central_point(tile):
    xy = tile.positions[:, :2]
    mid = (xy.min(axis=0) + xy.max(axis=0)) / 2
    return int(np.argmin(((xy - mid) ** 2).sum(axis=1)))


def test_criterion_1_density_algebra(verdict):
    t0 = time.perf_counter()
    top = max_density(65536, 145)
    pairs = [(12, 36), (13, 51), (14, 72), (15, 102), (16, 145)]
    dens = [max_density(2 ** k, r) for k, r in pairs]
    ok = round(top, 3) == 0.992 and all(abs(d - 1.0) <= 0.02 for d in dens)
    detail = f"max_density(65536,145)={top:.4f}; pair densities " + ", ".join(f"{d:.4f}" for d in dens)
    verdict(1, ok, detail, time.perf_counter() - t0, budget=1)


def test_criterion_2_radius_derivation(verdict):
    t0 = time.perf_counter()
    r_sparse, r_medium = radius_for_count(65536, 1.75), radius_for_count(65536, 65.343)
    ok = 104 <= r_sparse <= 115 and 17 <= r_medium <= 19
    parts = [f"r(1.75)={r_sparse:.2f} m", f"r(65.343)={r_medium:.2f} m"]
    for density, extent, expected in ((1.75, (300, 300), r_sparse), (65.343, (60, 60), r_medium)):
        tile = flat_tile(extent, density, seed=21)
        sample = draw_sample(tile, KdTree(tile.positions), central_point(tile), SamplerConfig(NAIVE, n_points=65536),
                             np.random.default_rng(0))
        measured = float(np.linalg.norm(sample.positions, axis=1).max())
        rel = abs(measured - expected) / expected
        ok &= rel <= 0.05
        parts.append(f"measured {measured:.2f} m at {density} pts/m2 ({100 * rel:.2f}% off)")
    verdict(2, ok, "; ".join(parts), time.perf_counter() - t0, budget=60)


def test_criterion_3_spatial_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches = 0
    for case in range(100):
        n = int(rng.integers(17, 10_001))
        if case % 4 == 0:
            pts = rng.integers(0, 20, size=(n, 3)).astype(float)  # many exact ties
        else:
            pts = rng.normal(scale=rng.uniform(0.1, 50), size=(n, 3))
        tree = KdTree(pts)
        q = pts[rng.integers(n)] + rng.normal(scale=0.5, size=3) * (case % 2)
        r = float(rng.uniform(0, 3 * pts.std()))
        mismatches += not np.array_equal(tree.knn(q, 16), brute_knn(pts, q, 16))
        mismatches += not np.array_equal(tree.radius_query(q, r), brute_radius(pts, q, r))
    verdict(3, mismatches == 0, f"100 cases, {mismatches} mismatches against brute force",
            time.perf_counter() - t0, budget=30)


def _set_iou(truth, pred, keep):
    out = {}
    for c in EVAL_CLASSES:
        t = {i for i in keep if truth[i] == c}
        p = {i for i in keep if pred[i] == c}
        out[c] = len(t & p) / len(t | p) if t | p else None
    return out


def test_criterion_4_iou_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    bad_oracle = bad_exclusion = 0
    for _ in range(1000):
        n = int(rng.integers(0, 65))
        truth = rng.integers(0, 4, n)
        pred = rng.integers(0, 3, n)
        synthetic = rng.random(n) < 0.25
        keep = [i for i in range(n) if not synthetic[i] and truth[i] != UnifiedClass.UNDEFINED]
        cm = accumulate(ConfusionMatrix(), truth, pred, synthetic)
        bad_oracle += iou_per_class(cm) != _set_iou(truth.tolist(), pred.tolist(), keep)
        # excluded points get fresh arbitrary truth/predictions: no IoU may move
        t2, p2 = truth.copy(), pred.copy()
        excluded = synthetic | (truth == UnifiedClass.UNDEFINED)
        p2[excluded] = rng.integers(0, 3, int(excluded.sum()))
        t2[synthetic] = rng.integers(0, 4, int(synthetic.sum()))
        bad_exclusion += iou_per_class(accumulate(ConfusionMatrix(), t2, p2, synthetic)) != iou_per_class(cm)
    ok = bad_oracle == 0 and bad_exclusion == 0
    verdict(4, ok, f"1000 fuzzed cases: {bad_oracle} oracle mismatches, {bad_exclusion} exclusion leaks",
            time.perf_counter() - t0, budget=10)


def test_criterion_5_aggregation(verdict):
    t0 = time.perf_counter()
    lid, pho = SensorKind.LIDAR, SensorKind.PHOTOGRAMMETRY
    a = ConfusionMatrix(np.array([[3, 1, 0], [0, 3, 1], [1, 0, 3]]))  # every class IoU 0.6
    b = ConfusionMatrix(np.array([[8, 1, 0], [0, 8, 1], [1, 0, 8]]))  # every class IoU 0.8
    rep = aggregate({("A", "s"): a, ("B", "s"): b}, {"A": lid, "B": pho})
    ok = math.isclose(rep.overall, 0.7, abs_tol=1e-12) and math.isclose(rep.overall_std, 0.1, abs_tol=1e-12)
    const = aggregate({(d, s): a for d in "XYZ" for s in "pq"}, {"X": lid, "Y": pho, "Z": lid})
    ok &= const.overall_std == 0.0 and math.isclose(const.overall, 0.6, abs_tol=1e-12)
    small = accumulate(ConfusionMatrix(), [0, 1, 2], [0, 1, 0])
    big = accumulate(ConfusionMatrix(), [0] * 90 + [1] * 5 + [2] * 5, [0] * 100)
    mm = aggregate({("A", "s1"): small, ("A", "s2"): big}, {"A": lid}).overall
    pooled = pooled_iou([small, big])
    ok &= math.isclose(mm, 0.4, abs_tol=1e-12) and not math.isclose(mm, pooled, abs_tol=1e-6)
    detail = (f"overall {rep.overall:.6f}, std {rep.overall_std:.6f}; constant-tree std {const.overall_std}; "
              f"mean-of-means {mm:.4f} vs pooled {pooled:.4f}")
    verdict(5, ok, detail, time.perf_counter() - t0, budget=1)


def test_criterion_6_augmentations(verdict):
    t0 = time.perf_counter()
    tile = flat_tile((40, 40), 6, seed=6)
    rng = np.random.default_rng(6)
    tile = Tile(tile.positions + np.column_stack([np.zeros((len(tile), 2)), rng.normal(0, 3, len(tile))]),
                tile.unified_labels)
    sample = draw_sample(tile, KdTree(tile.positions), 100, SamplerConfig(NAIVE, n_points=2000), rng)
    mean_err = float(np.abs(center(sample).positions.mean(axis=0)).max())
    rot_err, z_exact = 0.0, True
    idx = rng.choice(len(sample), 300, replace=False)
    ref = np.linalg.norm(sample.positions[idx, None] - sample.positions[None, idx], axis=2)
    for theta in rng.uniform(0, 2 * math.pi, 10):
        out = rotate_z(sample, theta)
        z_exact &= np.array_equal(out.positions[:, 2], sample.positions[:, 2])
        d = np.linalg.norm(out.positions[idx, None] - out.positions[None, idx], axis=2)
        rot_err = max(rot_err, float((np.abs(d - ref) / np.maximum(ref, 1e-300))[ref > 0].max()))
    sh = shuffle(sample, rng)
    as_rows = lambda s: sorted(map(tuple, np.column_stack([s.positions, s.unified_labels, s.original_indices])))
    multiset = as_rows(sh) == as_rows(sample)
    jit = float(np.abs(jitter(sample, rng, 0.5).positions - sample.positions).max())
    ok = mean_err <= 1e-9 and rot_err <= 1e-9 and z_exact and multiset and jit <= 0.5
    detail = (f"centering {mean_err:.1e}; rotation rel err {rot_err:.1e}, z exact {z_exact}; "
              f"shuffle multiset {multiset}; jitter max {jit:.4f} m")
    verdict(6, ok, detail, time.perf_counter() - t0, budget=10)


def test_criterion_7_sampling_contracts(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    ok = True
    checked = 0
    for density, n_points, radius in ((0.5, 4096, 30.0), (8.0, 4096, 30.0), (2.0, 500, 7.5), (1.0, 3000, 25.0)):
        tile = flat_tile((90, 90), density, seed=int(density * 10))
        tree = KdTree(tile.positions)
        for origin in rng.integers(0, len(tile), 5):
            s = sample_constant_radius(tile, tree, int(origin), radius, n_points, rng)
            ball = brute_radius(tile.positions, tile.positions[origin], radius)
            real = ~s.synthetic_mask
            ok &= len(s) == n_points
            ok &= bool(np.all(np.linalg.norm(s.positions[real], axis=1) <= radius))
            ok &= bool(np.isin(s.original_indices[real], ball).all())
            ok &= s.n_synthetic == max(0, n_points - len(ball))
            checked += 1
    sparse = flat_tile((120, 120), 1.75, seed=17)
    s = sample_constant_density(sparse, KdTree(sparse.positions), central_point(sparse), 30, 32, rng)
    frac = s.n_synthetic / len(s)
    ok &= frac >= 0.90
    detail = (f"{checked} constant-radius draws honour size/membership/synthetic-count; "
              f"d=32 on 1.75 pts/m2: {len(s)} points, synthetic fraction {frac:.3f} "
              f"(each real point x{len(s) / (len(s) - s.n_synthetic):.1f})")
    verdict(7, ok, detail, time.perf_counter() - t0, budget=60)


def _desk_run_config(tmp: Path) -> Path:
    doc = json.loads(resources.files("aerialseg").joinpath("data/desk_run.json").read_text())
    path = tmp / "desk_run.json"
    path.write_text(json.dumps(doc))
    return path


def _run_benchmark(root: Path) -> tuple[int, float]:
    t0 = time.perf_counter()
    code = main(["synth", "--output", str(root / "bench")])
    if code == 0:
        code = main(["bench-matrix", "--config", str(_desk_run_config(root)), "--manifests",
                     str(root / "bench" / "manifests"), "--output", str(root / "out")])
    return code, time.perf_counter() - t0


@pytest.fixture(scope="module")
def desk_benchmark(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    code, elapsed = _run_benchmark(root)
    return root, code, elapsed


@pytest.mark.slow
def test_criterion_8_differential_benchmark(verdict, desk_benchmark):
    root, code, elapsed = desk_benchmark
    ok = code == 0
    detail = f"bench-matrix exit {code}"
    grid_path = root / "out" / "density.json"
    if ok and grid_path.exists():
        grid = json.loads(grid_path.read_text())
        rows = {r["test_set"]: r["values"] for r in grid["rows"]}
        cols = grid["columns"]
        naive, cd = cols.index("naive N=65536"), cols.index("r=30 d=1")
        levels = ["TestLidar", "TestLidar sparse", "TestLidar medium", "TestPhoto", "TestPhoto sparse",
                  "TestPhoto medium", "Overall LIDAR", "Overall Photogrammetry", "Overall", "Overall (STD)",
                  "PC over naive"]
        missing = [name for name in levels if name not in rows or any(v is None for v in rows[name])]
        cell_report = json.loads((root / "out" / "cells" / "r_30_d_1" / "report.json").read_text())
        has_leaves = all(leaf["iou"] for leaf in cell_report["leaves"])
        o_naive, o_cd = rows["Overall"][naive], rows["Overall"][cd]
        ok = not missing and has_leaves and o_cd >= o_naive
        detail = (f"overall mean IoU constant-density r=30 d=1 {o_cd:.4f} vs naive N=65536 {o_naive:.4f} "
                  f"(PC {rows['PC over naive'][cd]:.2f}%); missing levels {missing or 'none'}")
    else:
        ok = False
    verdict(8, ok, detail, elapsed, budget=600)


def _snapshot(root: Path) -> dict:
    """Bytes of every benchmark tile, manifest, model and report under ``root``."""
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "desk_run.json"}


@pytest.mark.slow
def test_criterion_9_determinism(verdict, desk_benchmark, tmp_path):
    first_root, first_code, _ = desk_benchmark
    code, elapsed = _run_benchmark(tmp_path)
    first = _snapshot(first_root)
    second = _snapshot(tmp_path) if code == 0 else {}
    differing = sorted(str(k) for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = first_code == 0 and code == 0 and bool(first) and not differing
    detail = f"{len(first)} output files compared, {len(differing)} differ" + (
        f" ({', '.join(differing[:3])})" if differing else "")
    verdict(9, ok, detail, elapsed)
