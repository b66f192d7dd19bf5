"""Datasets, scenario bundles, and the gap benchmark protocol."""

import numpy as np
import numpy.testing as npt
import pytest

from autoclust.autonomy import IdentityAutonomy, ParametricAutonomy
from autoclust.core import Dataset
from autoclust.scenarios import (
    BenchmarkConfigs,
    GapReport,
    Scenario,
    blob_centers,
    four_blob_dataset,
    grid16_dataset,
    honor_with_uniform_override,
    load_geocsv,
    make_blobs,
    parametric_scenario,
    run_benchmark,
)
from autoclust.solver import AnnealConfig

from conftest import make_rng, random_clusters, random_dataset


# ---------------------------------------------------------------------------
# make_blobs and presets

def test_make_blobs_counts_and_means():
    data = make_blobs(4, 50, spread=0.05, seed=0)
    assert data.n == 200
    assert data.dim == 2
    centers = blob_centers(4)
    for b in range(4):
        block = data.points[b * 50:(b + 1) * 50]
        # empirical mean of n iid draws: within 3 sigma / sqrt(n) per axis
        npt.assert_allclose(block.mean(axis=0), centers[b],
                            atol=3 * 0.05 / np.sqrt(50))


def test_make_blobs_zero_spread_coincides():
    data = make_blobs(4, 10, spread=0.0, seed=1)
    centers = blob_centers(4)
    for b in range(4):
        block = data.points[b * 10:(b + 1) * 10]
        npt.assert_array_equal(block, np.tile(centers[b], (10, 1)))


def test_make_blobs_sixteen_grid_size():
    data = make_blobs(16, 200, spread=0.01, seed=11)
    assert data.n == 3200


def test_make_blobs_custom_centers_validated():
    with pytest.raises(ValueError):
        make_blobs(3, 5, 0.1, 0, centers=np.zeros((2, 2)))


def test_make_blobs_seed_determinism():
    a = make_blobs(2, 20, 0.1, seed=5)
    b = make_blobs(2, 20, 0.1, seed=5)
    npt.assert_array_equal(a.points, b.points)


def test_presets_shapes():
    assert four_blob_dataset().n == 200
    assert grid16_dataset().n == 3200


def test_blob_centers_16_covers_quadrants():
    centers = blob_centers(16)
    assert centers.shape == (16, 2)
    for qx in (-1, 1):
        for qy in (-1, 1):
            sel = ((centers[:, 0] - 0.5) * qx > 0) & ((centers[:, 1] - 0.5) * qy > 0)
            assert sel.sum() == 4


# ---------------------------------------------------------------------------
# honor kernel

def test_honor_kernel_structure():
    kernel = honor_with_uniform_override(16, 3, honor_prob=15.0 / 16.0)
    data = random_dataset(3, 2, seed=2)
    clusters = random_clusters(16, 2, seed=3)
    t = kernel.tensor(data, clusters)
    diag = t[np.arange(16), np.arange(16), :]
    npt.assert_allclose(diag, 15.0 / 16.0, atol=1e-15)
    off = t[0, 1, :]
    npt.assert_allclose(off, 1.0 / 240.0, atol=1e-15)
    npt.assert_allclose(t.sum(axis=0), 1.0, atol=1e-12)


def test_honor_kernel_validates_probability():
    with pytest.raises(ValueError):
        honor_with_uniform_override(4, 10, honor_prob=1.5)


def test_honor_kernel_single_cluster():
    kernel = honor_with_uniform_override(1, 5, honor_prob=0.3)
    data = random_dataset(5, 2, seed=4)
    clusters = random_clusters(1, 2, seed=5)
    npt.assert_array_equal(kernel.tensor(data, clusters), np.ones((1, 1, 5)))


# ---------------------------------------------------------------------------
# coordinate CSV loading

def test_load_geocsv_three_rows(tmp_path):
    path = tmp_path / "geo.csv"
    path.write_text("lon,lat\n10.0,40.0\n20.0,60.0\n15.0,50.0\n")
    data, transform = load_geocsv(path)
    assert data.n == 3
    assert data.points.min() >= 0.0 and data.points.max() <= 1.0
    npt.assert_allclose(data.weights, 1.0 / 3.0)
    raw = transform.denormalize(data.points)
    npt.assert_allclose(raw, [[10.0, 40.0], [20.0, 60.0], [15.0, 50.0]],
                        atol=1e-12)


def test_load_geocsv_round_trip_is_exact(tmp_path):
    rng = make_rng(6)
    raw = rng.uniform(-500, 500, size=(20, 3))
    lines = ["a,b,c"] + [",".join(repr(float(v)) for v in row) for row in raw]
    path = tmp_path / "geo.csv"
    path.write_text("\n".join(lines) + "\n")
    data, transform = load_geocsv(path)
    npt.assert_allclose(transform.denormalize(data.points), raw, atol=1e-12)


def test_load_geocsv_drops_weight_column(tmp_path):
    path = tmp_path / "geo.csv"
    path.write_text("x,y,weight\n0.0,0.0,2.0\n1.0,1.0,2.0\n")
    data, _ = load_geocsv(path)
    assert data.dim == 2


def test_load_geocsv_header_only(tmp_path):
    path = tmp_path / "geo.csv"
    path.write_text("x,y\n")
    with pytest.raises(ValueError, match="no data rows"):
        load_geocsv(path)


def test_load_geocsv_empty_file(tmp_path):
    path = tmp_path / "geo.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="empty file"):
        load_geocsv(path)


def test_load_geocsv_constant_axis_maps_to_zero(tmp_path):
    path = tmp_path / "geo.csv"
    path.write_text("x,y\n5.0,1.0\n5.0,2.0\n")
    data, transform = load_geocsv(path)
    npt.assert_array_equal(data.points[:, 0], [0.0, 0.0])
    npt.assert_allclose(transform.denormalize(data.points)[:, 0], 5.0)


# ---------------------------------------------------------------------------
# scenario construction

def test_parametric_scenario_bundles_fields():
    sc = parametric_scenario(0.3, 0.5, 1.0, 0.01)
    assert isinstance(sc.autonomy, ParametricAutonomy)
    assert (sc.kappa, sc.gamma, sc.zeta, sc.temperature) == (0.3, 0.5, 1.0, 0.01)
    assert sc.num_clusters == 4
    assert sc.dataset.n == 200
    assert "kappa=0.3" in sc.name


def test_parametric_scenario_accepts_custom_dataset():
    ds = make_blobs(2, 10, 0.05, seed=9)
    sc = parametric_scenario(0.2, 0.0, 1.0, 1.0, dataset=ds, num_clusters=2)
    assert sc.dataset is ds
    assert sc.num_clusters == 2


# ---------------------------------------------------------------------------
# benchmark protocol

def test_run_benchmark_rejects_unknown_method():
    sc = parametric_scenario(0.2, 0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        run_benchmark(sc, methods=("ground_truth", "oracle"))


def test_identity_scenario_ignored_gap_is_zero():
    """With compliant entities the identity solve IS the true solve."""
    sc = Scenario("identity", four_blob_dataset(), IdentityAutonomy(), 4)
    reports = run_benchmark(sc, methods=("ground_truth", "ignored"))
    gaps = {r.method: r.gap_percent for r in reports}
    assert gaps["ground_truth"] == 0.0
    assert abs(gaps["ignored"]) < 0.5


def test_ground_truth_gap_is_identically_zero():
    sc = parametric_scenario(0.4, 0.5, 1.0, 0.01)
    reports = run_benchmark(sc, methods=("ground_truth",))
    assert reports[0].gap_percent == 0.0
    assert reports[0].distortion == reports[0].distortion_ground_truth


def test_ignored_gap_matches_reported_band_kappa_half():
    sc = parametric_scenario(0.5, 0.5, 1.0, 0.01)
    reports = run_benchmark(sc, methods=("ground_truth", "ignored"))
    gap = {r.method: r.gap_percent for r in reports}["ignored"]
    assert 100.20 - 15 <= gap <= 100.20 + 15


def test_ignored_gap_matches_reported_band_kappa_tenth():
    sc = parametric_scenario(0.1, 0.0, 1.0, 0.01)
    reports = run_benchmark(sc, methods=("ground_truth", "ignored"))
    gap = {r.method: r.gap_percent for r in reports}["ignored"]
    assert 10.73 - 5 <= gap <= 10.73 + 5


def test_ignoring_autonomy_hurts_more_as_kappa_grows():
    gaps = []
    for kappa in (0.1, 0.2, 0.3, 0.4):
        sc = parametric_scenario(kappa, 0.5, 1.0, 0.01)
        reports = run_benchmark(sc, methods=("ground_truth", "ignored"))
        gaps.append({r.method: r.gap_percent for r in reports}["ignored"])
    assert all(a <= b for a, b in zip(gaps, gaps[1:]))


def test_run_benchmark_reports_are_reproducible():
    sc = parametric_scenario(0.3, 0.5, 1.0, 0.01)
    a = run_benchmark(sc, methods=("ground_truth", "ignored"))
    b = run_benchmark(sc, methods=("ground_truth", "ignored"))
    for ra, rb in zip(a, b):
        assert ra.to_dict() == rb.to_dict()


def test_gap_report_to_dict_round_trip():
    report = GapReport("s", "ignored", 1.5, 1.0, 50.0, 0.2, 0.5, 1.0, 0.01)
    d = report.to_dict()
    assert d["method"] == "ignored"
    assert d["gap_percent"] == 50.0
    assert d["kappa"] == 0.2
