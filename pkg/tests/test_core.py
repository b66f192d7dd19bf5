"""Core data structures and the averaged-distance objective."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoclust.autonomy import IdentityAutonomy, TabularAutonomy
from autoclust.core import (
    AssignmentPolicy,
    ClusterSet,
    Dataset,
    avg_distance_matrix,
    harden,
    objective_D,
    read_dataset_csv,
    sqdist_matrix,
    squared_distance,
    write_dataset_csv,
)
from autoclust.solver import gibbs_policy

from conftest import make_rng, random_clusters, random_dataset, random_tabular


# ---------------------------------------------------------------------------
# squared_distance

def test_squared_distance_zero_at_equal_points():
    x = np.array([0.3, -1.2, 4.0])
    assert squared_distance(x, x) == 0.0


def test_squared_distance_three_four_five():
    assert squared_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 25.0


def test_squared_distance_matches_scalar_loop():
    rng = make_rng(11)
    x = rng.normal(size=5)
    y = rng.normal(size=5)
    expected = 0.0
    for a, b in zip(x, y):
        expected += (a - b) ** 2
    npt.assert_allclose(squared_distance(x, y), expected, rtol=1e-14)


def test_squared_distance_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        squared_distance(np.zeros(2), np.zeros(3))


def test_sqdist_matrix_matches_pairwise_loop():
    rng = make_rng(3)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(5, 3))
    m = sqdist_matrix(a, b)
    assert m.shape == (4, 5)
    for i in range(4):
        for j in range(5):
            npt.assert_allclose(m[i, j], squared_distance(a[i], b[j]),
                                rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# Dataset / ClusterSet / AssignmentPolicy containers

def test_dataset_normalizes_weights_and_freezes_arrays():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    data = Dataset.from_points(pts, weights=np.array([2.0, 6.0]))
    npt.assert_allclose(data.weights, [0.25, 0.75])
    assert not data.points.flags.writeable
    assert not data.weights.flags.writeable


def test_dataset_auto_domain_radius_is_max_pairwise_distance():
    pts = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    data = Dataset.from_points(pts)
    npt.assert_allclose(data.domain_radius, 5.0)


def test_dataset_weighted_mean():
    data = Dataset.from_points(np.array([[0.0], [1.0]]),
                               weights=np.array([1.0, 3.0]))
    npt.assert_allclose(data.weighted_mean(), [0.75])


def test_policy_uniform_and_assignments():
    pol = AssignmentPolicy.uniform(3, 4)
    npt.assert_allclose(pol.probs, 0.25)
    hard = harden(pol)
    npt.assert_array_equal(hard.assignments(), [0, 0, 0])


def test_hard_policy_must_be_one_hot():
    with pytest.raises(ValueError):
        AssignmentPolicy.from_probs(np.array([[0.5, 0.5]]), mode="hard")


def test_soft_policy_rows_must_sum_to_one():
    with pytest.raises(ValueError):
        AssignmentPolicy.from_probs(np.array([[0.6, 0.6]]))


# ---------------------------------------------------------------------------
# avg_distance_matrix

def test_avg_distance_identity_equals_plain_sqdist():
    data = random_dataset(7, 2, seed=5)
    clusters = random_clusters(3, 2, seed=6)
    d = avg_distance_matrix(data, clusters, IdentityAutonomy())
    npt.assert_allclose(d, sqdist_matrix(data.points, clusters.y), atol=1e-12)


def test_avg_distance_uniform_kernel_rows_constant():
    """With p(k|j,i) = 1/K the prescribed cluster is irrelevant."""
    data = random_dataset(5, 2, seed=1)
    clusters = random_clusters(4, 2, seed=2)
    uniform = TabularAutonomy(np.full((4, 4, 5), 0.25))
    d = avg_distance_matrix(data, clusters, uniform)
    for i in range(5):
        npt.assert_allclose(d[i], d[i, 0], rtol=0, atol=1e-12)
        expected = sqdist_matrix(data.points[i:i + 1], clusters.y).mean()
        npt.assert_allclose(d[i, 0], expected, rtol=1e-12)


def test_avg_distance_matches_triple_loop():
    data = random_dataset(3, 2, seed=9)
    clusters = random_clusters(2, 2, seed=10)
    autonomy = random_tabular(2, 3, seed=11)
    t = autonomy.tensor(data, clusters)  # [k, j, i]
    d = avg_distance_matrix(data, clusters, autonomy)
    for i in range(3):
        for j in range(2):
            expected = 0.0
            for k in range(2):
                expected += t[k, j, i] * squared_distance(data.points[i],
                                                          clusters.y[k])
            npt.assert_allclose(d[i, j], expected, rtol=1e-12)


def test_avg_distance_rejects_mismatched_table():
    data = random_dataset(4, 2, seed=0)
    clusters = random_clusters(2, 2, seed=0)
    wrong_k = random_tabular(3, 4, seed=1)
    wrong_n = random_tabular(2, 5, seed=1)
    with pytest.raises(ValueError):
        avg_distance_matrix(data, clusters, wrong_k)
    with pytest.raises(ValueError):
        avg_distance_matrix(data, clusters, wrong_n)


# ---------------------------------------------------------------------------
# objective_D

def test_objective_identity_hard_is_classical_distortion():
    data = random_dataset(6, 2, seed=21, weighted=True)
    clusters = random_clusters(2, 2, seed=22)
    assign = np.array([0, 1, 0, 0, 1, 1])
    probs = np.zeros((6, 2))
    probs[np.arange(6), assign] = 1.0
    policy = AssignmentPolicy.from_probs(probs, mode="hard")
    got = objective_D(data, clusters, policy, IdentityAutonomy())
    expected = sum(
        data.weights[i] * squared_distance(data.points[i], clusters.y[assign[i]])
        for i in range(6)
    )
    npt.assert_allclose(got, expected, rtol=1e-12)


def test_objective_zero_when_everything_coincides():
    pts = np.zeros((4, 2))
    data = Dataset.from_points(pts, domain_radius=1.0)
    clusters = ClusterSet.from_array(np.zeros((2, 2)))
    policy = AssignmentPolicy.uniform(4, 2)
    assert objective_D(data, clusters, policy, IdentityAutonomy()) == 0.0


def test_objective_matches_brute_force_triple_sum():
    data = random_dataset(4, 2, seed=30, weighted=True)
    clusters = random_clusters(2, 2, seed=31)
    autonomy = random_tabular(2, 4, seed=32)
    rng = make_rng(33)
    probs = rng.dirichlet(np.ones(2), size=4)
    policy = AssignmentPolicy.from_probs(probs)
    t = autonomy.tensor(data, clusters)
    expected = 0.0
    for i in range(4):
        for j in range(2):
            for k in range(2):
                expected += (data.weights[i] * probs[i, j] * t[k, j, i]
                             * squared_distance(data.points[i], clusters.y[k]))
    npt.assert_allclose(objective_D(data, clusters, policy, autonomy),
                        expected, rtol=1e-12)


def test_objective_invariant_under_entity_permutation():
    data = random_dataset(5, 3, seed=40, weighted=True)
    clusters = random_clusters(3, 3, seed=41)
    rng = make_rng(42)
    probs = rng.dirichlet(np.ones(3), size=5)
    base = objective_D(data, clusters, AssignmentPolicy.from_probs(probs),
                       IdentityAutonomy())
    perm = rng.permutation(5)
    data_p = Dataset.from_points(data.points[perm],
                                 weights=data.weights[perm],
                                 domain_radius=data.domain_radius)
    permuted = objective_D(data_p, clusters,
                           AssignmentPolicy.from_probs(probs[perm]),
                           IdentityAutonomy())
    npt.assert_allclose(base, permuted, rtol=1e-12)


# ---------------------------------------------------------------------------
# harden

def test_harden_picks_larger_mass():
    pol = AssignmentPolicy.from_probs(np.array([[0.7, 0.3]]))
    hard = harden(pol)
    npt.assert_array_equal(hard.probs, [[1.0, 0.0]])
    assert hard.mode == "hard"


def test_harden_breaks_ties_toward_lowest_index():
    pol = AssignmentPolicy.from_probs(np.array([[0.5, 0.5]]))
    npt.assert_array_equal(harden(pol).probs, [[1.0, 0.0]])


def test_harden_of_cold_gibbs_matches_argmin():
    data = random_dataset(12, 2, seed=50)
    clusters = random_clusters(3, 2, seed=51)
    autonomy = IdentityAutonomy()
    pol = gibbs_policy(data, clusters, autonomy, beta=50.0)
    d = avg_distance_matrix(data, clusters, autonomy)
    npt.assert_array_equal(harden(pol).assignments(), d.argmin(axis=1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100.0))
def test_gibbs_rows_are_stochastic(seed, beta):
    data = random_dataset(6, 2, seed=seed % 1000)
    clusters = random_clusters(3, 2, seed=(seed + 1) % 1000)
    pol = gibbs_policy(data, clusters, IdentityAutonomy(), beta=beta)
    assert (pol.probs >= 0).all()
    npt.assert_allclose(pol.probs.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# CSV round trips and error reporting

def test_dataset_csv_round_trip(tmp_path):
    data = random_dataset(5, 3, seed=60, weighted=True)
    path = tmp_path / "pts.csv"
    write_dataset_csv(path, data, include_weights=True)
    back = read_dataset_csv(path)
    npt.assert_allclose(back.points, data.points, atol=1e-15)
    npt.assert_allclose(back.weights, data.weights, atol=1e-15)


def test_dataset_csv_round_trip_without_weights(tmp_path):
    data = random_dataset(4, 2, seed=61)
    path = tmp_path / "pts.csv"
    write_dataset_csv(path, data)
    assert path.read_text().splitlines()[0] == "x0,x1"
    back = read_dataset_csv(path)
    npt.assert_allclose(back.points, data.points, atol=1e-15)
    npt.assert_allclose(back.weights, 1.0 / 4.0)


def test_dataset_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="empty file"):
        read_dataset_csv(path)


def test_dataset_csv_header_only(tmp_path):
    path = tmp_path / "hdr.csv"
    path.write_text("x0,x1\n")
    with pytest.raises(ValueError, match="no data rows"):
        read_dataset_csv(path)


def test_dataset_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_dataset_csv(path)


def test_dataset_csv_ragged_row(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("x0,x1\n1.0,2.0\n3.0\n")
    with pytest.raises(ValueError, match="3"):
        read_dataset_csv(path)


def test_dataset_csv_rejects_non_finite(tmp_path):
    path = tmp_path / "inf.csv"
    path.write_text("x0\n1.0\ninf\n")
    with pytest.raises(ValueError, match="finite"):
        read_dataset_csv(path)
