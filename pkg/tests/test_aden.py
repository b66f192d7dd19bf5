"""Attention distance network: forward contract, training loop, center phase."""

import numpy as np
import numpy.testing as npt
import pytest

from autoclust.aden import (
    AdenConfig,
    AdenTrainer,
    EmaDistanceTable,
    TrainConfig,
    aden_forward,
    arrays_to_params,
    deep_anneal,
    init_params,
    params_to_arrays,
)
from autoclust.autonomy import IdentityAutonomy, TabularAutonomy
from autoclust.core import ClusterSet, sqdist_matrix
from autoclust.scenarios import make_blobs
from autoclust.solver import grad_free_energy
from autoclust.tensor import Tensor, backward, load_checkpoint, save_checkpoint, tsum, mul

from conftest import make_rng, random_tabular


TINY = AdenConfig(hidden_dim=8, ff_dim=16, adb_layers=1, attention_heads=2,
                  dropout_rate=0.0)


def tiny_params(seed=0, theta_z=0.0, input_dim=2):
    cfg = AdenConfig(hidden_dim=8, ff_dim=16, adb_layers=1, attention_heads=2,
                     dropout_rate=0.0, theta_z_init=theta_z)
    return init_params(input_dim, cfg, make_rng(seed)), cfg


def two_blob_data(seed=3):
    return make_blobs(2, 8, spread=0.1, seed=seed,
                      centers=np.array([[0.0, 0.0], [1.0, 1.0]]))


# ---------------------------------------------------------------------------
# config and parameter initialization

def test_config_heads_must_divide_hidden():
    with pytest.raises(ValueError):
        AdenConfig(hidden_dim=10, attention_heads=4)


def test_init_params_key_set_and_shapes():
    cfg = AdenConfig(hidden_dim=8, ff_dim=16, adb_layers=2, attention_heads=2,
                     dropout_rate=0.0)
    params = init_params(3, cfg, make_rng(0))
    expected = {"fx.w", "fx.b", "fy.w", "fy.b", "head.w", "head.b", "theta_z"}
    for layer in range(2):
        for block in ("wq", "wk", "wv", "wo"):
            expected |= {f"adb{layer}.{block}.w", f"adb{layer}.{block}.b"}
        expected |= {f"adb{layer}.ln1.g", f"adb{layer}.ln1.b",
                     f"adb{layer}.ff1.w", f"adb{layer}.ff1.b",
                     f"adb{layer}.ff2.w", f"adb{layer}.ff2.b",
                     f"adb{layer}.ln2.g", f"adb{layer}.ln2.b"}
    assert set(params) == expected
    assert params["fx.w"].shape == (3, 8)
    assert params["theta_z"].shape == ()
    assert all(p.requires_grad for p in params.values())


def test_init_params_deterministic_in_rng():
    a = init_params(2, TINY, make_rng(7))
    b = init_params(2, TINY, make_rng(7))
    for name in a:
        npt.assert_array_equal(a[name].data, b[name].data)


# ---------------------------------------------------------------------------
# forward contract

def test_forward_theta_zero_is_exact_pairwise_distance():
    params, cfg = tiny_params(theta_z=0.0)
    rng = make_rng(1)
    x = rng.normal(size=(2, 5, 2))
    y = rng.normal(size=(2, 3, 2))
    out = aden_forward(x, y, params, cfg).data
    for b in range(2):
        npt.assert_array_equal(out[b], sqdist_matrix(x[b], y[b]))


def test_forward_is_nonnegative():
    params, cfg = tiny_params(seed=2, theta_z=1.5)
    rng = make_rng(3)
    x = rng.normal(size=(1, 6, 2))
    y = rng.normal(size=(1, 3, 2))
    out = aden_forward(x, y, params, cfg).data
    assert (out >= 0).all()


def test_forward_cluster_permutation_equivariance():
    params, cfg = tiny_params(seed=4, theta_z=0.8)
    rng = make_rng(5)
    x = rng.normal(size=(1, 5, 2))
    y = rng.normal(size=(1, 4, 2))
    base = aden_forward(x, y, params, cfg).data
    perm = np.array([2, 0, 3, 1])
    permuted = aden_forward(x, y[:, perm], params, cfg).data
    npt.assert_allclose(permuted, base[:, :, perm], atol=1e-9)


def test_forward_handles_variable_sizes_with_same_params():
    params, cfg = tiny_params(seed=6, theta_z=0.3)
    rng = make_rng(7)
    a = aden_forward(rng.normal(size=(1, 7, 2)), rng.normal(size=(1, 3, 2)),
                     params, cfg)
    b = aden_forward(rng.normal(size=(2, 20, 2)), rng.normal(size=(2, 5, 2)),
                     params, cfg)
    assert a.shape == (1, 7, 3)
    assert b.shape == (2, 20, 5)


def test_forward_accepts_tensors_and_arrays():
    params, cfg = tiny_params(seed=8, theta_z=0.4)
    rng = make_rng(9)
    x = rng.normal(size=(1, 4, 2))
    y = rng.normal(size=(1, 2, 2))
    npt.assert_array_equal(aden_forward(x, y, params, cfg).data,
                           aden_forward(Tensor(x), Tensor(y), params, cfg).data)


def test_forward_training_dropout_needs_rng():
    cfg = AdenConfig(hidden_dim=8, ff_dim=16, adb_layers=1, attention_heads=2,
                     dropout_rate=0.2)
    params = init_params(2, cfg, make_rng(0))
    x = np.zeros((1, 3, 2))
    y = np.zeros((1, 2, 2))
    with pytest.raises(ValueError):
        aden_forward(x, y, params, cfg, training=True)
    out = aden_forward(x, y, params, cfg, training=True, rng=make_rng(1))
    assert out.shape == (1, 3, 2)


# ---------------------------------------------------------------------------
# gradients through the network

def test_param_and_center_grads_match_fd_on_a_subset():
    params, cfg = tiny_params(seed=10, theta_z=0.5)
    rng = make_rng(11)
    x = rng.normal(size=(1, 4, 2))
    y0 = rng.normal(size=(1, 3, 2))
    w = rng.normal(size=(1, 4, 3))

    def loss_value():
        yt = Tensor(y0, requires_grad=True)
        out = aden_forward(x, yt, params, cfg)
        return tsum(mul(out, Tensor(w))), yt

    loss, yt = loss_value()
    backward(loss)

    def f_with(name, arr):
        saved = params[name].data
        params[name].data = arr
        out = aden_forward(x, Tensor(y0), params, cfg)
        val = float(tsum(mul(out, Tensor(w))).data)
        params[name].data = saved
        return val

    h = 1e-5
    for name in ("theta_z", "head.w", "fx.w", "adb0.wq.w", "adb0.ln2.g"):
        g = params[name].grad
        flat_idx = [0] if g.ndim == 0 else list(range(min(g.size, 6)))
        for idx in flat_idx:
            bump = np.array(params[name].data, dtype=np.float64)
            bump.ravel()[idx] += h
            up = f_with(name, bump)
            bump.ravel()[idx] -= 2 * h
            dn = f_with(name, bump)
            fd = (up - dn) / (2 * h)
            ana = g.ravel()[idx] if g.ndim else float(g)
            assert abs(ana - fd) <= 1e-3 * max(1.0, abs(fd)), (name, idx)

    fd_y = np.zeros_like(y0)
    for pos in range(y0.size):
        bumped = y0.copy()
        bumped.ravel()[pos] += h
        up = float(tsum(mul(aden_forward(x, Tensor(bumped), params, cfg),
                            Tensor(w))).data)
        bumped.ravel()[pos] -= 2 * h
        dn = float(tsum(mul(aden_forward(x, Tensor(bumped), params, cfg),
                            Tensor(w))).data)
        fd_y.ravel()[pos] = (up - dn) / (2 * h)
    scale_y = max(1.0, float(np.abs(fd_y).max()))
    npt.assert_allclose(yt.grad, fd_y, atol=1e-3 * scale_y)


# ---------------------------------------------------------------------------
# EMA table

def test_ema_starts_at_zero_and_contracts():
    table = EmaDistanceTable.zeros(3, 2, lam=0.95)
    assert (table.d_bar == 0).all()
    prev = table.d_bar[1, 0]
    fresh = 4.0
    new = table.update(1, 0, fresh)
    assert abs(new - prev) <= (1 - 0.95) * abs(fresh - prev) + 1e-15
    assert table.d_bar[1, 0] == new
    assert table.d_bar.sum() == new  # only the touched entry moved


def test_ema_converges_to_constant_stream():
    table = EmaDistanceTable.zeros(1, 1, lam=0.9)
    for _ in range(300):
        table.update(0, 0, 2.5)
    npt.assert_allclose(table.d_bar[0, 0], 2.5, atol=1e-9)


# ---------------------------------------------------------------------------
# trainer

def regression_setup(seed=0, **overrides):
    data = two_blob_data()
    ac = AdenConfig(hidden_dim=16, ff_dim=32, adb_layers=1, attention_heads=2,
                    dropout_rate=0.0)
    kw = dict(batches=4, samples_per_batch=32, lr_d=3e-3, weight_decay=0.0,
              perturb_sigma=0.0, autonomy_samples=1, ema_lambda=0.9, seed=seed)
    kw.update(overrides)
    tc = TrainConfig(**kw)
    return data, ac, tc


def test_train_epoch_loss_decays_with_frozen_theta():
    """theta_z frozen at 0 keeps predictions exact, so the loss is purely
    the EMA's distance to the true cost and must shrink as visits accumulate."""
    data, ac, tc = regression_setup()
    trainer = AdenTrainer(data, IdentityAutonomy(), 2, tc, ac,
                          frozen=("theta_z",))
    losses = [trainer.train_epoch(beta=2.0, epsilon=1.0) for _ in range(60)]
    assert np.mean(losses[-10:]) < 0.01 * losses[0]
    npt.assert_array_equal(trainer.params["theta_z"].data, 0.0)


def test_identity_sampler_regression_hits_true_distances():
    data, ac, tc = regression_setup()
    trainer = AdenTrainer(data, IdentityAutonomy(), 2, tc, ac)
    for _ in range(400):
        trainer.train_epoch(beta=2.0, epsilon=0.5)
    pred = trainer.predict()
    ref = sqdist_matrix(data.points, trainer.y)
    visited = trainer.ema.d_bar > 0
    assert visited.sum() > 0
    rel = np.abs(pred - ref)[visited] / np.maximum(ref[visited], 1e-12)
    assert rel.max() < 0.05


def test_train_epoch_bitwise_deterministic():
    outs = []
    for _ in range(2):
        data, ac, tc = regression_setup()
        trainer = AdenTrainer(data, IdentityAutonomy(), 2, tc, ac)
        losses = [trainer.train_epoch(beta=3.0, epsilon=0.3) for _ in range(3)]
        outs.append((losses, params_to_arrays(trainer.params), trainer.y))
    assert outs[0][0] == outs[1][0]
    for name in outs[0][1]:
        npt.assert_array_equal(outs[0][1][name], outs[1][1][name])
    npt.assert_array_equal(outs[0][2], outs[1][2])


def test_y_update_follows_analytic_free_energy_gradient():
    data, ac, tc = regression_setup(epochs_y=1, lr_y=1e-3)
    trainer = AdenTrainer(data, IdentityAutonomy(), 2, tc, ac)
    trainer.y = np.array([[0.2, 0.1], [0.8, 0.9]])
    beta = 3.0
    y_before = np.array(trainer.y)
    trainer.y_update_phase(beta)
    step = (trainer.y - y_before).ravel()
    g = grad_free_energy(data, ClusterSet.from_array(y_before),
                         IdentityAutonomy(), beta).ravel()
    cos = -(step @ g) / (np.linalg.norm(step) * np.linalg.norm(g))
    assert cos > 0.999
    npt.assert_allclose(step, -tc.lr_y * g, rtol=1e-6)


def test_y_update_fixed_point_stays_put():
    data, ac, tc = regression_setup(epochs_y=5)
    trainer = AdenTrainer(data, IdentityAutonomy(), 1, tc, ac)
    trainer.y = data.weighted_mean()[None, :].copy()
    trainer.y_update_phase(beta=4.0)
    npt.assert_allclose(trainer.y, data.weighted_mean()[None, :], atol=1e-12)


def test_beta_stages_geometric_ladder():
    data, ac, tc = regression_setup(beta_min=1.0, beta_max=8.0, tau=2.0)
    trainer = AdenTrainer(data, IdentityAutonomy(), 2, tc, ac)
    npt.assert_allclose(trainer.beta_stages(), [1.0, 2.0, 4.0, 8.0], rtol=1e-12)


def test_epsilon_schedule_endpoints_and_decay():
    data, ac, tc = regression_setup(epsilon_greedy=0.2, epsilon_greedy_final=0.01)
    trainer = AdenTrainer(data, IdentityAutonomy(), 2, tc, ac)
    total = 5
    eps = [trainer.epsilon_at(s, total) for s in range(total)]
    npt.assert_allclose(eps[0], 0.2, rtol=1e-12)
    npt.assert_allclose(eps[-1], 0.01, rtol=1e-12)
    assert all(a > b for a, b in zip(eps, eps[1:]))
    ratios = [eps[i + 1] / eps[i] for i in range(total - 1)]
    npt.assert_allclose(ratios, ratios[0], rtol=1e-9)


# ---------------------------------------------------------------------------
# deep_anneal smoke runs

def fast_train_config(**overrides):
    kw = dict(batches=2, samples_per_batch=16, epochs_aden=4, epochs_y=4,
              lr_d=1e-3, lr_y=1e-3, weight_decay=0.0, perturb_sigma=0.01,
              autonomy_samples=2, ema_lambda=0.9, epsilon_greedy=0.3,
              epsilon_greedy_final=0.01, beta_min=1.0, beta_max=4.0, tau=2.0,
              seed=0)
    kw.update(overrides)
    return TrainConfig(**kw)


def test_deep_anneal_shapes_and_log():
    data = two_blob_data(seed=5)
    state, trace, params, log = deep_anneal(data, IdentityAutonomy(), 2,
                                            fast_train_config(), TINY)
    assert len(trace.betas) == 3
    assert set(trace.paths) == {"aden"}
    assert len(log) == 3 * 4
    assert all(len(row) == 3 for row in log)
    assert state.hard_policy is not None
    npt.assert_allclose(state.cluster_mass.sum(), 1.0, atol=1e-9)
    assert set(params) == set(init_params(2, TINY, make_rng(0)))


def test_deep_anneal_reference_adds_error_column():
    data = two_blob_data(seed=6)
    hidden = random_tabular(2, data.n, seed=7)
    _, _, _, log = deep_anneal(data, hidden, 2, fast_train_config(), TINY,
                               reference_autonomy=hidden)
    assert all(len(row) == 4 for row in log)
    assert all(np.isfinite(row[3]) for row in log)


def test_deep_anneal_seed_deterministic():
    data = two_blob_data(seed=8)
    a = deep_anneal(data, IdentityAutonomy(), 2, fast_train_config(), TINY)
    b = deep_anneal(data, IdentityAutonomy(), 2, fast_train_config(), TINY)
    npt.assert_array_equal(a[0].clusters.y, b[0].clusters.y)
    assert a[1].free_energies == b[1].free_energies
    assert a[3] == b[3]


# ---------------------------------------------------------------------------
# parameter serialization

def test_params_survive_checkpoint_round_trip(tmp_path):
    params, cfg = tiny_params(seed=12, theta_z=0.7)
    rng = make_rng(13)
    x = rng.normal(size=(1, 5, 2))
    y = rng.normal(size=(1, 3, 2))
    before = aden_forward(x, y, params, cfg).data
    path = tmp_path / "aden.bin"
    save_checkpoint(path, params_to_arrays(params))
    restored = arrays_to_params(load_checkpoint(path))
    assert restored["theta_z"].data.shape == ()
    after = aden_forward(x, y, restored, cfg).data
    npt.assert_array_equal(before, after)
