"""Attention-based distance estimation network and its annealed trainer.

The network maps a batch of entities X (B, S, d) and perturbed centers Y
(B, K, d) to estimated average association costs (B, S, K).  Entities and
centers are first lifted to a hidden width; a stack of attention blocks lets
every entity attend over the center set (queries from entities, keys and
values from centers, post-norm residuals, GeLU feed-forward); entity and
center embeddings are then paired, concatenated and scored by a linear head.
The head's output is a learned residual on top of the exact squared
distances:

    D(X, Y) = relu(theta_z * head(Z) + D0),   D0[b,s,k] = ||x_s - y_k||^2.

With theta_z initialized to zero the network starts exactly at the
compliant-entity distances and learns only the autonomy correction.

Training follows the annealed scheme: at each beta, epochs of minibatch
regression onto EMA-smoothed sampled costs (the autonomy kernel is touched
through sampling only), then plain gradient steps on the centers through the
substituted free energy, then beta grows geometrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AssignmentPolicy,
    AutonomyModel,
    ClusterSet,
    Dataset,
    avg_distance_matrix,
    harden,
)
from .solver import AnnealTrace, SolverState, _gibbs_probs
from .tensor import (
    OptimState,
    Tensor,
    adamw_step,
    add,
    backward,
    broadcast_to,
    concat,
    dropout,
    expand_dims,
    gelu,
    layer_norm,
    logsumexp,
    matmul,
    mul,
    pairwise_sqdist,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    transpose,
    tsum,
    zero_grad,
)


@dataclass(frozen=True)
class AdenConfig:
    """Network shape.  ``hidden_dim`` must divide evenly over the heads."""

    hidden_dim: int = 64
    ff_dim: int = 128
    adb_layers: int = 4
    attention_heads: int = 8
    dropout_rate: float = 0.1
    theta_z_init: float = 0.0

    def __post_init__(self):
        if self.hidden_dim < 1 or self.ff_dim < 1 or self.adb_layers < 1:
            raise ValueError("hidden_dim, ff_dim and adb_layers must be >= 1")
        if self.attention_heads < 1 or self.hidden_dim % self.attention_heads:
            raise ValueError("attention_heads must divide hidden_dim")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(input_dim: int, config: AdenConfig,
                rng: np.random.Generator) -> dict[str, Tensor]:
    """Xavier-initialized parameter dict; theta_z starts at its configured
    value (zero by default, so the network reproduces exact distances)."""
    dh, dff = config.hidden_dim, config.ff_dim
    p: dict[str, Tensor] = {}

    def lin(name, fan_in, fan_out):
        p[f"{name}.w"] = Tensor(_xavier(rng, fan_in, fan_out), requires_grad=True)
        p[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    lin("fx", input_dim, dh)
    lin("fy", input_dim, dh)
    for l in range(config.adb_layers):
        for proj in ("wq", "wk", "wv", "wo"):
            lin(f"adb{l}.{proj}", dh, dh)
        p[f"adb{l}.ln1.g"] = Tensor(np.ones(dh), requires_grad=True)
        p[f"adb{l}.ln1.b"] = Tensor(np.zeros(dh), requires_grad=True)
        lin(f"adb{l}.ff1", dh, dff)
        lin(f"adb{l}.ff2", dff, dh)
        p[f"adb{l}.ln2.g"] = Tensor(np.ones(dh), requires_grad=True)
        p[f"adb{l}.ln2.b"] = Tensor(np.zeros(dh), requires_grad=True)
    lin("head", 2 * dh, 1)
    p["theta_z"] = Tensor(np.float64(config.theta_z_init), requires_grad=True)
    return p


def _linear(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return add(matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _attention(e: Tensor, yh: Tensor, params: dict[str, Tensor], layer: int,
               config: AdenConfig, training: bool,
               rng: np.random.Generator | None) -> Tensor:
    b, s, dh = e.shape
    k = yh.shape[1]
    heads = config.attention_heads
    hd = dh // heads
    q = _linear(e, params, f"adb{layer}.wq")
    kk = _linear(yh, params, f"adb{layer}.wk")
    v = _linear(yh, params, f"adb{layer}.wv")
    qh = transpose(reshape(q, (b, s, heads, hd)), (0, 2, 1, 3))      # (B,H,S,hd)
    kh = transpose(reshape(kk, (b, k, heads, hd)), (0, 2, 3, 1))     # (B,H,hd,K)
    vh = transpose(reshape(v, (b, k, heads, hd)), (0, 2, 1, 3))      # (B,H,K,hd)
    scores = scale(matmul(qh, kh), 1.0 / np.sqrt(hd))                # (B,H,S,K)
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)                                           # (B,H,S,hd)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, s, dh))
    out = _linear(ctx, params, f"adb{layer}.wo")
    return dropout(out, config.dropout_rate, rng, training)


def aden_forward(x, y, params: dict[str, Tensor], config: AdenConfig,
                 training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Estimated average costs, shape (B, S, K).

    ``x`` is (B, S, d) and ``y`` is (B, K, d); both may be arrays or Tensors
    (pass a Tensor with ``requires_grad`` to differentiate through it).
    Dropout fires only when ``training`` is true, drawing masks from ``rng``.
    """
    if training and config.dropout_rate > 0 and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    x = x if isinstance(x, Tensor) else Tensor(x)
    y = y if isinstance(y, Tensor) else Tensor(y)
    if x.ndim != 3 or y.ndim != 3 or x.shape[0] != y.shape[0] \
            or x.shape[2] != y.shape[2]:
        raise ValueError(f"bad input shapes {x.shape} and {y.shape}")
    b, s, _ = x.shape
    k = y.shape[1]
    dh = config.hidden_dim
    xh = _linear(x, params, "fx")
    yh = _linear(y, params, "fy")
    e = xh
    for l in range(config.adb_layers):
        u = layer_norm(add(_attention(e, yh, params, l, config, training, rng), e),
                       params[f"adb{l}.ln1.g"], params[f"adb{l}.ln1.b"])
        h = gelu(_linear(u, params, f"adb{l}.ff1"))
        h = dropout(h, config.dropout_rate, rng, training)
        h = _linear(h, params, f"adb{l}.ff2")
        e = layer_norm(add(h, u),
                       params[f"adb{l}.ln2.g"], params[f"adb{l}.ln2.b"])
    eb = broadcast_to(expand_dims(e, 2), (b, s, k, dh))
    yb = broadcast_to(expand_dims(yh, 1), (b, s, k, dh))
    z = concat([eb, yb], axis=-1)
    z = dropout(z, config.dropout_rate, rng, training)
    score = reshape(_linear(z, params, "head"), (b, s, k))
    d0 = pairwise_sqdist(x, y)
    return relu(add(mul(params["theta_z"], score), d0))


# ---------------------------------------------------------------------------
# Annealed training

@dataclass(frozen=True)
class TrainConfig:
    """Annealed training schedule for the distance network."""

    batches: int = 32
    samples_per_batch: int = 128
    epochs_aden: int = 1000
    epochs_y: int = 100
    lr_d: float = 1e-4
    lr_y: float = 1e-4
    weight_decay: float = 1e-5
    perturb_sigma: float = 0.01
    autonomy_samples: int = 16
    ema_lambda: float = 0.95
    epsilon_greedy: float = 0.1
    epsilon_greedy_final: float = 0.01
    beta_min: float = 10.0
    beta_max: float = 50000.0
    tau: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if min(self.batches, self.samples_per_batch, self.epochs_aden,
               self.epochs_y, self.autonomy_samples) < 1:
            raise ValueError("counts must be >= 1")
        if self.lr_d <= 0 or self.lr_y <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.ema_lambda < 1:
            raise ValueError("ema_lambda must lie in [0, 1)")
        if not 0 <= self.epsilon_greedy_final <= self.epsilon_greedy <= 1:
            raise ValueError("epsilon schedule must decay within [0, 1]")
        if self.beta_min <= 0 or self.beta_max < self.beta_min or self.tau <= 1:
            raise ValueError("bad beta schedule")
        if self.perturb_sigma < 0 or self.weight_decay < 0:
            raise ValueError("perturb_sigma and weight_decay must be >= 0")


@dataclass
class EmaDistanceTable:
    """Exponential moving average of sampled costs per (entity, cluster).

    Entries start at zero and only pairs visited during training carry
    meaningful values; the regression loss touches visited pairs only.
    """

    d_bar: np.ndarray
    lam: float

    @classmethod
    def zeros(cls, num_entities: int, num_clusters: int,
              lam: float) -> "EmaDistanceTable":
        return cls(np.zeros((num_entities, num_clusters)), lam)

    def update(self, i: int, j: int, fresh: float) -> float:
        self.d_bar[i, j] = self.lam * self.d_bar[i, j] + (1 - self.lam) * fresh
        return float(self.d_bar[i, j])


class AdenTrainer:
    """Mutable training state: parameters, optimizer, EMA table, centers."""

    def __init__(self, data: Dataset, sampler: AutonomyModel, num_clusters: int,
                 train_config: TrainConfig, aden_config: AdenConfig,
                 frozen: tuple[str, ...] = ()):
        self.data = data
        self.sampler = sampler
        self.k = num_clusters
        self.tc = train_config
        self.ac = aden_config
        self.rng = np.random.default_rng(train_config.seed)
        self.params = init_params(data.dim, aden_config, self.rng)
        self.trainable = {n: p for n, p in self.params.items() if n not in frozen}
        self.opt = OptimState(lr=train_config.lr_d,
                              weight_decay=train_config.weight_decay)
        self.ema = EmaDistanceTable.zeros(data.n, num_clusters,
                                          train_config.ema_lambda)
        mean = data.weighted_mean()
        self.y = np.tile(mean, (num_clusters, 1)) + self.rng.normal(
            0.0, train_config.perturb_sigma, size=(num_clusters, data.dim))

    def predict(self, y: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode costs for the full dataset at the given centers."""
        y = self.y if y is None else y
        out = aden_forward(self.data.points[None], y[None], self.params, self.ac)
        return out.data[0]

    def train_epoch(self, beta: float, epsilon: float) -> float:
        """One epoch: B minibatches of S entities, sampled costs, EMA
        regression targets, a single AdamW step.  Returns the loss."""
        tc, data, rng = self.tc, self.data, self.rng
        b_total, s_total = tc.batches, tc.samples_per_batch
        n, k = data.n, self.k
        idx = rng.choice(n, size=(b_total, s_total), p=data.weights)
        y_til = self.y[None] + rng.normal(0.0, tc.perturb_sigma,
                                          size=(b_total, k, data.dim))
        out = aden_forward(data.points[idx], y_til, self.params, self.ac,
                           training=True, rng=rng)
        pred = out.data
        mask = np.zeros((b_total, s_total, k))
        target = np.zeros((b_total, s_total, k))
        for b in range(b_total):
            clusters_b = ClusterSet.from_array(y_til[b])
            for s in range(s_total):
                i = int(idx[b, s])
                if rng.random() < epsilon:
                    j = int(rng.integers(k))
                else:
                    row = pred[b, s]
                    logits = -beta * (row - row.min())
                    probs = np.exp(logits)
                    probs /= probs.sum()
                    j = int(np.searchsorted(np.cumsum(probs), rng.random(),
                                            side="right"))
                    j = min(j, k - 1)
                ks = self.sampler.sample_many(i, j, data, clusters_b, rng,
                                              tc.autonomy_samples)
                dvals = ((data.points[i] - y_til[b][ks]) ** 2).sum(axis=1)
                target[b, s, j] = self.ema.update(i, j, float(dvals.mean()))
                mask[b, s, j] = 1.0
        r = sub(Tensor(target), out)
        loss = scale(tsum(mul(mul(r, r), Tensor(mask))), 1.0 / b_total)
        zero_grad(self.params)
        backward(loss)
        adamw_step(self.trainable, self.opt)
        return float(loss.data)

    def y_update_phase(self, beta: float) -> None:
        """epochs_y plain gradient steps on the centers through the
        substituted free energy (eval mode, unperturbed centers)."""
        rho = Tensor(self.data.weights[None])
        for _ in range(self.tc.epochs_y):
            yt = Tensor(self.y[None], requires_grad=True)
            out = aden_forward(self.data.points[None], yt, self.params, self.ac)
            lse = logsumexp(scale(out, -beta), axis=-1)
            f = scale(tsum(mul(lse, rho)), -1.0 / beta)
            backward(f)
            self.y = self.y - self.tc.lr_y * yt.grad[0]

    def beta_stages(self) -> list[float]:
        stages = []
        beta = self.tc.beta_min
        while beta <= self.tc.beta_max * (1 + 1e-12):
            stages.append(beta)
            beta *= self.tc.tau
        return stages

    def epsilon_at(self, stage: int, total: int) -> float:
        if total <= 1:
            return self.tc.epsilon_greedy
        hi, lo = self.tc.epsilon_greedy, self.tc.epsilon_greedy_final
        if hi == 0:
            return 0.0
        lo = max(lo, 1e-12)
        return hi * (lo / hi) ** (stage / (total - 1))


def deep_anneal(data: Dataset, sampler: AutonomyModel, num_clusters: int,
                train_config: TrainConfig, aden_config: AdenConfig,
                reference_autonomy: AutonomyModel | None = None,
                ) -> tuple[SolverState, AnnealTrace, dict[str, Tensor],
                           list[tuple]]:
    """Annealed training of the distance network with center updates.

    Returns the final state (policy is the Gibbs policy of the learned costs,
    hardened by argmax; cluster masses are policy marginals), the per-beta
    trace, the trained parameters, and a training log of
    ``(beta, epoch, loss[, mean_abs_distance_error])`` rows (the error column
    appears when ``reference_autonomy`` is supplied).
    """
    trainer = AdenTrainer(data, sampler, num_clusters, train_config, aden_config)
    stages = trainer.beta_stages()
    trace = AnnealTrace()
    log: list[tuple] = []
    prev_y: np.ndarray | None = None
    for si, beta in enumerate(stages):
        epsilon = trainer.epsilon_at(si, len(stages))
        for epoch in range(train_config.epochs_aden):
            loss = trainer.train_epoch(beta, epsilon)
            if reference_autonomy is not None:
                ref = avg_distance_matrix(data, ClusterSet.from_array(trainer.y),
                                          reference_autonomy)
                mad = float(np.abs(trainer.predict() - ref).mean())
                log.append((beta, epoch, loss, mad))
            else:
                log.append((beta, epoch, loss))
        trainer.y_update_phase(beta)
        costs = trainer.predict()
        probs = _gibbs_probs(costs, beta)
        f_est = _substituted_free_energy(costs, data.weights, beta)
        d_est = float(np.sum(data.weights[:, None] * probs * costs))
        delta = 0.0 if prev_y is None else float(
            np.linalg.norm((trainer.y - prev_y).ravel()))
        trace.append(beta, f_est, d_est, delta, "aden", trainer.y)
        prev_y = np.array(trainer.y)
    beta_last = stages[-1]
    costs = trainer.predict()
    policy = AssignmentPolicy.from_probs(_gibbs_probs(costs, beta_last))
    state = SolverState(
        beta=beta_last,
        clusters=ClusterSet.from_array(trainer.y),
        policy=policy,
        free_energy=_substituted_free_energy(costs, data.weights, beta_last),
        cluster_mass=data.weights @ policy.probs,
        hard_policy=harden(policy),
    )
    return state, trace, trainer.params, log


def _substituted_free_energy(costs: np.ndarray, weights: np.ndarray,
                             beta: float) -> float:
    z = -beta * costs
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return float(-(weights @ lse) / beta)


def params_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: np.array(p.data) for name, p in params.items()}


def arrays_to_params(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
