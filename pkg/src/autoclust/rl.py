"""Model-free tabular learner for autonomy-aware clustering.

The learner never evaluates the autonomy kernel; it only observes realized
clusters through a sampling interface.  A q-table tracks the average
association cost of each (entity, prescription) pair through the stochastic
approximation

    q(i,j) <- (1 - eps) * q(i,j) + eps * ||x_i - y_k||^2,    k ~ p(.|j,i)

with per-pair Robbins-Monro step sizes, while the centers follow minibatch
SGD on the realized assignments:

    y_l <- y_l - alpha * (1/|S|) * sum_{(i,j,k) in S} (y_l - x_i) * [l == k].

Annealing wraps both: the prescription policy is the Gibbs policy of the
current q-table and beta grows geometrically.
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
from .solver import AnnealConfig, AnnealTrace, SolverState, _gibbs_probs


@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequence for the q updates.

    kind "robbins_monro": eps(n) = c0 / (1 + n)^exponent with exponent in
    (0.5, 1], so the steps are square-summable but not summable.  kind
    "constant": eps(n) = c0.
    """

    kind: str = "robbins_monro"
    c0: float = 1.0
    exponent: float = 0.7

    def __post_init__(self):
        if self.kind not in ("robbins_monro", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.c0 <= 1:
            raise ValueError("c0 must lie in (0, 1]")
        if self.kind == "robbins_monro" and not 0.5 < self.exponent <= 1.0:
            raise ValueError("exponent must lie in (0.5, 1]")

    def rate(self, count: int) -> float:
        if self.kind == "constant":
            return self.c0
        return self.c0 / (1.0 + count) ** self.exponent


@dataclass
class QTable:
    """Per-pair cost estimates and visit counts, both shaped (N, K)."""

    q: np.ndarray
    visit_counts: np.ndarray

    @classmethod
    def zeros(cls, num_entities: int, num_clusters: int) -> "QTable":
        return cls(np.zeros((num_entities, num_clusters)),
                   np.zeros((num_entities, num_clusters), dtype=np.int64))


def q_update(table: QTable, i: int, j: int, observed_cost: float,
             schedule: StepSchedule) -> QTable:
    """One in-place stochastic update of q(i, j); returns the same table.

    The new value is the convex combination (1 - eps) * old + eps * cost with
    eps from the schedule at the pair's current visit count; the count then
    increments.  All other entries are untouched.
    """
    eps = schedule.rate(int(table.visit_counts[i, j]))
    table.q[i, j] = (1.0 - eps) * table.q[i, j] + eps * observed_cost
    table.visit_counts[i, j] += 1
    return table


def policy_from_q(table: QTable, beta: float) -> AssignmentPolicy:
    """Gibbs policy of the current q-table (row-wise, max-stabilized)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return AssignmentPolicy.from_probs(_gibbs_probs(table.q, beta))


def sgd_center_step(clusters: ClusterSet, minibatch: list[tuple[int, int, int]],
                    data: Dataset, alpha: float) -> ClusterSet:
    """One minibatch SGD step on the centers from realized transitions.

    ``minibatch`` holds (i, j, k) triples; only the realized cluster k pulls
    toward x_i.  Centers on the right-hand side are the pre-step values.
    """
    if not minibatch:
        raise ValueError("minibatch must not be empty")
    y0 = clusters.y
    grad = np.zeros_like(y0)
    for i, _, k in minibatch:
        grad[k] += y0[k] - data.points[i]
    return ClusterSet.from_array(y0 - alpha * grad / len(minibatch))


@dataclass(frozen=True)
class RlConfig:
    """Learner knobs.

    ``updates_per_step`` q-updates run between consecutive SGD steps, which
    use the most recent ``minibatch`` transitions.  ``sgd_alpha`` is constant
    within a beta stage and decays by ``alpha_decay`` across stages;
    ``updates_per_beta`` q-updates run per stage.
    """

    q_c0: float = 1.0
    q_exponent: float = 0.7
    sgd_alpha: float = 0.3
    alpha_decay: float = 0.85
    updates_per_step: int = 32
    minibatch: int = 32
    updates_per_beta: int = 4000

    def __post_init__(self):
        if self.sgd_alpha <= 0:
            raise ValueError("sgd_alpha must be positive")
        if not 0 < self.alpha_decay <= 1:
            raise ValueError("alpha_decay must lie in (0, 1]")
        if self.updates_per_step < 1 or self.minibatch < 1:
            raise ValueError("updates_per_step and minibatch must be >= 1")
        if self.updates_per_beta < self.updates_per_step:
            raise ValueError("updates_per_beta must cover at least one SGD step")

    def schedule(self) -> StepSchedule:
        return StepSchedule("robbins_monro", self.q_c0, self.q_exponent)


def _sample_index(weights_cdf: np.ndarray, rng: np.random.Generator) -> int:
    return int(np.searchsorted(weights_cdf, rng.random(), side="right"))


def learn_tabular(data: Dataset, autonomy_sampler: AutonomyModel,
                  num_clusters: int, anneal_config: AnnealConfig,
                  rl_config: RlConfig,
                  reference_autonomy: AutonomyModel | None = None,
                  ) -> tuple[SolverState, AnnealTrace]:
    """Annealed model-free learning of centers and policy.

    The autonomy model is touched only through its sampling interface.  Trace
    free energies and distortions are computed from the learned q-table (the
    learner has no kernel to average over), and ``q_errors`` on the returned
    trace records the max relative q error against ``reference_autonomy``
    when one is supplied.  Cluster masses in the final state are policy
    marginals sum_i rho(i) pi(l|i).
    """
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    rng = np.random.default_rng(anneal_config.seed)
    n, d = data.n, data.dim
    k = num_clusters
    y = np.tile(data.weighted_mean(), (k, 1))
    y = y + rng.normal(0.0, anneal_config.noise_scale, size=(k, d))
    table = QTable.zeros(n, k)
    schedule = rl_config.schedule()
    alpha = rl_config.sgd_alpha
    weights_cdf = np.cumsum(data.weights)
    weights_cdf[-1] = 1.0
    trace = AnnealTrace()
    q_errors: list[float] = []
    beta = anneal_config.beta_min
    last_beta = beta
    prev_y: np.ndarray | None = None
    while beta <= anneal_config.beta_max * (1 + 1e-12):
        buffer: list[tuple[int, int, int]] = []
        for t in range(rl_config.updates_per_beta):
            i = _sample_index(weights_cdf, rng)
            row = table.q[i]
            logits = -beta * (row - row.min())
            probs = np.exp(logits)
            probs /= probs.sum()
            j = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            j = min(j, k - 1)
            clusters = ClusterSet.from_array(y)
            realized = autonomy_sampler.sample(i, j, data, clusters, rng)
            diff = data.points[i] - y[realized]
            cost = float(diff @ diff)
            q_update(table, i, j, cost, schedule)
            buffer.append((i, j, realized))
            if (t + 1) % rl_config.updates_per_step == 0:
                batch = buffer[-rl_config.minibatch:]
                y = sgd_center_step(ClusterSet.from_array(y), batch, data, alpha).y
        probs_all = _gibbs_probs(table.q, beta)
        f_est = _q_free_energy(table.q, data.weights, beta)
        d_est = float(np.sum(data.weights[:, None] * probs_all * table.q))
        delta = 0.0 if prev_y is None else float(np.linalg.norm((y - prev_y).ravel()))
        trace.append(beta, f_est, d_est, delta, "rl", y)
        if reference_autonomy is not None:
            ref = avg_distance_matrix(data, ClusterSet.from_array(y),
                                      reference_autonomy)
            q_errors.append(float(np.max(np.abs(table.q - ref)
                                         / np.maximum(ref, 1e-12))))
        prev_y = np.array(y)
        last_beta = beta
        beta *= anneal_config.tau
        alpha *= rl_config.alpha_decay
    trace.q_errors = q_errors if reference_autonomy is not None else []
    policy = policy_from_q(table, last_beta)
    mass = data.weights @ policy.probs
    state = SolverState(
        beta=last_beta,
        clusters=ClusterSet.from_array(y),
        policy=policy,
        free_energy=_q_free_energy(table.q, data.weights, last_beta),
        cluster_mass=mass,
        hard_policy=harden(policy),
    )
    return state, trace


def _q_free_energy(q: np.ndarray, weights: np.ndarray, beta: float) -> float:
    z = -beta * q
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return float(-(weights @ lse) / beta)
