"""Phase-transition analysis of the annealed free energy.

The free energy's Hessian in the stacked centers splits as

    H(Y) = P_hat - 2 * beta * Delta

where P_hat is the diagonal matrix of realized cluster masses (each repeated
d times) and Delta is a positive-semidefinite covariance-like matrix built
from the kernel-weighted residuals p(k|j,i) * (y_k - x_i).  Coincident or
settled centers lose stability when beta crosses

    beta_cr = 1 / (2 * lambda_max(P_hat^{-1/2} Delta P_hat^{-1/2})),

and between transitions the solution path obeys the sensitivity bound

    ||dY/dbeta|| <= N * sqrt(K) * R / (e * beta * delta)

with delta a lower bound on the smallest eigenvalue of the normalized
Hessian I - 2 * beta * P_hat^{-1/2} Delta P_hat^{-1/2}.

Everything here assumes a center-independent autonomy kernel; calling with a
center-dependent one is an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AutonomyModel, ClusterSet, Dataset
from .solver import AnnealTrace, _avg_costs, _gibbs_probs, _mass_and_weights

# Hessians are dense (K*d)^2 arrays; refuse silly sizes.
DEFAULT_MAX_DIM = 512

# lambda_max at or below this threshold means "no finite critical beta".
CRITICAL_EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class HessianBundle:
    """Hessian factors at one state: H = 2 * (P_hat - 2 * beta * Delta).

    The leading 2 comes from the squared-distance cost (its own Hessian is
    2I), so ``hessian`` is the actual second derivative of the free energy;
    positive-definiteness statements are unaffected by the overall scale.
    ``mass`` holds the K realized cluster masses; ``p_hat`` repeats them d
    times along the diagonal.
    """

    p_hat: np.ndarray     # (Kd, Kd) diagonal, positive
    delta: np.ndarray     # (Kd, Kd) symmetric PSD
    hessian: np.ndarray   # (Kd, Kd) symmetric
    mass: np.ndarray      # (K,)
    beta: float


def _check_autonomy(autonomy: AutonomyModel) -> None:
    if autonomy.depends_on_Y:
        raise ValueError(
            "phase analysis requires a center-independent autonomy kernel"
        )


def assemble_hessian(data: Dataset, clusters: ClusterSet,
                     autonomy: AutonomyModel, beta: float,
                     max_dim: int = DEFAULT_MAX_DIM) -> HessianBundle:
    """Assemble P_hat, Delta and H at the Gibbs policy for ``beta``.

    Delta = sum_i rho(i) [ sum_j pi(j|i) v_ij v_ij^T - w_i w_i^T ] with
    v_ij[(k,m)] = p(k|j,i) (y_km - x_im) and w_i = sum_j pi(j|i) v_ij; this is
    a covariance over j, hence symmetric positive semidefinite.
    """
    _check_autonomy(autonomy)
    if beta <= 0:
        raise ValueError("beta must be positive")
    k, d = clusters.k, clusters.dim
    kd = k * d
    if kd > max_dim:
        raise MemoryError(f"stacked dimension {kd} exceeds limit {max_dim}")
    p = autonomy.tensor(data, clusters)                     # (K, K, N)
    d_avg = _avg_costs(data, clusters, p)
    probs = _gibbs_probs(d_avg, beta)                       # (N, K)
    mass, _ = _mass_and_weights(data, probs, p)
    diff = clusters.y[None, :, :] - data.points[:, None, :]  # (N, K, d)
    v = p.transpose(2, 1, 0)[:, :, :, None] * diff[:, None, :, :]  # (N, Kj, Kk, d)
    v2 = v.reshape(data.n, k, kd)
    term1 = np.einsum("i,ij,ija,ijb->ab", data.weights, probs, v2, v2)
    w = np.einsum("ij,ija->ia", probs, v2)
    term2 = np.einsum("i,ia,ib->ab", data.weights, w, w)
    delta = term1 - term2
    delta = 0.5 * (delta + delta.T)
    p_hat = np.diag(np.repeat(mass, d))
    hessian = 2.0 * (p_hat - 2.0 * beta * delta)
    hessian = 0.5 * (hessian + hessian.T)
    return HessianBundle(p_hat=p_hat, delta=delta, hessian=hessian,
                         mass=mass, beta=float(beta))


def hessian_quadratic_form(bundle: HessianBundle, direction: np.ndarray) -> float:
    """psi^T H psi for a stacked direction psi of length K*d."""
    psi = np.asarray(direction, dtype=np.float64).reshape(-1)
    if psi.shape[0] != bundle.hessian.shape[0]:
        raise ValueError("direction length does not match the Hessian")
    return float(psi @ bundle.hessian @ psi)


def _normalized_delta(bundle: HessianBundle) -> np.ndarray:
    inv_sqrt = 1.0 / np.sqrt(np.diag(bundle.p_hat))
    m = inv_sqrt[:, None] * bundle.delta * inv_sqrt[None, :]
    return 0.5 * (m + m.T)


def _eigvalsh(matrix: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(matrix)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc


def normalized_lambda_max(bundle: HessianBundle) -> float:
    """Largest eigenvalue of P_hat^{-1/2} Delta P_hat^{-1/2}."""
    return float(_eigvalsh(_normalized_delta(bundle))[-1])


def normalized_min_eig(bundle: HessianBundle, beta: float | None = None) -> float:
    """Smallest eigenvalue of I - 2 beta P_hat^{-1/2} Delta P_hat^{-1/2}."""
    b = bundle.beta if beta is None else float(beta)
    return 1.0 - 2.0 * b * normalized_lambda_max(bundle)


def critical_beta(data: Dataset, clusters: ClusterSet, autonomy: AutonomyModel,
                  beta: float, max_dim: int = DEFAULT_MAX_DIM) -> float:
    """Critical inverse temperature of the state (evaluated at its beta).

    Returns ``math.inf`` when lambda_max is numerically zero (no finite
    transition, e.g. fully uniform kernels).
    """
    bundle = assemble_hessian(data, clusters, autonomy, beta, max_dim=max_dim)
    lam = normalized_lambda_max(bundle)
    if lam <= CRITICAL_EIG_FLOOR:
        return math.inf
    return 1.0 / (2.0 * lam)


def sensitivity_bound(beta: float, delta_margin: float, num_points: int,
                      num_clusters: int, domain_radius: float) -> float:
    """Upper bound N sqrt(K) R / (e beta delta) on ||dY/dbeta||."""
    if beta <= 0 or delta_margin <= 0 or num_points <= 0 \
            or num_clusters <= 0 or domain_radius <= 0:
        raise ValueError("all sensitivity-bound inputs must be positive")
    return num_points * math.sqrt(num_clusters) * domain_radius \
        / (math.e * beta * delta_margin)


def distinct_center_count(y: np.ndarray, merge_tol: float) -> int:
    """Number of center groups under pairwise distance < merge_tol."""
    y = np.asarray(y, dtype=np.float64)
    k = y.shape[0]
    d2 = ((y[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
    close = d2 < merge_tol ** 2
    seen = np.zeros(k, dtype=bool)
    groups = 0
    for start in range(k):
        if seen[start]:
            continue
        groups += 1
        stack = [start]
        seen[start] = True
        while stack:
            cur = stack.pop()
            for nxt in np.nonzero(close[cur] & ~seen)[0]:
                seen[nxt] = True
                stack.append(int(nxt))
    return groups


@dataclass(frozen=True)
class TransitionEvent:
    """One detected splitting event along an annealing trace."""

    beta_at: float
    delta_y_norm: float
    distinct_before: int
    distinct_after: int

    def __post_init__(self):
        if self.distinct_after < self.distinct_before:
            raise ValueError("distinct count cannot drop at a transition")


def detect_transitions(trace: AnnealTrace, merge_tol: float,
                       spike_factor: float = 10.0,
                       window: int = 5) -> list[TransitionEvent]:
    """Find beta steps where the centers jump and split.

    A step t is a transition when ||dY|| exceeds ``spike_factor`` times the
    median of the trailing ``window`` displacements AND the distinct-center
    count (at ``merge_tol``) increases.  Events come back in beta order.
    """
    if len(trace) < 3:
        raise ValueError("transition detection needs at least 3 beta steps")
    if merge_tol <= 0 or spike_factor <= 0 or window < 1:
        raise ValueError("merge_tol, spike_factor and window must be positive")
    counts = [distinct_center_count(y, merge_tol) for y in trace.clusters]
    deltas = trace.delta_y_norms
    events: list[TransitionEvent] = []
    for t in range(2, len(trace)):
        trailing = deltas[max(1, t - window):t]
        med = float(np.median(trailing)) if trailing else 0.0
        spike = deltas[t] > spike_factor * med if med > 0 else deltas[t] > 0.0
        if spike and counts[t] > counts[t - 1]:
            events.append(TransitionEvent(
                beta_at=trace.betas[t],
                delta_y_norm=deltas[t],
                distinct_before=counts[t - 1],
                distinct_after=counts[t],
            ))
    return events
