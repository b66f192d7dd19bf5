"""Deterministic annealing solver for autonomy-aware clustering.

At inverse temperature beta the soft assignment policy is the Gibbs policy

    pi(j|i) = exp(-beta * d_avg(x_i, y_j)) / sum_j' exp(-beta * d_avg(x_i, y_j'))

and the centers minimize the free energy

    F(Y) = -(1/beta) * sum_i rho(i) * log sum_j exp(-beta * d_avg(x_i, y_j)).

The inner solve at fixed beta alternates the Gibbs policy with the weighted
centroid update

    y_l = sum_{i,j} rho(i) p(l|j,i) pi(j|i) x_i / sum_{i,j} rho(i) p(l|j,i) pi(j|i)

which is a fixed-point iteration on the stationarity condition of F.  A
safeguarded gradient path (Armijo backtracking) takes over when a cluster mass
collapses, when one sweep inflates a cluster mass by 4x or more, or when the
sweeps fail to settle under a center-dependent autonomy kernel.  Annealing
multiplies beta geometrically, injecting a small Gaussian perturbation after
every stage so symmetry-broken solutions can emerge at phase transitions.

Center-dependent kernels are handled by freezing p at the current centers for
each sweep (a Jacobi-style update) and by finite-difference gradients on the
Armijo path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    AssignmentPolicy,
    AutonomyModel,
    ClusterSet,
    Dataset,
    format_float,
    harden,
    sqdist_matrix,
)

# Cluster masses below this floor are treated as collapsed.
MASS_FLOOR = 1e-12

# One-sweep mass inflation that triggers the safeguarded path.
MASS_RATIO_LIMIT = 4.0

# Step size for finite-difference free-energy gradients.
FD_GRAD_SCALE = 1e-5


class DegenerateClusterError(RuntimeError):
    """A cluster mass hit zero; the fixed-point update is undefined."""

    def __init__(self, cluster_index: int, mass: float):
        super().__init__(
            f"cluster {cluster_index} mass {mass:.3e} below floor {MASS_FLOOR:.0e}"
        )
        self.cluster_index = cluster_index
        self.mass = mass


class NonConvergenceError(RuntimeError):
    """An inner solve exhausted its iteration budget."""

    def __init__(self, message: str, beta: float | None = None,
                 diagnostics: dict | None = None):
        if beta is not None:
            message = f"{message} (beta={beta:.6g})"
        super().__init__(message)
        self.beta = beta
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ArmijoParams:
    """Backtracking line-search constants: initial step s, sufficient-decrease
    fraction rho, shrink factor xi."""

    s: float = 1.0
    rho: float = 0.1
    xi: float = 0.5
    max_backtracks: int = 60
    max_steps: int = 500

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("s must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")


@dataclass(frozen=True)
class AnnealConfig:
    """Annealing schedule and inner-solve tolerances.

    ``inner_tol=None`` resolves to 1e-7 * (1 + R) at run time, with R the
    dataset's domain radius.

    ``inner_path`` selects the per-stage solver: "auto" runs the fixed-point
    sweeps with the safeguarded Armijo fallback, "armijo" runs pure Armijo
    descent at every stage.  The fixed-point map takes mass-preconditioned
    steps, so right after a symmetry-breaking split it can hop between
    stationary points and strand a center on the global mean; plain descent
    with unit steps tracks the downhill path and keeps all centers live, at
    the cost of more iterations per stage.
    """

    beta_min: float = 1e-3
    beta_max: float = 1e5
    tau: float = 1.1
    inner_tol: float | None = None
    inner_max_iters: int = 1000
    noise_scale: float = 1e-4
    seed: int = 0
    inner_path: str = "auto"
    armijo: ArmijoParams = field(default_factory=ArmijoParams)

    def __post_init__(self):
        if self.beta_min <= 0:
            raise ValueError("beta_min must be positive")
        if self.beta_max < self.beta_min:
            raise ValueError("beta_max must be >= beta_min")
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")
        if self.inner_tol is not None and self.inner_tol <= 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_max_iters < 1:
            raise ValueError("inner_max_iters must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.inner_path not in ("auto", "armijo"):
            raise ValueError("inner_path must be 'auto' or 'armijo'")

    def resolve_inner_tol(self, data: Dataset) -> float:
        if self.inner_tol is not None:
            return self.inner_tol
        return 1e-7 * (1.0 + data.domain_radius)


@dataclass(frozen=True)
class SolverState:
    """Converged snapshot at one beta."""

    beta: float
    clusters: ClusterSet
    policy: AssignmentPolicy
    free_energy: float
    cluster_mass: np.ndarray
    hard_policy: AssignmentPolicy | None = None


@dataclass
class InnerSolveResult:
    state: SolverState
    path: str                      # "fixed_point" or "armijo"
    iterations: int
    free_energy_history: list[float]


@dataclass
class AnnealTrace:
    """Per-beta records of an annealing run.

    ``clusters[t]`` is the converged center array at ``betas[t]`` (before the
    inter-stage perturbation).  ``delta_y_norms[t]`` is the 2-norm of the
    stacked center displacement from the previous stage (0 for the first).
    """

    betas: list[float] = field(default_factory=list)
    free_energies: list[float] = field(default_factory=list)
    distortions: list[float] = field(default_factory=list)
    delta_y_norms: list[float] = field(default_factory=list)
    paths: list[str] = field(default_factory=list)
    clusters: list[np.ndarray] = field(default_factory=list)
    q_errors: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.betas)

    def append(self, beta, free_energy, distortion, delta_y, path, y):
        self.betas.append(float(beta))
        self.free_energies.append(float(free_energy))
        self.distortions.append(float(distortion))
        self.delta_y_norms.append(float(delta_y))
        self.paths.append(path)
        self.clusters.append(np.array(y))

    def to_csv(self, path: str | Path, transition_betas=()) -> None:
        """Write ``beta,free_energy,distortion,delta_y_norm,path,transition_flag``.

        Traces produced by the tabular learner with a reference autonomy add
        a trailing ``q_error`` column.
        """
        marked = set(float(b) for b in transition_betas)
        header = "beta,free_energy,distortion,delta_y_norm,path,transition_flag"
        with_q = len(self.q_errors) == len(self.betas) and self.q_errors
        if with_q:
            header += ",q_error"
        lines = [header]
        for t in range(len(self.betas)):
            cells = [
                format_float(self.betas[t]),
                format_float(self.free_energies[t]),
                format_float(self.distortions[t]),
                format_float(self.delta_y_norms[t]),
                self.paths[t],
                "1" if self.betas[t] in marked else "0",
            ]
            if with_q:
                cells.append(format_float(self.q_errors[t]))
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Stage-level operations

def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def _gibbs_probs(d_avg: np.ndarray, beta: float) -> np.ndarray:
    return _softmax_rows(-beta * d_avg)


def _avg_costs(data: Dataset, clusters: ClusterSet, p: np.ndarray) -> np.ndarray:
    d_raw = sqdist_matrix(data.points, clusters.y)
    return np.einsum("ik,kji->ij", d_raw, p)


def gibbs_policy(data: Dataset, clusters: ClusterSet, autonomy: AutonomyModel,
                 beta: float) -> AssignmentPolicy:
    """Row-wise Gibbs policy over clusters at inverse temperature beta.

    beta = 0 gives the uniform policy; larger beta concentrates mass on the
    smallest average cost.  Rows are computed with max-subtraction, so they
    are finite at any beta.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    p = autonomy.tensor(data, clusters)
    d_avg = _avg_costs(data, clusters, p)
    return AssignmentPolicy.from_probs(_gibbs_probs(d_avg, beta))


def _mass_and_weights(data: Dataset, probs: np.ndarray,
                      p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """w[l, i] = rho(i) * sum_j p(l|j,i) pi(j|i) and the cluster masses."""
    w = np.einsum("lji,ij->li", p, probs) * data.weights[None, :]
    return w.sum(axis=1), w


def cluster_masses(data: Dataset, policy: AssignmentPolicy,
                   autonomy: AutonomyModel, clusters: ClusterSet) -> np.ndarray:
    """Realized cluster masses sum_{i,j} rho(i) pi(j|i) p(l|j,i)."""
    p = autonomy.tensor(data, clusters)
    mass, _ = _mass_and_weights(data, policy.probs, p)
    return mass


def centroid_update(data: Dataset, policy: AssignmentPolicy,
                    autonomy: AutonomyModel, clusters: ClusterSet) -> ClusterSet:
    """One weighted-centroid sweep; requires every cluster mass positive."""
    p = autonomy.tensor(data, clusters)
    mass, w = _mass_and_weights(data, policy.probs, p)
    low = int(np.argmin(mass))
    if mass[low] <= MASS_FLOOR:
        raise DegenerateClusterError(low, float(mass[low]))
    y = (w @ data.points) / mass[:, None]
    return ClusterSet.from_array(y)


def free_energy(data: Dataset, clusters: ClusterSet, autonomy: AutonomyModel,
                beta: float) -> float:
    """F(Y) = -(1/beta) sum_i rho(i) log sum_j exp(-beta d_avg(i,j))."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    p = autonomy.tensor(data, clusters)
    d_avg = _avg_costs(data, clusters, p)
    return _free_energy_from_costs(d_avg, data.weights, beta)


def _free_energy_from_costs(d_avg: np.ndarray, weights: np.ndarray,
                            beta: float) -> float:
    z = -beta * d_avg
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return float(-(weights @ lse) / beta)


def _distortion_from_costs(d_avg: np.ndarray, probs: np.ndarray,
                           weights: np.ndarray) -> float:
    return float(np.sum(weights[:, None] * probs * d_avg))


def grad_free_energy(data: Dataset, clusters: ClusterSet,
                     autonomy: AutonomyModel, beta: float) -> np.ndarray:
    """Gradient of F with respect to the centers, shape (K, d).

    For center-independent kernels the closed form is

        dF/dy_l = 2 sum_{i,j} rho(i) pi(j|i) p(l|j,i) (y_l - x_i);

    center-dependent kernels fall back to central finite differences of F
    with step 1e-5 * (1 + max|Y|).
    """
    if autonomy.depends_on_Y:
        return _fd_grad_free_energy(data, clusters, autonomy, beta)
    p = autonomy.tensor(data, clusters)
    d_avg = _avg_costs(data, clusters, p)
    probs = _gibbs_probs(d_avg, beta)
    mass, w = _mass_and_weights(data, probs, p)
    return 2.0 * (mass[:, None] * clusters.y - w @ data.points)


def _fd_grad_free_energy(data: Dataset, clusters: ClusterSet,
                         autonomy: AutonomyModel, beta: float) -> np.ndarray:
    y = clusters.y
    h = FD_GRAD_SCALE * (1.0 + float(np.abs(y).max()))
    grad = np.zeros_like(y)
    for l in range(y.shape[0]):
        for m in range(y.shape[1]):
            for sign in (1.0, -1.0):
                yp = y.copy()
                yp[l, m] += sign * h
                f = free_energy(data, ClusterSet.from_array(yp), autonomy, beta)
                grad[l, m] += sign * f
    return grad / (2.0 * h)


def _state_at(data: Dataset, clusters: ClusterSet, autonomy: AutonomyModel,
              beta: float) -> SolverState:
    p = autonomy.tensor(data, clusters)
    d_avg = _avg_costs(data, clusters, p)
    probs = _gibbs_probs(d_avg, beta)
    mass, _ = _mass_and_weights(data, probs, p)
    return SolverState(
        beta=float(beta),
        clusters=clusters,
        policy=AssignmentPolicy.from_probs(probs),
        free_energy=_free_energy_from_costs(d_avg, data.weights, beta),
        cluster_mass=mass,
    )


def armijo_descent(data: Dataset, autonomy: AutonomyModel, state: SolverState,
                   config: AnnealConfig) -> InnerSolveResult:
    """Gradient descent on F with Armijo backtracking.

    Shrinks the step until F(Y - sigma * grad) - F(Y) <= -rho * sigma *
    ||grad||^2, then steps.  Stops when the gradient's max-norm drops below
    the inner tolerance; takes no step when the gradient is already zero.
    """
    beta = state.beta
    tol = config.resolve_inner_tol(data)
    a = config.armijo
    y = np.array(state.clusters.y)
    history: list[float] = []
    for step in range(a.max_steps):
        clusters = ClusterSet.from_array(y)
        g = grad_free_energy(data, clusters, autonomy, beta)
        gnorm_inf = float(np.abs(g).max())
        f0 = free_energy(data, clusters, autonomy, beta)
        history.append(f0)
        if gnorm_inf < tol:
            return InnerSolveResult(_state_at(data, clusters, autonomy, beta),
                                    "armijo", step, history)
        g2 = float((g * g).sum())
        sigma = a.s
        accepted = False
        for _ in range(a.max_backtracks):
            trial = ClusterSet.from_array(y - sigma * g)
            f_trial = free_energy(data, trial, autonomy, beta)
            if f_trial - f0 <= -a.rho * sigma * g2:
                accepted = True
                break
            sigma *= a.xi
        if not accepted:
            # The required decrease is below float resolution; treat the
            # current point as numerically stationary.
            return InnerSolveResult(_state_at(data, clusters, autonomy, beta),
                                    "armijo", step, history)
        y = y - sigma * g
    raise NonConvergenceError(
        f"armijo descent did not converge in {a.max_steps} steps",
        beta=beta,
        diagnostics={"grad_inf_norm": gnorm_inf},
    )


def inner_fixed_point(data: Dataset, autonomy: AutonomyModel,
                      state: SolverState, config: AnnealConfig) -> InnerSolveResult:
    """Solve the stage at ``state.beta`` starting from ``state.clusters``.

    Runs policy/centroid sweeps until the center displacement max-norm drops
    below the inner tolerance.  Center-dependent kernels are frozen at the
    sweep's current centers.  Switches permanently (for this stage) to the
    Armijo path when a mass collapses or inflates by 4x or more in one sweep;
    center-dependent kernels also fall back to Armijo if the sweeps fail to
    settle within the iteration budget, while center-independent kernels
    raise NonConvergenceError there.
    """
    beta = state.beta
    tol = config.resolve_inner_tol(data)
    y = np.array(state.clusters.y)
    history: list[float] = []
    prev_mass: np.ndarray | None = None
    for sweep in range(config.inner_max_iters):
        clusters = ClusterSet.from_array(y)
        p = autonomy.tensor(data, clusters)
        d_avg = _avg_costs(data, clusters, p)
        probs = _gibbs_probs(d_avg, beta)
        history.append(_free_energy_from_costs(d_avg, data.weights, beta))
        mass, w = _mass_and_weights(data, probs, p)
        low = int(np.argmin(mass))
        if mass[low] <= MASS_FLOOR:
            result = armijo_descent(data, autonomy,
                                    _state_at(data, clusters, autonomy, beta),
                                    config)
            result.free_energy_history = history + result.free_energy_history
            return result
        if prev_mass is not None and bool((mass >= MASS_RATIO_LIMIT * prev_mass).any()):
            result = armijo_descent(data, autonomy,
                                    _state_at(data, clusters, autonomy, beta),
                                    config)
            result.free_energy_history = history + result.free_energy_history
            return result
        prev_mass = mass
        y_new = (w @ data.points) / mass[:, None]
        if float(np.abs(y_new - y).max()) < tol:
            final = _state_at(data, ClusterSet.from_array(y_new), autonomy, beta)
            return InnerSolveResult(final, "fixed_point", sweep + 1, history)
        y = y_new
    if autonomy.depends_on_Y:
        result = armijo_descent(data, autonomy,
                                _state_at(data, ClusterSet.from_array(y),
                                          autonomy, beta),
                                config)
        result.free_energy_history = history + result.free_energy_history
        return result
    raise NonConvergenceError(
        f"fixed-point sweeps did not converge in {config.inner_max_iters} iterations",
        beta=beta,
        diagnostics={"last_delta_inf": float(np.abs(y_new - y).max())},
    )


def anneal(data: Dataset, autonomy: AutonomyModel, num_clusters: int,
           config: AnnealConfig) -> tuple[SolverState, AnnealTrace]:
    """Full annealing run from beta_min to beta_max.

    Centers start at the global weighted mean plus Gaussian noise of scale
    ``noise_scale``.  After every stage (the last included) the centers are
    perturbed with fresh noise; the reported final state re-runs one
    noiseless inner solve so it is a stationary point.  The returned state
    carries the hardened policy alongside the soft one.
    """
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    rng = np.random.default_rng(config.seed)
    solve = armijo_descent if config.inner_path == "armijo" else inner_fixed_point
    k, d = num_clusters, data.dim
    y = np.tile(data.weighted_mean(), (k, 1))
    y = y + rng.normal(0.0, config.noise_scale, size=(k, d))
    trace = AnnealTrace()
    beta = config.beta_min
    last_beta = beta
    prev_y: np.ndarray | None = None
    while beta <= config.beta_max * (1 + 1e-12):
        start = _state_at(data, ClusterSet.from_array(y), autonomy, beta)
        result = solve(data, autonomy, start, config)
        state = result.state
        y_conv = np.array(state.clusters.y)
        d_avg = _avg_costs(data, state.clusters,
                           autonomy.tensor(data, state.clusters))
        distortion = _distortion_from_costs(d_avg, state.policy.probs, data.weights)
        delta = 0.0 if prev_y is None else float(
            np.linalg.norm((y_conv - prev_y).ravel()))
        trace.append(beta, state.free_energy, distortion, delta, result.path, y_conv)
        prev_y = y_conv
        last_beta = beta
        y = y_conv + rng.normal(0.0, config.noise_scale, size=(k, d))
        beta *= config.tau
    final_start = _state_at(data, ClusterSet.from_array(y), autonomy, last_beta)
    final = solve(data, autonomy, final_start, config).state
    final = replace(final, hard_policy=harden(final.policy))
    return final, trace
