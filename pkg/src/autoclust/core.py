"""Core data model for autonomy-aware clustering.

Entities carry feature vectors ``x_i`` with relative weights ``rho(i)``;
clusters are represented by center vectors ``y_l``.  Entities do not always
join the cluster they are assigned to: an autonomy kernel ``p(k|j,i)`` gives
the probability that entity ``i``, prescribed cluster ``j``, actually joins
cluster ``k``.  The central quantity everywhere downstream is the average
association cost

    d_avg(x_i, y_j) = sum_k p(k|j,i) * ||x_i - y_k||^2

and the expected distortion of a (soft or hard) assignment policy ``pi``:

    D = sum_i rho(i) sum_j pi(j|i) d_avg(x_i, y_j).

All arrays are float64.  Value objects are immutable; every mutation goes
through a constructor so the validation invariants hold at all times.
"""

from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Tolerances for construction-time validation.
WEIGHT_SUM_TOL = 1e-12
ROW_SUM_TOL = 1e-9

# Numeric CSV cell format: 17 significant digits round-trips float64 exactly.
CSV_FLOAT_FMT = "%.17g"


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


def format_float(x: float) -> str:
    """Render one float for CSV output (17 significant digits)."""
    return CSV_FLOAT_FMT % float(x)


def squared_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Squared Euclidean distance ||x - y||^2 between two vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(diff @ diff)


def sqdist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared distances, shape (len(a), len(b)).

    Computed from explicit differences (not the expanded dot-product form),
    so entries are exactly nonnegative.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def _max_pairwise_distance(points: np.ndarray) -> float:
    """Largest Euclidean distance between any two rows (blocked)."""
    n = points.shape[0]
    best = 0.0
    step = 512
    for s in range(0, n, step):
        block = points[s : s + step]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


@dataclass(frozen=True)
class Dataset:
    """Weighted point cloud.

    Attributes
    ----------
    points : (N, d) array
        Entity feature vectors.
    weights : (N,) array
        Relative weights rho(i); nonnegative, summing to one.
    domain_radius : float
        Diameter bound R of the working domain.  When auto-computed it is the
        maximum pairwise distance between points.
    """

    points: np.ndarray
    weights: np.ndarray
    domain_radius: float

    def __post_init__(self):
        pts = self.points
        w = self.weights
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a (N, d) array with N >= 1")
        if not np.isfinite(pts).all():
            raise ValueError("points must be finite")
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must be one per point")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must sum to 1")
        if not np.isfinite(self.domain_radius) or self.domain_radius < 0:
            raise ValueError("domain_radius must be finite and nonnegative")

    @classmethod
    def from_points(
        cls,
        points: np.ndarray,
        weights: np.ndarray | None = None,
        domain_radius: float | None = None,
    ) -> "Dataset":
        """Build a dataset; weights default to uniform and are normalized."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("points must be a (N, d) array")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (n,):
                raise ValueError("weights must be one per point")
            if (w < 0).any() or not np.isfinite(w).all():
                raise ValueError("weights must be finite and nonnegative")
            total = float(w.sum())
            if total <= 0:
                raise ValueError("weights must have positive total")
            w = w / total
        if domain_radius is None:
            domain_radius = _max_pairwise_distance(pts)
        return cls(_readonly(pts), _readonly(w), float(domain_radius))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def weighted_mean(self) -> np.ndarray:
        return self.weights @ self.points


@dataclass(frozen=True)
class ClusterSet:
    """Cluster centers, shape (K, d)."""

    y: np.ndarray

    def __post_init__(self):
        if self.y.ndim != 2 or self.y.shape[0] < 1:
            raise ValueError("centers must be a (K, d) array with K >= 1")
        if not np.isfinite(self.y).all():
            raise ValueError("centers must be finite")

    @classmethod
    def from_array(cls, y: np.ndarray) -> "ClusterSet":
        return cls(_readonly(y))

    @property
    def k(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """Centers as one (K*d,) vector: y_1 first, then y_2, ..."""
        return self.y.reshape(-1)


@dataclass(frozen=True)
class AssignmentPolicy:
    """Row-stochastic assignment probabilities pi(j|i), shape (N, K).

    ``mode`` is "soft" or "hard"; hard policies are exactly one-hot.
    """

    probs: np.ndarray
    mode: str = "soft"

    def __post_init__(self):
        p = self.probs
        if p.ndim != 2:
            raise ValueError("policy must be a (N, K) array")
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if not np.isfinite(p).all():
            raise ValueError("policy entries must be finite")
        if (p < -1e-12).any() or (p > 1 + 1e-12).any():
            raise ValueError("policy entries must lie in [0, 1]")
        rows = p.sum(axis=1)
        if np.abs(rows - 1.0).max() > ROW_SUM_TOL:
            raise ValueError("policy rows must sum to 1")
        if self.mode == "hard":
            if not np.isin(p, (0.0, 1.0)).all():
                raise ValueError("hard policy must be one-hot")

    @classmethod
    def from_probs(cls, probs: np.ndarray, mode: str = "soft") -> "AssignmentPolicy":
        return cls(_readonly(probs), mode)

    @classmethod
    def uniform(cls, n: int, k: int) -> "AssignmentPolicy":
        return cls.from_probs(np.full((n, k), 1.0 / k))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]

    def assignments(self) -> np.ndarray:
        """Per-entity cluster index (argmax; ties go to the lowest index)."""
        return np.argmax(self.probs, axis=1)


class AutonomyModel(ABC):
    """Conditional kernel p(k|j,i): realized cluster k given prescription j.

    Columns are distributions over k: sum_k p(k|j,i) = 1 for every (j, i).
    """

    behavior: str = "abstract"

    @property
    @abstractmethod
    def depends_on_Y(self) -> bool:
        """True when the kernel changes as the cluster centers move."""

    @abstractmethod
    def tensor(self, data: Dataset, clusters: ClusterSet) -> np.ndarray:
        """Full kernel with shape (K, K, N), indexed [k, j, i].

        May return a read-only broadcast view; callers must not mutate it.
        """

    def prob_column(self, i: int, j: int, data: Dataset, clusters: ClusterSet) -> np.ndarray:
        """p(.|j,i) as a length-K vector.  Subclasses override for speed."""
        return np.array(self.tensor(data, clusters)[:, j, i])

    def prob(self, i: int, j: int, k: int, data: Dataset, clusters: ClusterSet) -> float:
        return float(self.prob_column(i, j, data, clusters)[k])

    def sample(self, i: int, j: int, data: Dataset, clusters: ClusterSet,
               rng: np.random.Generator) -> int:
        """Draw one realized cluster k ~ p(.|j,i)."""
        col = self.prob_column(i, j, data, clusters)
        return int(rng.choice(col.shape[0], p=col / col.sum()))

    def sample_many(self, i: int, j: int, data: Dataset, clusters: ClusterSet,
                    rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` iid realized clusters from p(.|j,i)."""
        col = self.prob_column(i, j, data, clusters)
        return rng.choice(col.shape[0], size=size, p=col / col.sum())


def avg_distance_matrix(data: Dataset, clusters: ClusterSet,
                        autonomy: AutonomyModel) -> np.ndarray:
    """Average association costs d_avg(x_i, y_j), shape (N, K).

    d_avg[i, j] = sum_k p(k|j,i) * ||x_i - y_k||^2.
    """
    p = autonomy.tensor(data, clusters)
    if p.shape != (clusters.k, clusters.k, data.n):
        raise ValueError(
            f"autonomy tensor shape {p.shape} does not match "
            f"K={clusters.k}, N={data.n}"
        )
    d_raw = sqdist_matrix(data.points, clusters.y)
    return np.einsum("ik,kji->ij", d_raw, p)


def objective_D(data: Dataset, clusters: ClusterSet, policy: AssignmentPolicy,
                autonomy: AutonomyModel) -> float:
    """Expected distortion D of a policy under the autonomy kernel."""
    if policy.probs.shape != (data.n, clusters.k):
        raise ValueError("policy shape does not match data/clusters")
    d_avg = avg_distance_matrix(data, clusters, autonomy)
    return float(np.sum(data.weights[:, None] * policy.probs * d_avg))


def harden(policy: AssignmentPolicy) -> AssignmentPolicy:
    """One-hot policy at the row-wise argmax (ties to the lowest index)."""
    idx = policy.assignments()
    hard = np.zeros_like(policy.probs)
    hard[np.arange(policy.n), idx] = 1.0
    return AssignmentPolicy.from_probs(hard, mode="hard")


# ---------------------------------------------------------------------------
# Dataset CSV format: header x0,...,x{d-1}[,weight]

def read_dataset_csv(path: str | Path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_weight = header and header[-1] == "weight"
        coord_cols = header[:-1] if has_weight else header
        expected = [f"x{i}" for i in range(len(coord_cols))]
        if coord_cols != expected:
            raise ValueError(
                f"{path}: header must be x0,...,x{{d-1}}[,weight], got {header}"
            )
        d = len(coord_cols)
        pts, wts = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite(vals).all():
                raise ValueError(f"{path}:{lineno}: non-finite value")
            pts.append(vals[:d])
            if has_weight:
                wts.append(vals[d])
    if not pts:
        raise ValueError(f"{path}: no data rows")
    return Dataset.from_points(np.array(pts), np.array(wts) if has_weight else None)


def write_dataset_csv(path: str | Path, data: Dataset,
                      include_weights: bool = False) -> None:
    path = Path(path)
    d = data.dim
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"x{i}" for i in range(d)]
        if include_weights:
            header.append("weight")
        writer.writerow(header)
        for i in range(data.n):
            row = [format_float(v) for v in data.points[i]]
            if include_weights:
                row.append(format_float(data.weights[i]))
            writer.writerow(row)
