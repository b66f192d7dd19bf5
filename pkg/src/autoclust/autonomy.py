"""Autonomy kernels: how entities deviate from their prescribed cluster.

Three concrete behaviors:

* :class:`IdentityAutonomy` — entities always comply, p(k|j,i) = 1 iff k == j.
* :class:`TabularAutonomy` — an explicit (K, K, N) table, fixed in Y.
* :class:`ParametricAutonomy` — compliance probability ``1 - kappa`` with the
  override mass spread over the other clusters by a Gibbs choice on
  ``c_k(j, i) = zeta * d(y_j, y_k) + gamma * d(x_i, y_k)`` at temperature T.

The parametric family depends on the cluster centers whenever kappa > 0 and
(gamma > 0 or zeta > 0); everything downstream branches on ``depends_on_Y``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ROW_SUM_TOL,
    AutonomyModel,
    ClusterSet,
    Dataset,
    format_float,
    sqdist_matrix,
)

# full_tensor refuses to materialize more than this many kernel entries.
DEFAULT_MAX_TENSOR_ENTRIES = 50_000_000


class IdentityAutonomy(AutonomyModel):
    """Fully compliant entities: the realized cluster is the prescribed one."""

    behavior = "identity"

    @property
    def depends_on_Y(self) -> bool:
        return False

    def tensor(self, data: Dataset, clusters: ClusterSet) -> np.ndarray:
        k = clusters.k
        eye = np.eye(k)
        return np.broadcast_to(eye[:, :, None], (k, k, data.n))

    def prob_column(self, i, j, data, clusters) -> np.ndarray:
        col = np.zeros(clusters.k)
        col[j] = 1.0
        return col

    def sample(self, i, j, data, clusters, rng) -> int:
        return int(j)

    def sample_many(self, i, j, data, clusters, rng, size) -> np.ndarray:
        return np.full(size, int(j), dtype=np.int64)


class TabularAutonomy(AutonomyModel):
    """Explicit kernel table p[k, j, i] with shape (K, K, N)."""

    behavior = "tabular"

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 3 or table.shape[0] != table.shape[1]:
            raise ValueError("table must have shape (K, K, N)")
        if not np.isfinite(table).all():
            raise ValueError("table entries must be finite")
        if (table < -1e-12).any() or (table > 1 + 1e-12).any():
            raise ValueError("table entries must lie in [0, 1]")
        col_sums = table.sum(axis=0)
        if np.abs(col_sums - 1.0).max() > ROW_SUM_TOL:
            raise ValueError("sum_k p(k|j,i) must equal 1 for every (j, i)")
        self._table = table
        self._table.setflags(write=False)

    @property
    def depends_on_Y(self) -> bool:
        return False

    @property
    def num_clusters(self) -> int:
        return self._table.shape[0]

    @property
    def num_entities(self) -> int:
        return self._table.shape[2]

    def tensor(self, data: Dataset, clusters: ClusterSet) -> np.ndarray:
        if clusters.k != self.num_clusters:
            raise ValueError(
                f"table built for K={self.num_clusters}, got K={clusters.k}"
            )
        if data.n != self.num_entities:
            raise ValueError(
                f"table built for N={self.num_entities}, got N={data.n}"
            )
        return self._table

    def prob_column(self, i, j, data, clusters) -> np.ndarray:
        return np.array(self._table[:, j, i])

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, num_entities: int) -> "TabularAutonomy":
        """Share one (K, K) kernel across all entities."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        return cls(np.repeat(m[:, :, None], num_entities, axis=2))


@dataclass(frozen=True)
class ParametricAutonomy(AutonomyModel):
    """Compliance 1-kappa; override mass follows a Gibbs choice over k != j.

    p(k|j,i) = 1 - kappa                            if k == j
             = kappa * softmax_{k != j}(-c_k / T)   otherwise,
    with c_k(j,i) = zeta * d(y_j, y_k) + gamma * d(x_i, y_k).
    """

    kappa: float
    gamma: float = 0.0
    zeta: float = 0.0
    temperature: float = 1.0

    behavior = "parametric"

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.gamma < 0 or self.zeta < 0:
            raise ValueError("gamma and zeta must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def depends_on_Y(self) -> bool:
        return self.kappa > 0 and (self.gamma > 0 or self.zeta > 0)

    def tensor(self, data: Dataset, clusters: ClusterSet) -> np.ndarray:
        k = clusters.k
        n = data.n
        if k == 1:
            if self.kappa > 0:
                raise ValueError("K=1 leaves no override target for kappa > 0")
            return np.ones((1, 1, n))
        if self.kappa == 0.0:
            eye = np.eye(k)
            return np.broadcast_to(eye[:, :, None], (k, k, n))
        # c[i, j, k]: override cost of cluster k for entity i prescribed j
        cc = sqdist_matrix(clusters.y, clusters.y)       # cc[j, k]
        ce = sqdist_matrix(data.points, clusters.y)      # ce[i, k]
        c = self.zeta * cc[None, :, :] + self.gamma * ce[:, None, :]
        diag = np.arange(k)
        c[:, diag, diag] = np.inf                        # exclude k == j
        c_min = c.min(axis=2, keepdims=True)
        w = np.exp(-(c - c_min) / self.temperature)
        w[:, diag, diag] = 0.0
        w /= w.sum(axis=2, keepdims=True)
        p = self.kappa * w
        p[:, diag, diag] = 1.0 - self.kappa
        return p.transpose(2, 1, 0)

    def prob_column(self, i, j, data, clusters) -> np.ndarray:
        k = clusters.k
        if k == 1:
            if self.kappa > 0:
                raise ValueError("K=1 leaves no override target for kappa > 0")
            return np.ones(1)
        col = np.zeros(k)
        col[j] = 1.0 - self.kappa
        if self.kappa == 0.0:
            return col
        c = (
            self.zeta * ((clusters.y[j] - clusters.y) ** 2).sum(axis=1)
            + self.gamma * ((data.points[i] - clusters.y) ** 2).sum(axis=1)
        )
        c[j] = np.inf
        w = np.exp(-(c - c[np.isfinite(c)].min()) / self.temperature)
        w[j] = 0.0
        col += self.kappa * w / w.sum()
        return col


def parametric_prob(model: ParametricAutonomy, i: int, j: int, k: int,
                    data: Dataset, clusters: ClusterSet) -> float:
    """Scalar p(k|j,i) for the parametric family."""
    return model.prob(i, j, k, data, clusters)


def sample_override(autonomy: AutonomyModel, i: int, j: int, data: Dataset,
                    clusters: ClusterSet, rng: np.random.Generator) -> int:
    """Draw the realized cluster for entity i prescribed cluster j."""
    return autonomy.sample(i, j, data, clusters, rng)


def full_tensor(data: Dataset, clusters: ClusterSet, autonomy: AutonomyModel,
                max_entries: int = DEFAULT_MAX_TENSOR_ENTRIES) -> np.ndarray:
    """Materialized copy of the kernel tensor, with a memory guard."""
    entries = data.n * clusters.k * clusters.k
    if entries > max_entries:
        raise MemoryError(
            f"kernel tensor would hold {entries} entries (limit {max_entries})"
        )
    return np.array(autonomy.tensor(data, clusters))


# ---------------------------------------------------------------------------
# Tabular autonomy CSV: rows i,j,k,p covering all (i, j, k)

def read_tabular_csv(path: str | Path, num_clusters: int,
                     num_entities: int) -> TabularAutonomy:
    path = Path(path)
    table = np.full((num_clusters, num_clusters, num_entities), np.nan)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["i", "j", "k", "p"]:
            raise ValueError(f"{path}: header must be i,j,k,p")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j, k = int(row[0]), int(row[1]), int(row[2])
                p = float(row[3])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= i < num_entities and 0 <= j < num_clusters
                    and 0 <= k < num_clusters):
                raise ValueError(f"{path}:{lineno}: index out of range")
            table[k, j, i] = p
    if np.isnan(table).any():
        raise ValueError(f"{path}: table does not cover all (i, j, k)")
    return TabularAutonomy(table)


def write_tabular_csv(path: str | Path, autonomy: TabularAutonomy) -> None:
    path = Path(path)
    table = autonomy._table
    k_total, _, n_total = table.shape
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "k", "p"])
        for i in range(n_total):
            for j in range(k_total):
                for k in range(k_total):
                    writer.writerow([i, j, k, format_float(table[k, j, i])])
