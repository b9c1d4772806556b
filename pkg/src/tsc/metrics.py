"""Evaluation metrics: accuracy, representation smoothness, neighbor quality.

MAD (mean average distance) is the mean cosine distance over all ordered
node pairs; values near zero mean the representation rows have collapsed
onto one direction.  AMO and ANDCNN summarize the l-order neighborhood
structure: AMO counts shared neighbors (redundancy), ANDCNN counts
cross-class neighbors (individuality pressure).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InputError
from .graph import SparseMatrix

__all__ = [
    "MetricReport",
    "accuracy",
    "mad",
    "reachability_pattern",
    "amo",
    "andcnn",
]


@dataclass
class MetricReport:
    """Bundle of evaluation results for one trained model."""

    accuracy: float
    mad_per_layer: list[float] = field(default_factory=list)
    amo_per_order: list[float] = field(default_factory=list)
    andcnn_per_order: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mad_per_layer": self.mad_per_layer,
            "amo_per_order": self.amo_per_order,
            "andcnn_per_order": self.andcnn_per_order,
        }


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Argmax match rate over the masked rows; ties go to the lowest class."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        raise InputError("accuracy needs a non-empty mask")
    predicted = logits[rows].argmax(axis=1)
    return float((predicted == labels[rows]).sum() / rows.size)


def mad(H: np.ndarray) -> float:
    """Mean cosine distance (1 - cos) over all ordered pairs i != j.

    Zero rows have no direction; they count as distance 1 from everything,
    including each other.
    """
    H = np.asarray(H, dtype=np.float64)
    n = H.shape[0]
    if n < 2:
        raise InputError("mad needs at least two rows")
    norms = np.sqrt((H * H).sum(axis=1))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    unit = H / safe[:, None]
    distance = 1.0 - unit @ unit.T
    distance[zero, :] = 1.0
    distance[:, zero] = 1.0
    np.fill_diagonal(distance, 0.0)
    return float(distance.sum() / (n * (n - 1)))


def reachability_pattern(
    A: SparseMatrix, order: int, augment: bool = True
) -> sp.csr_matrix:
    """Boolean pattern of l-order reachability with the diagonal removed.

    ``augment`` includes self-loops before taking powers (the default), so
    patterns grow monotonically with the order and parity artifacts on
    bipartite structures vanish; pass False for the plain power of A.
    Powers are computed pattern-only (re-binarized each step), never as
    numeric matrix powers.
    """
    if order < 1:
        raise InputError("order must be >= 1")
    n = A.num_rows
    base = A._csr.astype(np.int64)
    if augment:
        base = base + sp.identity(n, dtype=np.int64, format="csr")
        base.data[:] = 1
    power = base.copy()
    for _ in range(order - 1):
        power = power @ base
        power.data[:] = 1  # keep the pattern, drop walk counts
    power = power.tolil()
    power.setdiag(0)
    power = power.tocsr()
    power.eliminate_zeros()
    power.data[:] = 1
    return power


def amo(A: SparseMatrix, order: int, augment: bool = True) -> float:
    """Average mutual overlap: Mean(S S^T) over all n^2 entries.

    S marks l-order reachability (diagonal excluded).  The full mean
    equals ||colsum(S)||^2 / n^2, which avoids forming S S^T.
    """
    S = reachability_pattern(A, order, augment)
    col_sums = np.asarray(S.sum(axis=0), dtype=np.float64).ravel()
    n = A.num_rows
    return float((col_sums**2).sum() / (n * n))


def andcnn(
    A: SparseMatrix, labels: np.ndarray, order: int, augment: bool = True
) -> float:
    """Average number of different-class nodes in the l-order neighborhood.

    Counts ordered pairs (i, j), i != j, with S_ij = 1 and differing
    labels, divided by the number of nodes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != A.num_rows:
        raise InputError("labels length must match the adjacency")
    S = reachability_pattern(A, order, augment).tocoo()
    differing = int((labels[S.row] != labels[S.col]).sum())
    return float(differing / A.num_rows)
