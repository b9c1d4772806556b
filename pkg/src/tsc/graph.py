"""Sparse graph core: CSR matrices, symmetric normalization, propagation.

The propagation operator used everywhere downstream is the self-loop
augmented, symmetrically normalized adjacency

    P = D̃^{-1/2} (A + I) D̃^{-1/2},   D̃ = diag(degree(A) + 1),

whose repeated application drives node features toward the closed-form
rank-one limit computed by :func:`limit_row_value`.  Degrees are taken
from ``A + I`` (self-loop inclusive); that convention is the only one
consistent with the ``sqrt((d_i+1)(d_j+1)) / (2m+n)`` limit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GenerationError, InputError
from .rng import labeled_stream

__all__ = [
    "SparseMatrix",
    "GraphDataset",
    "build_adjacency",
    "degree_vector",
    "normalize_sym",
    "spmm",
    "propagate_power",
    "limit_row_value",
    "limit_matrix",
    "generate_sbm",
    "connected_components",
    "load_dataset",
    "save_dataset",
    "validate_dataset",
]


@dataclass(frozen=True)
class SparseMatrix:
    """Real matrix in canonical CSR form.

    Canonical means: ``row_offsets`` is non-decreasing with
    ``row_offsets[0] == 0`` and ``row_offsets[-1] == nnz``, column indices
    are strictly increasing within each row, and no explicit zeros are
    stored.  Instances are immutable and safe to share across threads.
    """

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if offsets.shape != (self.num_rows + 1,):
            raise InputError("row_offsets must have length num_rows + 1")
        if offsets[0] != 0 or offsets[-1] != cols.shape[0] or np.any(np.diff(offsets) < 0):
            raise InputError("row_offsets must be non-decreasing from 0 to nnz")
        if cols.shape != vals.shape:
            raise InputError("col_indices and values must align")
        if cols.size and (cols.min() < 0 or cols.max() >= self.num_cols):
            raise InputError("column index out of range")
        # strictly increasing columns inside each row
        if cols.size > 1:
            same_row = np.ones(cols.size - 1, dtype=bool)  # pair (k, k+1) within one row
            starts = offsets[1:-1]
            starts = starts[(starts > 0) & (starts < cols.size)]
            same_row[starts - 1] = False
            if np.any(cols[1:][same_row] <= cols[:-1][same_row]):
                raise InputError("column indices must be strictly increasing per row")
        if np.any(vals == 0.0):
            raise InputError("explicit zero values are not allowed")
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        csr = sp.csr_matrix(
            (vals, cols, offsets), shape=(self.num_rows, self.num_cols), copy=False
        )
        object.__setattr__(self, "_csr", csr)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_rows, self.num_cols)

    @classmethod
    def from_coo(cls, rows, cols, vals, num_rows: int, num_cols: int) -> "SparseMatrix":
        """Build a canonical CSR matrix from triplets.

        Duplicate coordinates are summed; zeros (explicit or produced by
        cancellation) are dropped.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= num_rows):
            raise InputError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= num_cols):
            raise InputError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            new_group = np.empty(rows.size, dtype=bool)
            new_group[0] = True
            new_group[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            group_ids = np.cumsum(new_group) - 1
            summed = np.zeros(group_ids[-1] + 1, dtype=np.float64)
            np.add.at(summed, group_ids, vals)
            rows, cols, vals = rows[new_group], cols[new_group], summed
            keep = vals != 0.0
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
        offsets = np.zeros(num_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        np.cumsum(offsets, out=offsets)
        return cls(num_rows, num_cols, offsets, cols, vals)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def to_dense(self) -> np.ndarray:
        return np.asarray(self._csr.todense(), dtype=np.float64)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def to_edges(self) -> np.ndarray:
        """Extract the upper-triangle edge list of a symmetric binary matrix."""
        coo = self._csr.tocoo()
        keep = coo.row < coo.col
        return np.stack([coo.row[keep], coo.col[keep]], axis=1).astype(np.int64)


@dataclass
class GraphDataset:
    """Undirected, unweighted graph with node features and a fixed split."""

    num_nodes: int
    num_features: int
    num_classes: int
    edges: np.ndarray  # (m, 2) int64, u < v, canonical order, no duplicates
    features: np.ndarray  # (n, f) float64
    labels: np.ndarray  # (n,) int64 in [0, num_classes)
    train_mask: np.ndarray  # (n,) bool
    test_mask: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_mask = np.asarray(self.train_mask, dtype=bool)
        self.test_mask = np.asarray(self.test_mask, dtype=bool)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])


def validate_dataset(dataset: GraphDataset) -> list[str]:
    """Return every invariant violation found (empty list means clean)."""
    issues: list[str] = []
    n, f = dataset.num_nodes, dataset.num_features
    if dataset.features.shape != (n, f):
        issues.append(f"features shape {dataset.features.shape} != ({n}, {f})")
    if not np.all(np.isfinite(dataset.features)):
        issues.append("features contain NaN or Inf")
    if dataset.labels.shape != (n,):
        issues.append("labels length mismatch")
    elif dataset.labels.size and (
        dataset.labels.min() < 0 or dataset.labels.max() >= dataset.num_classes
    ):
        issues.append("label out of range")
    for name, mask in (("train_mask", dataset.train_mask), ("test_mask", dataset.test_mask)):
        if mask.shape != (n,):
            issues.append(f"{name} length mismatch")
    if dataset.train_mask.shape == (n,) and dataset.test_mask.shape == (n,):
        if np.any(dataset.train_mask & dataset.test_mask):
            issues.append("train and test masks overlap")
    edges = dataset.edges
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            issues.append("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            issues.append("self-loop present")
        if np.any(edges[:, 0] > edges[:, 1]):
            issues.append("edges must be stored with u < v")
        keys = edges[:, 0] * np.int64(n) + edges[:, 1]
        if np.unique(keys).size != keys.size:
            issues.append("duplicate edges present")
    if dataset.labels.shape == (n,) and dataset.train_mask.shape == (n,):
        present = np.unique(dataset.labels[dataset.train_mask])
        missing = sorted(set(range(dataset.num_classes)) - set(present.tolist()))
        if missing:
            issues.append(f"classes missing from train mask: {missing}")
    return issues


def build_adjacency(dataset: GraphDataset) -> SparseMatrix:
    """Symmetric binary adjacency with a zero diagonal."""
    n = dataset.num_nodes
    edges = dataset.edges
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            raise InputError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise InputError("self-loops are not allowed")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return SparseMatrix.from_coo(rows, cols, np.ones(rows.size), n, n)


def degree_vector(adjacency: SparseMatrix) -> np.ndarray:
    """Per-node degree of the plain adjacency (self-loops excluded)."""
    return np.diff(adjacency.row_offsets).astype(np.int64)


def normalize_sym(adjacency: SparseMatrix) -> SparseMatrix:
    """Self-loop augmented symmetric normalization of a binary adjacency.

    Entry (i, j) of the result is ``1 / sqrt((d_i + 1)(d_j + 1))`` wherever
    ``A + I`` is nonzero.  The result is symmetric with entries in [0, 1]
    and spectral radius at most 1.
    """
    n = adjacency.num_rows
    if adjacency.num_cols != n:
        raise InputError("adjacency must be square")
    coo = adjacency._csr.tocoo()
    if np.any(coo.row == coo.col):
        raise InputError("adjacency must have a zero diagonal")
    deg = degree_vector(adjacency)
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)
    diag = np.arange(n, dtype=np.int64)
    rows = np.concatenate([coo.row, diag])
    cols = np.concatenate([coo.col, diag])
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return SparseMatrix.from_coo(rows, cols, vals, n, n)


def spmm(sparse: SparseMatrix, dense: np.ndarray) -> np.ndarray:
    """Sparse times dense product with per-row ascending-column summation."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != sparse.num_cols:
        raise InputError(
            f"cannot multiply {sparse.shape} by {dense.shape}: inner dimensions disagree"
        )
    return sparse._csr @ dense


def propagate_power(L: SparseMatrix, X: np.ndarray, l: int) -> np.ndarray:
    """Apply the propagation operator ``l`` times (never forms ``L**l``)."""
    if l < 0:
        raise InputError("power must be non-negative")
    out = np.asarray(X, dtype=np.float64)
    for _ in range(l):
        out = spmm(L, out)
    return out


def limit_row_value(degrees: np.ndarray, m: int, n: int, i: int, j: int) -> float:
    """Closed-form infinite-propagation value of entry (i, j).

    For a connected graph the repeated normalized propagation of the
    identity converges entrywise to ``sqrt((d_i+1)(d_j+1)) / (2m+n)``.
    """
    d = np.asarray(degrees, dtype=np.float64)
    return float(np.sqrt((d[i] + 1.0) * (d[j] + 1.0)) / (2.0 * m + n))


def limit_matrix(degrees: np.ndarray, m: int) -> np.ndarray:
    """Full limit matrix; convenience wrapper around :func:`limit_row_value`."""
    d = np.asarray(degrees, dtype=np.float64)
    root = np.sqrt(d + 1.0)
    return np.outer(root, root) / (2.0 * m + d.size)


def connected_components(adjacency: SparseMatrix) -> np.ndarray:
    """Component label per node."""
    _, labels = sp.csgraph.connected_components(adjacency._csr, directed=False)
    return labels.astype(np.int64)


def _split_masks(
    labels: np.ndarray,
    num_classes: int,
    rng: np.random.Generator,
    train_per_class: int = 20,
    test_size: int = 1000,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded per-class train selection plus a capped test pool."""
    n = labels.shape[0]
    train_mask = np.zeros(n, dtype=bool)
    pool: list[np.ndarray] = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise GenerationError(f"class {c} has no nodes")
        take = min(train_per_class, members.size - 1) if members.size > 1 else 0
        if take == 0:
            raise GenerationError(f"class {c} too small to appear in both splits")
        perm = rng.permutation(members)
        train_mask[perm[:take]] = True
        pool.append(perm[take:])
    rest = rng.permutation(np.concatenate(pool))
    test_mask = np.zeros(n, dtype=bool)
    test_mask[rest[:test_size]] = True
    return train_mask, test_mask


def generate_sbm(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    seed: int,
    noise_std: float = 0.5,
) -> GraphDataset:
    """Stochastic-block-model dataset with block labels as classes.

    Features carry a one-hot block signal (at column ``block % feature_dim``)
    plus Gaussian noise.  The split takes up to 20 train nodes per class and
    up to 1000 test nodes, all drawn from the seeded stream, so identical
    seeds give byte-identical datasets.
    """
    if blocks < 1 or nodes_per_block < 1:
        raise GenerationError("blocks and nodes_per_block must be positive")
    if nodes_per_block < 2:
        raise GenerationError("each block needs at least 2 nodes to populate both splits")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise GenerationError("need 0 <= p_out <= p_in <= 1")
    if feature_dim < 1:
        raise GenerationError("feature_dim must be positive")
    rng = labeled_stream(seed, "sbm")
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks, dtype=np.int64), nodes_per_block)

    edge_chunks: list[np.ndarray] = []
    for a in range(blocks):
        a0 = a * nodes_per_block
        iu, ju = np.triu_indices(nodes_per_block, k=1)
        keep = rng.random(iu.size) < p_in
        if keep.any():
            edge_chunks.append(np.stack([a0 + iu[keep], a0 + ju[keep]], axis=1))
        for b in range(a + 1, blocks):
            b0 = b * nodes_per_block
            keep = rng.random(nodes_per_block * nodes_per_block) < p_out
            if keep.any():
                flat = np.flatnonzero(keep)
                u = a0 + flat // nodes_per_block
                v = b0 + flat % nodes_per_block
                edge_chunks.append(np.stack([u, v], axis=1))
    if edge_chunks:
        edges = np.concatenate(edge_chunks, axis=0)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)

    features = np.zeros((n, feature_dim), dtype=np.float64)
    features[np.arange(n), labels % feature_dim] = 1.0
    features += noise_std * rng.standard_normal((n, feature_dim))

    train_mask, test_mask = _split_masks(labels, blocks, rng)
    dataset = GraphDataset(
        num_nodes=n,
        num_features=feature_dim,
        num_classes=blocks,
        edges=edges,
        features=features,
        labels=labels,
        train_mask=train_mask,
        test_mask=test_mask,
    )
    issues = validate_dataset(dataset)
    if issues:
        raise GenerationError("generated dataset is invalid: " + "; ".join(issues))
    return dataset


# --- portable JSON format -------------------------------------------------
#
# A dataset on disk is a single UTF-8 JSON document with fields
# num_nodes, num_features, num_classes, edges ([u, v] pairs with u < v),
# features (row-major array of arrays), labels, train_mask, test_mask
# (0/1 arrays).  NaN/Inf are rejected on both read and write.


def load_dataset(path: str) -> GraphDataset:
    """Read and strictly validate a portable JSON dataset."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read dataset: {exc}") from exc
    with fh:
        try:
            raw = json.load(fh, parse_constant=_reject_constant)
        except ValueError as exc:
            raise InputError(f"{path}: not valid JSON ({exc})") from exc
    required = (
        "num_nodes",
        "num_features",
        "num_classes",
        "edges",
        "features",
        "labels",
        "train_mask",
        "test_mask",
    )
    missing = [key for key in required if key not in raw]
    if missing:
        raise InputError(f"{path}: missing fields {missing}")
    try:
        dataset = GraphDataset(
            num_nodes=int(raw["num_nodes"]),
            num_features=int(raw["num_features"]),
            num_classes=int(raw["num_classes"]),
            edges=np.asarray(raw["edges"], dtype=np.int64).reshape(-1, 2),
            features=np.asarray(raw["features"], dtype=np.float64),
            labels=np.asarray(raw["labels"], dtype=np.int64),
            train_mask=np.asarray(raw["train_mask"], dtype=np.int64).astype(bool),
            test_mask=np.asarray(raw["test_mask"], dtype=np.int64).astype(bool),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed field ({exc})") from exc
    issues = validate_dataset(dataset)
    if issues:
        raise InputError(f"{path}: invalid dataset: " + "; ".join(issues))
    return dataset


def _reject_constant(name: str):
    raise InputError(f"non-finite constant {name!r} is not permitted")


def save_dataset(dataset: GraphDataset, path: str) -> None:
    """Write the portable JSON format atomically (write then rename)."""
    issues = validate_dataset(dataset)
    if issues:
        raise InputError("refusing to write invalid dataset: " + "; ".join(issues))
    doc = {
        "num_nodes": dataset.num_nodes,
        "num_features": dataset.num_features,
        "num_classes": dataset.num_classes,
        "edges": dataset.edges.tolist(),
        "features": dataset.features.tolist(),
        "labels": dataset.labels.tolist(),
        "train_mask": dataset.train_mask.astype(int).tolist(),
        "test_mask": dataset.test_mask.astype(int).tolist(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False, separators=(",", ":"))
    os.replace(tmp, path)
