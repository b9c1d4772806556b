"""Download and parse the canonical dataset distributions.

Two source families are supported:

* the pickled split files used by the classic citation benchmarks
  (``ind.<name>.x`` etc.), fetched per file and unpickled through an
  allowlist so only numpy/scipy payloads are accepted;
* the ``.npz`` bundles of the co-authorship / co-purchase graphs.

Parsing returns plain arrays: features, integer labels, an undirected
edge list, and (when the source defines one) the fixed train/test split.
"""

from __future__ import annotations

import io
import os
import pickle
from dataclasses import dataclass

import numpy as np
import requests
import scipy.sparse as sp


class SourceError(Exception):
    """Download or parse failure, with the source detail attached."""


PLANETOID_BASE = "https://raw.githubusercontent.com/kimiyoung/planetoid/master/data"
NPZ_BASE = "https://raw.githubusercontent.com/shchur/gnn-benchmark/master/data/npz"

PLANETOID_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")

NPZ_FILES = {
    "coauthorcs": "ms_academic_cs.npz",
    "amazonphoto": "amazon_electronics_photo.npz",
}


@dataclass
class ParsedGraph:
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray  # (m, 2) with u < v, deduplicated, no self-loops
    train_idx: np.ndarray | None
    test_idx: np.ndarray | None
    notes: list[str]


def default_cache_dir() -> str:
    return os.environ.get(
        "TSC_DATA_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "tsc-datasets")
    )


def fetch(url: str, cache_dir: str, timeout: float = 60.0) -> str:
    """Return a local path for ``url``, downloading into the cache if needed."""
    os.makedirs(cache_dir, exist_ok=True)
    local = os.path.join(cache_dir, url.rsplit("/", 1)[-1])
    if os.path.exists(local):
        return local
    try:
        response = requests.get(url, timeout=timeout)
        response.raise_for_status()
    except requests.RequestException as exc:
        raise SourceError(f"cannot download {url}: {exc}") from exc
    tmp = local + ".part"
    with open(tmp, "wb") as fh:
        fh.write(response.content)
    os.replace(tmp, local)
    return local


class _AllowlistUnpickler(pickle.Unpickler):
    """Unpickle only the numpy/scipy types the planetoid files contain."""

    _ALLOWED = {
        ("numpy", "ndarray"),
        ("numpy", "dtype"),
        ("numpy.core.multiarray", "_reconstruct"),
        ("numpy.core.multiarray", "scalar"),
        ("numpy._core.multiarray", "_reconstruct"),
        ("numpy._core.multiarray", "scalar"),
        ("scipy.sparse._csr", "csr_matrix"),
        ("scipy.sparse.csr", "csr_matrix"),
        ("scipy.sparse._lil", "lil_matrix"),
        ("scipy.sparse.lil", "lil_matrix"),
        ("collections", "defaultdict"),
        ("builtins", "list"),
        ("builtins", "dict"),
        ("builtins", "int"),
    }

    def find_class(self, module, name):
        if (module, name) in self._ALLOWED:
            return super().find_class(module, name)
        raise SourceError(f"refusing to unpickle {module}.{name}")


def _load_pickle(path: str):
    with open(path, "rb") as fh:
        return _AllowlistUnpickler(io.BytesIO(fh.read()), encoding="latin1").load()


def _dedup_edges(pairs: np.ndarray, n: int) -> np.ndarray:
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    keys = np.unique(lo.astype(np.int64) * n + hi)
    return np.stack([keys // n, keys % n], axis=1).astype(np.int64)


def parse_planetoid(name: str, cache_dir: str) -> ParsedGraph:
    """Reassemble a citation benchmark from its pickled split files."""
    notes: list[str] = []
    parts = {}
    for part in PLANETOID_PARTS:
        path = fetch(f"{PLANETOID_BASE}/ind.{name}.{part}", cache_dir)
        if part == "test.index":
            parts[part] = np.loadtxt(path, dtype=np.int64)
        else:
            parts[part] = _load_pickle(path)

    test_idx = parts["test.index"]
    test_sorted = np.sort(test_idx)
    x, tx, allx = parts["x"], parts["tx"], parts["allx"]
    y, ty, ally = parts["y"], parts["ty"], parts["ally"]

    full_range = np.arange(test_sorted.min(), test_sorted.max() + 1)
    if full_range.size != test_idx.size:
        # isolated test nodes are absent from the pickled block; pad with
        # zero feature rows and zero label rows (they join no split)
        notes.append(
            f"{full_range.size - test_idx.size} isolated test nodes padded with zero rows"
        )
        tx_ext = sp.lil_matrix((full_range.size, x.shape[1]), dtype=np.float64)
        tx_ext[test_sorted - test_sorted.min()] = tx
        tx = tx_ext.tocsr()
        ty_ext = np.zeros((full_range.size, y.shape[1]))
        ty_ext[test_sorted - test_sorted.min()] = ty
        ty = ty_ext

    features = sp.vstack([allx, tx]).tolil()
    features[test_idx] = features[test_sorted]
    features = np.asarray(features.todense(), dtype=np.float64)

    onehot = np.vstack([ally, ty])
    onehot[test_idx] = onehot[test_sorted]
    labels = onehot.argmax(axis=1).astype(np.int64)
    unlabeled = int((onehot.sum(axis=1) == 0).sum())
    if unlabeled:
        notes.append(f"{unlabeled} nodes carry no label and default to class 0")

    n = features.shape[0]
    graph = parts["graph"]
    pair_list = [(u, v) for u, neighbors in graph.items() for v in neighbors]
    pairs = np.array(pair_list, dtype=np.int64)
    if pairs.max() >= n or pairs.min() < 0:
        raise SourceError(f"{name}: adjacency references node outside [0, {n})")
    edges = _dedup_edges(pairs, n)

    train_idx = np.arange(y.shape[0], dtype=np.int64)
    return ParsedGraph(
        features=features,
        labels=labels,
        edges=edges,
        train_idx=train_idx,
        test_idx=test_sorted.astype(np.int64),
        notes=notes,
    )


def parse_npz(name: str, cache_dir: str) -> ParsedGraph:
    """Load one of the npz bundles (no canonical split)."""
    path = fetch(f"{NPZ_BASE}/{NPZ_FILES[name]}", cache_dir)
    with np.load(path, allow_pickle=False) as loader:
        data = dict(loader)
    try:
        adj = sp.csr_matrix(
            (data["adj_data"], data["adj_indices"], data["adj_indptr"]),
            shape=tuple(data["adj_shape"]),
        )
        features = sp.csr_matrix(
            (data["attr_data"], data["attr_indices"], data["attr_indptr"]),
            shape=tuple(data["attr_shape"]),
        )
        labels = np.asarray(data["labels"], dtype=np.int64)
    except KeyError as exc:
        raise SourceError(f"{name}: npz bundle misses field {exc}") from exc
    coo = adj.tocoo()
    edges = _dedup_edges(np.stack([coo.row, coo.col], axis=1), adj.shape[0])
    return ParsedGraph(
        features=np.asarray(features.todense(), dtype=np.float64),
        labels=labels,
        edges=edges,
        train_idx=None,
        test_idx=None,
        notes=["source adjacency symmetrized and deduplicated"],
    )
