import numpy as np
import pytest

from tsc.graph import GraphDataset, SparseMatrix, build_adjacency, normalize_sym


def random_connected_graph(n: int, rng: np.random.Generator, extra_edge_prob: float = 0.15):
    """Random connected graph: a random spanning tree plus extra edges."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        u = order[rng.integers(0, k)]
        v = order[k]
        edges.add((min(u, v), max(u, v)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra_edge_prob:
                edges.add((i, j))
    return np.array(sorted(edges), dtype=np.int64)


def dataset_from_edges(edges: np.ndarray, n: int, num_classes: int = 2, f: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    # every class in train at least once, test disjoint and non-empty
    labels[:num_classes] = np.arange(num_classes)
    train = np.zeros(n, dtype=bool)
    train[:num_classes] = True
    test = np.zeros(n, dtype=bool)
    test[num_classes:] = True
    return GraphDataset(
        num_nodes=n,
        num_features=f,
        num_classes=num_classes,
        edges=edges,
        features=rng.standard_normal((n, f)),
        labels=labels,
        train_mask=train,
        test_mask=test,
    )


@pytest.fixture
def path2():
    """Two nodes joined by one edge, with its normalized operator."""
    ds = dataset_from_edges(np.array([[0, 1]]), 2)
    adj = build_adjacency(ds)
    return ds, adj, normalize_sym(adj)


@pytest.fixture
def triangle():
    ds = dataset_from_edges(np.array([[0, 1], [0, 2], [1, 2]]), 3)
    adj = build_adjacency(ds)
    return ds, adj, normalize_sym(adj)


def dense_normalize(adj_dense: np.ndarray) -> np.ndarray:
    """Independent dense transcription of the normalization rule."""
    n = adj_dense.shape[0]
    aug = adj_dense + np.eye(n)
    deg = aug.sum(axis=1)
    inv = np.diag(1.0 / np.sqrt(deg))
    return inv @ aug @ inv


def to_sparse(dense: np.ndarray) -> SparseMatrix:
    rows, cols = np.nonzero(dense)
    return SparseMatrix.from_coo(rows, cols, dense[rows, cols], *dense.shape)
