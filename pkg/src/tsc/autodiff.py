"""Minimal dense reverse-mode differentiation on 64-bit matrices.

Every node holds a 2-D float64 array; scalars are 1x1.  Operations append
closures to a tape implied by parent links, and ``backward`` walks the
graph once in reverse topological order.  The primitive set is exactly
what the models need: linear algebra, ReLU, dropout, a classification
head, and cosine similarity.  All gradients are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, TrainingError
from .graph import SparseMatrix, spmm

__all__ = [
    "Value",
    "constant",
    "parameter",
    "matmul",
    "add",
    "hadamard",
    "scale",
    "sum_all",
    "spmm_const",
    "relu",
    "dropout",
    "log_softmax_rows",
    "nll_loss",
    "cosine_sim_matrix",
    "AdamState",
    "adam_step",
    "zero_grads",
    "grad_check",
    "EPS_NORM",
]

# Guards cosine normalization against all-zero rows (dropped or masked out).
EPS_NORM = 1e-12


class Value:
    """A tape node: dense matrix, its gradient, and the producing op."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = ()):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise InputError(f"Value must be a matrix, got ndim={arr.ndim}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise InputError("item() requires a 1x1 value")
        return float(self.data[0, 0])

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Seed a scalar root with 1 and accumulate into every ancestor.

        Each node is visited exactly once, in reverse topological order.
        """
        if self.data.shape != (1, 1):
            raise InputError("backward() starts from a scalar loss")
        topo: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate(np.ones((1, 1)))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def constant(data) -> Value:
    return Value(data, requires_grad=False)


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _binary_out(data: np.ndarray, a: Value, b: Value) -> Value:
    return Value(data, requires_grad=a.requires_grad or b.requires_grad, parents=(a, b))


def matmul(a: Value, b: Value) -> Value:
    if a.shape[1] != b.shape[0]:
        raise InputError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _binary_out(a.data @ b.data, a, b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = backward
    return out


def add(a: Value, b: Value) -> Value:
    """Elementwise sum; ``b`` may be a 1xC row vector broadcast over rows."""
    broadcast = b.shape != a.shape
    if broadcast and not (b.shape == (1, a.shape[1])):
        raise InputError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = _binary_out(a.data + b.data, a, b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0, keepdims=True) if broadcast else g)

    out._backward = backward
    return out


def hadamard(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise InputError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    out = _binary_out(a.data * b.data, a, b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    out._backward = backward
    return out


def scale(a: Value, c: float) -> Value:
    c = float(c)
    out = Value(a.data * c, requires_grad=a.requires_grad, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * c)

    out._backward = backward
    return out


def sum_all(a: Value) -> Value:
    out = Value(np.array([[a.data.sum()]]), requires_grad=a.requires_grad, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, g[0, 0]))

    out._backward = backward
    return out


def spmm_const(L: SparseMatrix, h: Value) -> Value:
    """Multiply by a fixed symmetric sparse operator; only ``h`` is trained."""
    if L.num_cols != h.shape[0]:
        raise InputError(f"spmm_const shape mismatch: {L.shape} @ {h.shape}")
    out = Value(spmm(L, h.data), requires_grad=h.requires_grad, parents=(h,))

    def backward(g):
        if h.requires_grad:
            h.accumulate(spmm(L, g))  # L is symmetric, so L^T g == L g

    out._backward = backward
    return out


def relu(x: Value) -> Value:
    keep = x.data > 0.0  # subgradient at exactly 0 is 0
    out = Value(np.where(keep, x.data, 0.0), requires_grad=x.requires_grad, parents=(x,))

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.where(keep, g, 0.0))

    out._backward = backward
    return out


def dropout(x: Value, rate: float, training: bool, seed_stream: np.random.Generator) -> Value:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time.

    Each call consumes fresh randomness from the stream, so two calls on
    the same value produce two independent views.
    """
    if not (0.0 <= rate < 1.0):
        raise InputError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = seed_stream.random(x.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    out = Value(
        np.where(keep, x.data * factor, 0.0), requires_grad=x.requires_grad, parents=(x,)
    )

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.where(keep, g * factor, 0.0))

    out._backward = backward
    return out


def log_softmax_rows(x: Value) -> Value:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Value(shifted - log_norm, requires_grad=x.requires_grad, parents=(x,))
    softmax = np.exp(out.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g - softmax * g.sum(axis=1, keepdims=True))

    out._backward = backward
    return out


def nll_loss(logp: Value, labels: np.ndarray, mask: np.ndarray) -> Value:
    """Mean negative log-likelihood over the masked rows."""
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        raise InputError("nll_loss needs at least one masked row")
    picked = labels[rows]
    if picked.min() < 0 or picked.max() >= logp.shape[1]:
        raise InputError("label out of range")
    loss = -logp.data[rows, picked].mean()
    out = Value(np.array([[loss]]), requires_grad=logp.requires_grad, parents=(logp,))

    def backward(g):
        if logp.requires_grad:
            dlogp = np.zeros_like(logp.data)
            dlogp[rows, picked] = -g[0, 0] / rows.size
            logp.accumulate(dlogp)

    out._backward = backward
    return out


def _row_norms(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((x * x).sum(axis=1))
    return norms, np.where(norms > 0.0, norms, 1.0)


def cosine_sim_matrix(a: Value, b: Value) -> Value:
    """All-pairs cosine similarity S[i, j] between rows of ``a`` and ``b``.

    Zero rows are handled by an epsilon in the norm product; their
    similarity to anything is 0.  A zero row has no direction, so its
    subgradient is taken as 0 (the exact derivative there scales like
    1/epsilon and would poison training).
    """
    if a.shape[1] != b.shape[1]:
        raise InputError(f"cosine_sim_matrix needs equal widths: {a.shape} vs {b.shape}")
    na, safe_na = _row_norms(a.data)
    nb, safe_nb = _row_norms(b.data)
    denom = np.outer(na, nb) + EPS_NORM
    sim = (a.data @ b.data.T) / denom
    out = _binary_out(sim, a, b)

    def backward(g):
        g_over_q = g / denom
        dq = -g_over_q * sim  # dL/dQ_ij = -g_ij * S_ij / Q_ij
        if a.requires_grad:
            da = g_over_q @ b.data
            da += ((dq * nb[None, :]).sum(axis=1) / safe_na)[:, None] * a.data
            da[na == 0.0] = 0.0
            a.accumulate(da)
        if b.requires_grad:
            db = g_over_q.T @ a.data
            db += ((dq * na[:, None]).sum(axis=0) / safe_nb)[:, None] * b.data
            db[nb == 0.0] = 0.0
            b.accumulate(db)

    out._backward = backward
    return out


@dataclass
class AdamState:
    """Optimizer state for a named parameter dictionary."""

    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    Weight decay is the classic variant, added straight to the gradient.
    Parameters with no accumulated gradient are treated as zero-gradient.
    """
    state.step_count += 1
    t = state.step_count
    correct1 = 1.0 - state.beta1**t
    correct2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {t}")
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * p.data
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correct1
        v_hat = v / correct2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.zero_grad()


def grad_check(loss_builder, params: dict, epsilon: float = 1e-5) -> float:
    """Max relative error between backward and central-difference gradients.

    ``loss_builder`` must rebuild the same scalar loss on every call
    (frozen randomness), reading parameter data live from ``params``.
    The error at each coordinate is |num - ana| / max(1, |num|, |ana|).
    """
    zero_grads(params)
    loss = loss_builder()
    if not isinstance(loss, Value):
        raise ConfigError("loss_builder must return a Value")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + epsilon
            f_plus = loss_builder().item()
            flat[idx] = original - epsilon
            f_minus = loss_builder().item()
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(numeric - ana[idx]) / max(1.0, abs(numeric), abs(ana[idx]))
            worst = max(worst, err)
    return worst
