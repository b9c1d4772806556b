"""Contrastive constraints over node representations.

The SGC variant treats the same node in two consecutive propagation
layers as a positive pair and every other node, in either layer, as a
negative.  The GCN variant applies the same criterion to two dropout
views of the final layer.  Both reduce to one kernel: given an anchor
matrix ``u`` and a partner matrix ``v``,

    loss = sum_i [ log sum_{j != i} (e^{s(u_i,u_j)/t} + e^{s(u_i,v_j)/t})
                   - s(u_i, v_i)/t ]

with ``s`` the cosine similarity and ``t`` the temperature.  Similarities
are computed on row-normalized copies; all-zero rows keep similarity 0
and receive a zero subgradient (they have no direction, and the exact
derivative there blows up like one over the norm guard).  Denominators
use a max-shifted log-sum-exp, so the evaluation stays finite for any
temperature down to well below 0.05.

On large graphs the denominator may instead be estimated from
``negative_cap`` uniform draws per anchor (with replacement, rescaled by
(n-1)/cap); the exact full-denominator mode remains the reference for
all correctness checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Value, add, dropout
from .errors import ConfigError, InputError

__all__ = [
    "ContrastiveConfig",
    "loss_sgc",
    "loss_gcn",
    "info_nce_pair",
    "decompose",
    "decompose_pair",
]


@dataclass(frozen=True)
class ContrastiveConfig:
    """Temperature, combination weight, and optional negative subsampling."""

    temperature: float = 0.5
    loss_weight: float = 1.0
    negative_cap: int | None = None

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.loss_weight < 0.0:
            raise ConfigError(f"loss weight must be non-negative, got {self.loss_weight}")
        if self.negative_cap is not None and self.negative_cap < 1:
            raise ConfigError("negative_cap must be at least 1 when set")


def _norms(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.sqrt((x * x).sum(axis=1))
    return n, np.where(n > 0.0, n, 1.0)


def _pair_state(ud: np.ndarray, vd: np.ndarray, tau: float):
    """Forward quantities for one pair, laid out for reuse in backward.

    Returns (u_hat, v_hat, e_uu, e_uv, denom, shift, positives) where the
    ``e`` blocks hold exp((s - shift)/tau) with a zero diagonal, and
    ``positives`` holds s(u_i, v_i)/tau.
    """
    n = ud.shape[0]
    nu, safe_nu = _norms(ud)
    nv, safe_nv = _norms(vd)
    u_hat = ud / safe_nu[:, None]
    v_hat = vd / safe_nv[:, None]
    inv_tau = 1.0 / tau

    z_uu = u_hat @ u_hat.T
    z_uu *= inv_tau
    np.fill_diagonal(z_uu, -np.inf)  # negatives exclude the anchor itself
    z_uv = u_hat @ v_hat.T
    z_uv *= inv_tau
    diag = np.arange(n)
    positives = z_uv[diag, diag].copy()
    z_uv[diag, diag] = -np.inf

    shift = np.maximum(z_uu.max(axis=1), z_uv.max(axis=1))
    z_uu -= shift[:, None]
    np.exp(z_uu, out=z_uu)  # e_uu, diagonal exp(-inf) = 0
    z_uv -= shift[:, None]
    np.exp(z_uv, out=z_uv)
    denom = z_uu.sum(axis=1) + z_uv.sum(axis=1)
    return u_hat, v_hat, z_uu, z_uv, denom, shift, positives


def _unnormalize_rows(d_hat, hat, norms, safe_norms):
    """Pull a gradient on x/||x|| back to x; zero rows get zero gradient."""
    proj = (d_hat * hat).sum(axis=1, keepdims=True)
    dx = (d_hat - proj * hat) / safe_norms[:, None]
    dx[norms == 0.0] = 0.0
    return dx


def info_nce_pair(
    u: Value,
    v: Value,
    temperature: float,
    negative_cap: int | None = None,
    seed_stream: np.random.Generator | None = None,
) -> Value:
    """Contrastive loss for one (anchor, partner) representation pair."""
    if u.shape != v.shape:
        raise InputError(f"pair shapes differ: {u.shape} vs {v.shape}")
    n = u.shape[0]
    if n < 2:
        raise InputError("contrastive loss needs at least two nodes (no negatives otherwise)")
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    if negative_cap is not None:
        if seed_stream is None:
            raise ConfigError("negative subsampling requires a seed stream")
        samples = seed_stream.integers(0, n - 1, size=(n, negative_cap))
        samples += samples >= np.arange(n)[:, None]  # skip the anchor index
        return _sampled_pair(u, v, temperature, samples)
    return _full_pair(u, v, temperature)


def _full_pair(u: Value, v: Value, tau: float) -> Value:
    saved = {}
    u_hat, v_hat, e_uu, e_uv, denom, shift, positives = _pair_state(u.data, v.data, tau)
    total = float((np.log(denom) + shift - positives).sum())
    out = Value(
        np.array([[total]]),
        requires_grad=u.requires_grad or v.requires_grad,
        parents=(u, v),
    )
    if out.requires_grad:
        saved.update(u_hat=u_hat, v_hat=v_hat, e_uu=e_uu, e_uv=e_uv, denom=denom)

    def backward(g):
        g0 = g[0, 0]
        u_hat = saved.pop("u_hat")
        v_hat = saved.pop("v_hat")
        g_uu = saved.pop("e_uu")
        g_uv = saved.pop("e_uv")
        denom = saved.pop("denom")
        n = u.shape[0]
        inv = g0 / (tau * denom)
        g_uu *= inv[:, None]  # softmax weights; the shift cancels
        g_uv *= inv[:, None]
        diag = np.arange(n)
        g_uv[diag, diag] = -g0 / tau  # the positive term
        nu, safe_nu = _norms(u.data)
        nv, safe_nv = _norms(v.data)
        if u.requires_grad:
            d_u_hat = g_uu @ u_hat
            d_u_hat += g_uu.T @ u_hat  # uu block: u appears on both sides
            d_u_hat += g_uv @ v_hat
            u.accumulate(_unnormalize_rows(d_u_hat, u_hat, nu, safe_nu))
        if v.requires_grad:
            d_v_hat = g_uv.T @ u_hat
            v.accumulate(_unnormalize_rows(d_v_hat, v_hat, nv, safe_nv))

    out._backward = backward
    return out


def _anchor_chunks(n: int, cap: int, width: int) -> list[slice]:
    # keep each (chunk, cap, width) gather buffer around 48 MB
    rows = max(1, int(48e6 / (cap * width * 8)))
    return [slice(start, min(start + rows, n)) for start in range(0, n, rows)]


def _sampled_pair(u: Value, v: Value, tau: float, samples: np.ndarray) -> Value:
    """Denominator estimated from per-anchor negative draws (with replacement)."""
    n, cap = samples.shape
    d = u.shape[1]
    chunks = _anchor_chunks(n, cap, d)

    def terms(ud, vd):
        nu, safe_nu = _norms(ud)
        nv, safe_nv = _norms(vd)
        u_hat = ud / safe_nu[:, None]
        v_hat = vd / safe_nv[:, None]
        z_uu = np.empty((n, cap))
        z_uv = np.empty((n, cap))
        for rows in chunks:
            sub = samples[rows]
            anchors = u_hat[rows]
            z_uu[rows] = np.einsum("cd,ckd->ck", anchors, u_hat[sub])
            z_uv[rows] = np.einsum("cd,ckd->ck", anchors, v_hat[sub])
        z_uu /= tau
        z_uv /= tau
        pos = (u_hat * v_hat).sum(axis=1) / tau
        shift = np.maximum(z_uu.max(axis=1), z_uv.max(axis=1))
        e_uu = np.exp(z_uu - shift[:, None])
        e_uv = np.exp(z_uv - shift[:, None])
        denom = (n - 1) / cap * (e_uu.sum(axis=1) + e_uv.sum(axis=1))
        return (nu, safe_nu, nv, safe_nv, u_hat, v_hat, pos, shift, e_uu, e_uv, denom)

    *_, pos, shift, _, _, denom = terms(u.data, v.data)
    total = float((np.log(denom) + shift - pos).sum())
    out = Value(
        np.array([[total]]),
        requires_grad=u.requires_grad or v.requires_grad,
        parents=(u, v),
    )

    def backward(g):
        g0 = g[0, 0]
        (nu, safe_nu, nv, safe_nv, u_hat, v_hat, pos, shift, e_uu, e_uv, denom) = terms(
            u.data, v.data
        )
        raw = e_uu.sum(axis=1) + e_uv.sum(axis=1)  # (n-1)/cap cancels in the softmax
        w_uu = g0 / tau * e_uu / raw[:, None]
        w_uv = g0 / tau * e_uv / raw[:, None]
        d_u_hat = np.zeros_like(u_hat)
        d_v_hat = np.zeros_like(v_hat)
        for rows in chunks:
            sub = samples[rows]
            anchors = u_hat[rows]
            d_u_hat[rows] += np.einsum("ck,ckd->cd", w_uu[rows], u_hat[sub])
            np.add.at(
                d_u_hat,
                sub.reshape(-1),
                (w_uu[rows, :, None] * anchors[:, None, :]).reshape(-1, d),
            )
            d_u_hat[rows] += np.einsum("ck,ckd->cd", w_uv[rows], v_hat[sub])
            np.add.at(
                d_v_hat,
                sub.reshape(-1),
                (w_uv[rows, :, None] * anchors[:, None, :]).reshape(-1, d),
            )
        # exact positive term -s(u_i, v_i)/tau
        d_u_hat += (-g0 / tau) * v_hat
        d_v_hat += (-g0 / tau) * u_hat
        if u.requires_grad:
            u.accumulate(_unnormalize_rows(d_u_hat, u_hat, nu, safe_nu))
        if v.requires_grad:
            v.accumulate(_unnormalize_rows(d_v_hat, v_hat, nv, safe_nv))

    out._backward = backward
    return out


def loss_sgc(
    layers,
    config: ContrastiveConfig,
    seed_stream: np.random.Generator | None = None,
) -> Value:
    """Sum of pair losses over consecutive layers (anchor = deeper layer)."""
    layers = list(layers)
    if len(layers) < 2:
        raise InputError("need at least two layer representations")
    shape = layers[0].shape
    for h in layers[1:]:
        if h.shape != shape:
            raise InputError("layer representations must share a shape")
    total = None
    for prev, nxt in zip(layers[:-1], layers[1:]):
        pair = info_nce_pair(
            nxt, prev, config.temperature, config.negative_cap, seed_stream
        )
        total = pair if total is None else add(total, pair)
    return total


def loss_gcn(
    h_final: Value,
    dropout_rate: float,
    config: ContrastiveConfig,
    seed_stream: np.random.Generator,
) -> Value:
    """Contrastive loss between two independent dropout views of one layer."""
    view_a = dropout(h_final, dropout_rate, training=True, seed_stream=seed_stream)
    view_b = dropout(h_final, dropout_rate, training=True, seed_stream=seed_stream)
    return info_nce_pair(
        view_a, view_b, config.temperature, config.negative_cap, seed_stream
    )


def decompose_pair(
    h_next: np.ndarray, h_prev: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Alignment and heterogeneity terms for every node of one layer pair.

    Alignment is the positive-pair similarity over the temperature;
    heterogeneity is the log-sum-exp over the negatives.  The per-node
    pair loss equals heterogeneity - alignment exactly.
    """
    h_next = np.asarray(h_next, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_next.shape != h_prev.shape:
        raise InputError("decompose needs matching shapes")
    *_, denom, shift, positives = _pair_state(h_next, h_prev, tau)
    align = positives
    heter = np.log(denom) + shift
    return align, heter


def decompose(
    h_next: np.ndarray, h_prev: np.ndarray, i: int, tau: float
) -> tuple[float, float]:
    """Alignment and heterogeneity of node ``i`` for one layer pair."""
    align, heter = decompose_pair(h_next, h_prev, tau)
    return float(align[i]), float(heter[i])
