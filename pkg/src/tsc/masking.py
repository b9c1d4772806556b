"""Column random masking: schedule, sampling, and masked propagation.

A frozen column skips the current layer's aggregation and carries the
previous layer's values forward unchanged.  The freeze probability is 0
for layers 1-2 and ``1 - ln(lambda/l + 1)`` (clamped to [0, 1]) from layer
3 on, so deeper layers freeze more and a smaller ``lambda`` freezes
faster.  Sampling normally forces at least one column to keep updating;
the analytic survival chain is stated for the idealized sampler with that
guarantee disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import Value, matmul, relu, spmm_const
from .errors import ConfigError, InputError
from .graph import SparseMatrix, spmm

__all__ = [
    "MaskSchedule",
    "ColumnMask",
    "schedule_rate",
    "sample_mask",
    "masked_propagate_sgc",
    "masked_propagate",
    "column_mix",
    "masked_layer_gcn",
    "SurvivalReport",
    "survival_probability",
]


def schedule_rate(lambda_: float, layer: int) -> float:
    """Freeze probability for a column entering ``layer``."""
    if lambda_ <= 0.0:
        raise ConfigError(f"lambda must be positive, got {lambda_}")
    if layer < 1:
        raise InputError(f"layer index must be >= 1, got {layer}")
    if layer <= 2:
        return 0.0
    return min(1.0, max(0.0, 1.0 - math.log(lambda_ / layer + 1.0)))


@dataclass(frozen=True)
class MaskSchedule:
    """Per-layer freeze probabilities for a fixed depth."""

    lambda_: float
    num_layers: int
    freeze_probs: np.ndarray  # length num_layers, freeze_probs[l-1] is layer l

    @classmethod
    def build(cls, lambda_: float, num_layers: int) -> "MaskSchedule":
        if num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        probs = np.array(
            [schedule_rate(lambda_, l) for l in range(1, num_layers + 1)], dtype=np.float64
        )
        return cls(lambda_=lambda_, num_layers=num_layers, freeze_probs=probs)

    def rate(self, layer: int) -> float:
        if not 1 <= layer <= self.num_layers:
            raise InputError(f"layer {layer} outside schedule of depth {self.num_layers}")
        return float(self.freeze_probs[layer - 1])


@dataclass(frozen=True)
class ColumnMask:
    """Keep flags per column; True means the column aggregates this layer."""

    keep: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "keep", np.asarray(self.keep, dtype=bool).reshape(-1))

    @property
    def num_columns(self) -> int:
        return int(self.keep.size)

    @property
    def all_keep(self) -> bool:
        return bool(self.keep.all())


def sample_mask(
    d: int,
    freeze_prob: float,
    seed_stream: np.random.Generator,
    enforce_update: bool = True,
) -> ColumnMask:
    """Freeze each column independently with probability ``freeze_prob``.

    With ``enforce_update`` (the default) an all-frozen draw is repaired by
    forcing one uniformly chosen column to keep aggregating, so the
    representation always changes somewhere.  Oracle tests disable the
    repair to match the idealized independence analysis.
    """
    if d < 1:
        raise InputError("mask needs at least one column")
    if not (0.0 <= freeze_prob <= 1.0):
        raise InputError(f"freeze probability must lie in [0, 1], got {freeze_prob}")
    keep = seed_stream.random(d) >= freeze_prob
    if enforce_update and not keep.any():
        keep[seed_stream.integers(0, d)] = True
    return ColumnMask(keep=keep)


def masked_propagate_sgc(
    L: SparseMatrix, h_prev: np.ndarray, mask: ColumnMask
) -> np.ndarray:
    """One propagation step where only the kept columns aggregate."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if mask.num_columns != h_prev.shape[1]:
        raise InputError(
            f"mask width {mask.num_columns} does not match matrix width {h_prev.shape[1]}"
        )
    if mask.all_keep:
        return spmm(L, h_prev)
    out = h_prev.copy()
    keep = mask.keep
    if keep.any():
        out[:, keep] = spmm(L, np.ascontiguousarray(h_prev[:, keep]))
    return out


def masked_propagate(L: SparseMatrix, h_prev: Value, mask: ColumnMask) -> Value:
    """Differentiable version of :func:`masked_propagate_sgc`.

    Kept columns receive the (symmetric) operator both forward and
    backward; frozen columns pass data and gradient straight through.
    """
    if mask.num_columns != h_prev.shape[1]:
        raise InputError("mask width does not match matrix width")
    if mask.all_keep:
        return spmm_const(L, h_prev)
    keep = mask.keep
    out = Value(
        masked_propagate_sgc(L, h_prev.data, mask),
        requires_grad=h_prev.requires_grad,
        parents=(h_prev,),
    )

    def backward(g):
        if h_prev.requires_grad:
            dh = g.copy()
            if keep.any():
                dh[:, keep] = spmm(L, np.ascontiguousarray(g[:, keep]))
            h_prev.accumulate(dh)

    out._backward = backward
    return out


def column_mix(aggregated: Value, previous: Value, mask: ColumnMask) -> Value:
    """Select kept columns from ``aggregated`` and frozen ones from ``previous``.

    Each output column equals exactly one branch, never a blend, and the
    gradient routes to whichever branch supplied it.
    """
    if aggregated.shape != previous.shape:
        raise InputError("column_mix operands must share a shape")
    if mask.num_columns != aggregated.shape[1]:
        raise InputError("mask width does not match matrix width")
    keep = mask.keep
    if mask.all_keep:
        return aggregated
    if not keep.any():
        return previous
    out = Value(
        np.where(keep[None, :], aggregated.data, previous.data),
        requires_grad=aggregated.requires_grad or previous.requires_grad,
        parents=(aggregated, previous),
    )

    def backward(g):
        if aggregated.requires_grad:
            aggregated.accumulate(np.where(keep[None, :], g, 0.0))
        if previous.requires_grad:
            previous.accumulate(np.where(keep[None, :], 0.0, g))

    out._backward = backward
    return out


def masked_layer_gcn(
    L: SparseMatrix, h_prev: Value, W: Value, mask: ColumnMask
) -> Value:
    """Graph-convolution layer whose frozen columns bypass the transform.

    Kept columns come from relu(L @ h_prev @ W); frozen columns copy
    ``h_prev`` untouched (no weight, no nonlinearity).  Gradients flow to
    ``h_prev`` through both branches.  ``W`` must be square so frozen
    columns stay shape-compatible.
    """
    if W.shape[0] != W.shape[1]:
        raise ConfigError(f"masked layers need a square weight, got {W.shape}")
    if not mask.keep.any():
        return h_prev  # all frozen: pure passthrough, identity gradient
    aggregated = relu(matmul(spmm_const(L, h_prev), W))
    return column_mix(aggregated, h_prev, mask)


class SurvivalReport(NamedTuple):
    """Exact freeze-chain probability and its analytic lower bound."""

    probability: float
    lower_bound: float


def survival_probability(
    schedule: MaskSchedule, final_layer: int, start_layer: int = 1
) -> SurvivalReport:
    """Probability that a column stays frozen through every sampled layer.

    ``probability`` is the exact product of the per-layer freeze rates
    from ``start_layer`` to ``final_layer`` for the idealized sampler
    (no forced-update repair).  With the default ``start_layer=1`` this is
    the chance a column at the final layer still carries its layer-1
    value, which is 0 for any depth because shallow layers never freeze;
    masking only becomes active at layer 3, so ``start_layer=3`` gives the
    probability a column rides untouched from layer 2 to the end.

    ``lower_bound`` evaluates exp(-lambda*ln(L) - gamma*pi^2*lambda^2/6)
    at gamma slightly above 1/2; it bounds the active-phase product from
    below on the supported lambda range.
    """
    if not 1 <= final_layer <= schedule.num_layers:
        raise InputError("final_layer outside the schedule")
    if not 1 <= start_layer <= final_layer:
        raise InputError("start_layer must lie in [1, final_layer]")
    product = float(np.prod(schedule.freeze_probs[start_layer - 1 : final_layer]))
    gamma = 0.5 + 1e-6
    bound = math.exp(
        -schedule.lambda_ * math.log(final_layer)
        - gamma * (math.pi**2 / 6.0) * schedule.lambda_**2
    )
    return SurvivalReport(probability=product, lower_bound=bound)
