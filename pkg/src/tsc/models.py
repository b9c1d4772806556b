"""Model assembly: SGC and GCN backbones with optional masking/contrast.

Both backbones expose every intermediate representation through a
:class:`ForwardTrace` so smoothness metrics and the layer contrastive
loss can consume them.  With masking and contrastive both disabled the
forwards reduce bit-exactly to plain SGC (with a learned input
projection) and plain GCN.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    Value,
    add,
    constant,
    dropout,
    log_softmax_rows,
    matmul,
    nll_loss,
    relu,
    scale,
    spmm_const,
)
from .contrastive import ContrastiveConfig, loss_gcn, loss_sgc
from .errors import ConfigError
from .graph import GraphDataset, SparseMatrix
from .masking import ColumnMask, MaskSchedule, masked_layer_gcn, masked_propagate, sample_mask

__all__ = [
    "ModelConfig",
    "ForwardTrace",
    "prepare_features",
    "init_params",
    "project_input",
    "sample_layer_masks",
    "forward_sgc_tsc",
    "forward_gcn_tsc",
    "forward_model",
    "total_loss",
    "save_params",
    "load_params",
]

BACKBONES = ("sgc", "gcn")


@dataclass
class ModelConfig:
    """Architecture and regularization knobs for one trainable model."""

    backbone: str = "sgc"
    use_masking: bool = True
    use_contrastive: bool = True
    depth: int = 2
    hidden_dim: int = 64
    input_dropout: float | None = None  # resolved: 0.0 for sgc, 0.5 for gcn
    view_dropout: float = 0.5
    lambda_: float = 0.5
    tau: float = 0.5
    beta: float = 1.0
    seed: int = 0
    proj_depth: int = 1
    row_normalize: bool = True
    resample_masks: str = "epoch"  # or "once"
    mask_at_eval: bool = True
    negative_cap: int | None = None

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.proj_depth < 1:
            raise ConfigError("proj_depth must be >= 1")
        for name in ("view_dropout",):
            p = getattr(self, name)
            if not (0.0 <= p < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.input_dropout is not None and not (0.0 <= self.input_dropout < 1.0):
            raise ConfigError("input_dropout must lie in [0, 1)")
        if self.lambda_ <= 0.0:
            raise ConfigError("lambda must be positive")
        if self.tau <= 0.0:
            raise ConfigError("tau must be positive")
        if self.beta < 0.0:
            raise ConfigError("beta must be non-negative")
        if self.resample_masks not in ("epoch", "once"):
            raise ConfigError("resample_masks must be 'epoch' or 'once'")

    @property
    def resolved_input_dropout(self) -> float:
        if self.input_dropout is not None:
            return self.input_dropout
        return 0.0 if self.backbone == "sgc" else 0.5

    def contrastive_config(self) -> ContrastiveConfig:
        return ContrastiveConfig(
            temperature=self.tau, loss_weight=self.beta, negative_cap=self.negative_cap
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardTrace:
    """Every layer representation H^(0..L) plus the classifier logits."""

    layers: list
    logits: Value

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    def layer_data(self) -> list[np.ndarray]:
        return [h.data for h in self.layers]


def prepare_features(dataset: GraphDataset, config: ModelConfig) -> np.ndarray:
    """Optional L1 row normalization of the input features."""
    X = dataset.features
    if not config.row_normalize:
        return X
    row_sums = np.abs(X).sum(axis=1)
    scale_vec = np.where(row_sums > 0.0, row_sums, 1.0)
    return X / scale_vec[:, None]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(
    config: ModelConfig,
    num_features: int,
    num_classes: int,
    rng: np.random.Generator,
) -> dict[str, Value]:
    """Seed-deterministic Glorot-uniform weights in a fixed order."""
    d = config.hidden_dim
    params: dict[str, Value] = {}
    if config.backbone == "sgc":
        fan_in = num_features
        for k in range(config.proj_depth):
            params[f"proj_{k}"] = Value(_glorot(rng, fan_in, d), requires_grad=True)
            fan_in = d
    else:
        params["conv_1"] = Value(_glorot(rng, num_features, d), requires_grad=True)
        for l in range(2, config.depth + 1):
            params[f"conv_{l}"] = Value(_glorot(rng, d, d), requires_grad=True)
    params["cls_w"] = Value(_glorot(rng, d, num_classes), requires_grad=True)
    params["cls_b"] = Value(np.zeros((1, num_classes)), requires_grad=True)
    return params


def project_input(X: Value, W_proj: Value) -> Value:
    """Dimension-reducing linear map H^(0) = X @ W_proj (bias-free)."""
    if X.shape[1] != W_proj.shape[0]:
        raise ConfigError(
            f"projection shape mismatch: features {X.shape} vs weight {W_proj.shape}"
        )
    return matmul(X, W_proj)


def sample_layer_masks(
    config: ModelConfig,
    seed_stream: np.random.Generator,
    enforce_update: bool = True,
) -> list[ColumnMask | None]:
    """One mask per layer; None where the schedule never freezes anything."""
    if not config.use_masking:
        return [None] * config.depth
    schedule = MaskSchedule.build(config.lambda_, config.depth)
    masks: list[ColumnMask | None] = []
    for layer in range(1, config.depth + 1):
        rate = schedule.rate(layer)
        if rate == 0.0:
            masks.append(None)
        else:
            masks.append(
                sample_mask(config.hidden_dim, rate, seed_stream, enforce_update)
            )
    return masks


def _projection_stack(X: Value, config: ModelConfig, params: dict) -> Value:
    h = project_input(X, params["proj_0"])
    for k in range(1, config.proj_depth):
        h = project_input(relu(h), params[f"proj_{k}"])
    return h


def forward_sgc_tsc(
    features: np.ndarray,
    L_mat: SparseMatrix,
    config: ModelConfig,
    params: dict,
    masks: list,
    seed_stream: np.random.Generator,
    training: bool,
) -> ForwardTrace:
    """Projected input followed by ``depth`` (optionally masked) propagations."""
    X = constant(features)
    X = dropout(X, config.resolved_input_dropout, training, seed_stream)
    h = _projection_stack(X, config, params)
    layers = [h]
    for layer in range(1, config.depth + 1):
        mask = masks[layer - 1]
        h = spmm_const(L_mat, h) if mask is None else masked_propagate(L_mat, h, mask)
        layers.append(h)
    logits = add(matmul(h, params["cls_w"]), params["cls_b"])
    return ForwardTrace(layers=layers, logits=logits)


def forward_gcn_tsc(
    features: np.ndarray,
    L_mat: SparseMatrix,
    config: ModelConfig,
    params: dict,
    masks: list,
    seed_stream: np.random.Generator,
    training: bool,
) -> ForwardTrace:
    """Stack of graph convolutions; frozen columns bypass layers 2..L."""
    X = constant(features)
    X = dropout(X, config.resolved_input_dropout, training, seed_stream)
    layers = [X]
    h = relu(matmul(spmm_const(L_mat, X), params["conv_1"]))  # layer 1 is never masked
    layers.append(h)
    for layer in range(2, config.depth + 1):
        W = params[f"conv_{layer}"]
        mask = masks[layer - 1]
        if mask is None:
            h = relu(matmul(spmm_const(L_mat, h), W))
        else:
            h = masked_layer_gcn(L_mat, h, W, mask)
        layers.append(h)
    logits = add(matmul(h, params["cls_w"]), params["cls_b"])
    return ForwardTrace(layers=layers, logits=logits)


def forward_model(
    features: np.ndarray,
    L_mat: SparseMatrix,
    config: ModelConfig,
    params: dict,
    masks: list,
    seed_stream: np.random.Generator,
    training: bool,
) -> ForwardTrace:
    forward = forward_sgc_tsc if config.backbone == "sgc" else forward_gcn_tsc
    return forward(features, L_mat, config, params, masks, seed_stream, training)


def total_loss(
    trace: ForwardTrace,
    dataset: GraphDataset,
    config: ModelConfig,
    seed_stream: np.random.Generator,
    training: bool = True,
) -> Value:
    """Cross-entropy over the train mask plus the weighted contrastive term."""
    ce = nll_loss(log_softmax_rows(trace.logits), dataset.labels, dataset.train_mask)
    if not (training and config.use_contrastive and config.beta > 0.0):
        return ce
    ccfg = config.contrastive_config()
    if config.backbone == "sgc":
        if trace.depth < 2:
            return ce  # a single propagation has no layer pair to contrast
        contrast = loss_sgc(trace.layers[1:], ccfg, seed_stream)
    else:
        contrast = loss_gcn(trace.layers[-1], config.view_dropout, ccfg, seed_stream)
    return add(ce, scale(contrast, config.beta))


def save_params(params: dict, path: str) -> None:
    """JSON shape manifest on the first line, then raw little-endian float64."""
    manifest = {
        "names": list(params.keys()),
        "shapes": [list(p.shape) for p in params.values()],
        "dtype": "<f8",
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_params(path: str) -> dict[str, Value]:
    with open(path, "rb") as fh:
        manifest = json.loads(fh.readline().decode("utf-8"))
        params: dict[str, Value] = {}
        for name, shape in zip(manifest["names"], manifest["shapes"]):
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            params[name] = Value(arr, requires_grad=True)
    return params
