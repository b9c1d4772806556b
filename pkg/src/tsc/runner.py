"""Experiment harness: configs, the training loop, sweeps, persistence.

A run is fully determined by its config and seed: weights, masks, dropout,
and synthetic data all draw from labeled streams derived from the seed, so
identical runs produce byte-identical reports (wall-clock time aside).
Reports and tables are written atomically (write to a temp file, then
rename) so an interrupted run never leaves a half-written JSON behind.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import AdamState, adam_step, zero_grads
from .errors import ConfigError, InputError, TrainingError
from .graph import (
    GraphDataset,
    build_adjacency,
    generate_sbm,
    load_dataset,
    normalize_sym,
)
from .metrics import MetricReport, accuracy, amo, andcnn, mad
from .models import (
    ForwardTrace,
    ModelConfig,
    forward_model,
    init_params,
    prepare_features,
    sample_layer_masks,
    save_params,
    total_loss,
)
from .rng import labeled_stream

__all__ = [
    "SyntheticSpec",
    "RunConfig",
    "RunReport",
    "run_single",
    "run_depth_sweep",
    "run_param_sweep",
    "dump_embeddings",
    "VARIANTS",
]

# How a variant name maps onto (backbone, use_masking, use_contrastive).
VARIANTS = {
    "sgc": ("sgc", False, False),
    "gcn": ("gcn", False, False),
    "sgc+tsc": ("sgc", True, True),
    "gcn+tsc": ("gcn", True, True),
}

EXACT_NEGATIVES_LIMIT = 5000  # above this, full contrastive denominators need force_exact
DEFAULT_NEGATIVE_CAP = 512


@dataclass
class SyntheticSpec:
    """Parameters handed to the stochastic-block-model generator."""

    blocks: int = 2
    nodes_per_block: int = 50
    p_in: float = 0.2
    p_out: float = 0.02
    feature_dim: int = 16
    noise_std: float = 0.5


@dataclass
class RunConfig:
    """Everything needed to reproduce a run or sweep."""

    model: ModelConfig = field(default_factory=ModelConfig)
    dataset_path: str | None = None
    synthetic: SyntheticSpec | None = None
    epochs: int = 200
    eval_every: int = 1
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    depths: list[int] | None = None
    lambdas: list[float] | None = None
    taus: list[float] | None = None
    betas: list[float] | None = None
    variants: list[str] | None = None
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    metric_orders: list[int] = field(default_factory=lambda: [1, 2, 3])
    output_dir: str = "runs"
    force_exact: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        for name in ("depths", "lambdas", "taus", "betas", "variants"):
            axis = getattr(self, name)
            if axis is not None and len(axis) == 0:
                raise ConfigError(f"sweep axis {name} must be non-empty when present")
        if self.variants:
            unknown = [v for v in self.variants if v not in VARIANTS]
            if unknown:
                raise ConfigError(f"unknown variants {unknown}; pick from {sorted(VARIANTS)}")
        if self.dataset_path is None and self.synthetic is None:
            raise ConfigError("config needs a dataset_path or a synthetic spec")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        model = ModelConfig(**raw.pop("model", {}))
        synthetic = raw.pop("synthetic", None)
        if synthetic is not None:
            synthetic = SyntheticSpec(**synthetic)
        return cls(model=model, synthetic=synthetic, **raw)

    @classmethod
    def from_json_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        return out


@dataclass
class RunReport:
    """Append-only record of one (config, seed) training run."""

    config: dict
    seed: int
    train_losses: list[float]
    eval_epochs: list[int]
    test_accuracies: list[float]
    best_accuracy: float
    final_metrics: dict
    diverged: bool
    wall_clock_seconds: float
    embedding_files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "train_losses": self.train_losses,
            "eval_epochs": self.eval_epochs,
            "test_accuracies": self.test_accuracies,
            "best_accuracy": self.best_accuracy,
            "final_metrics": self.final_metrics,
            "diverged": self.diverged,
            "wall_clock_seconds": self.wall_clock_seconds,
            "embedding_files": self.embedding_files,
        }


def write_json_atomic(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_or_generate(config: RunConfig) -> GraphDataset:
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path)
    spec = config.synthetic
    return generate_sbm(
        blocks=spec.blocks,
        nodes_per_block=spec.nodes_per_block,
        p_in=spec.p_in,
        p_out=spec.p_out,
        feature_dim=spec.feature_dim,
        seed=config.model.seed,
        noise_std=spec.noise_std,
    )


def _resolve_contrastive_scale(config: RunConfig, model: ModelConfig, n: int) -> ModelConfig:
    """Guard exact n^2 denominators on large graphs unless forced."""
    if not model.use_contrastive or n <= EXACT_NEGATIVES_LIMIT or config.force_exact:
        return model
    if model.negative_cap is not None:
        return model
    capped = ModelConfig(**{**model.to_dict(), "negative_cap": DEFAULT_NEGATIVE_CAP})
    return capped


def _eval_accuracy(
    features, L_mat, model, params, dataset, eval_mask_stream
) -> tuple[float, ForwardTrace]:
    masks = (
        sample_layer_masks(model, eval_mask_stream)
        if model.mask_at_eval
        else [None] * model.depth
    )
    trace = forward_model(features, L_mat, model, params, masks, eval_mask_stream, False)
    return accuracy(trace.logits.data, dataset.labels, dataset.test_mask), trace


def run_single(
    config: RunConfig,
    seed: int,
    dataset: GraphDataset | None = None,
    report_path: str | None = None,
    checkpoint_path: str | None = None,
    stop_when_best_reaches: float | None = None,
) -> RunReport:
    """Train one model and report losses, accuracy, and smoothness.

    ``stop_when_best_reaches`` optionally ends training once the best test
    accuracy clears a threshold; the best-so-far value is non-decreasing in
    the epoch budget, so any threshold reached early also holds for the
    full budget.
    """
    start = time.perf_counter()
    if dataset is None:
        dataset = load_or_generate(config)
    model = _resolve_contrastive_scale(config, config.model, dataset.num_nodes)

    adjacency = build_adjacency(dataset)
    L_mat = normalize_sym(adjacency)
    features = prepare_features(dataset, model)

    init_stream = labeled_stream(seed, "init")
    mask_stream = labeled_stream(seed, "masks")
    dropout_stream = labeled_stream(seed, "dropout")
    eval_mask_stream = labeled_stream(seed, "eval-masks")

    params = init_params(model, dataset.num_features, dataset.num_classes, init_stream)
    state = AdamState.for_params(
        params,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )

    fixed_masks = None
    if model.resample_masks == "once":
        fixed_masks = sample_layer_masks(model, mask_stream)

    train_losses: list[float] = []
    eval_epochs: list[int] = []
    test_accuracies: list[float] = []
    best_accuracy = 0.0
    diverged = False

    for epoch in range(1, config.epochs + 1):
        masks = fixed_masks if fixed_masks is not None else sample_layer_masks(model, mask_stream)
        zero_grads(params)
        trace = forward_model(features, L_mat, model, params, masks, dropout_stream, True)
        loss = total_loss(trace, dataset, model, dropout_stream, training=True)
        loss_value = loss.item()
        train_losses.append(loss_value)
        if not np.isfinite(loss_value):
            diverged = True
            break
        loss.backward()
        try:
            adam_step(params, state)
        except TrainingError:
            diverged = True
            break
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            acc, _ = _eval_accuracy(
                features, L_mat, model, params, dataset, eval_mask_stream
            )
            eval_epochs.append(epoch)
            test_accuracies.append(acc)
            best_accuracy = max(best_accuracy, acc)
            if stop_when_best_reaches is not None and best_accuracy >= stop_when_best_reaches:
                break

    final_acc, final_trace = _eval_accuracy(
        features, L_mat, model, params, dataset, eval_mask_stream
    )
    metrics = MetricReport(
        accuracy=final_acc,
        mad_per_layer=[mad(h) for h in final_trace.layer_data()],
        amo_per_order=[amo(adjacency, k) for k in config.metric_orders],
        andcnn_per_order=[
            andcnn(adjacency, dataset.labels, k) for k in config.metric_orders
        ],
    )
    report = RunReport(
        config={**config.to_dict(), "model": model.to_dict()},
        seed=seed,
        train_losses=train_losses,
        eval_epochs=eval_epochs,
        test_accuracies=test_accuracies,
        best_accuracy=best_accuracy,
        final_metrics=metrics.to_dict(),
        diverged=diverged,
        wall_clock_seconds=time.perf_counter() - start,
    )
    report._trace = final_trace  # kept for embedding dumps, not serialized
    if checkpoint_path is not None:
        os.makedirs(os.path.dirname(checkpoint_path) or ".", exist_ok=True)
        save_params(params, checkpoint_path)
    if report_path is not None:
        os.makedirs(os.path.dirname(report_path) or ".", exist_ok=True)
        write_json_atomic(report_path, report.to_dict())
    return report


def _variant_model(base: ModelConfig, variant: str, depth: int | None = None) -> ModelConfig:
    backbone, use_masking, use_contrastive = VARIANTS[variant]
    overrides = {
        "backbone": backbone,
        "use_masking": use_masking,
        "use_contrastive": use_contrastive,
    }
    if depth is not None:
        overrides["depth"] = depth
    return ModelConfig(**{**base.to_dict(), **overrides})


def _sub_config(config: RunConfig, model: ModelConfig) -> RunConfig:
    """A copy of ``config`` carrying ``model`` and no variant expansion."""
    raw = config.to_dict()
    raw.pop("model")
    raw.pop("synthetic")
    raw["variants"] = None
    return RunConfig(model=model, synthetic=config.synthetic, **raw)


def run_depth_sweep(config: RunConfig, depths: list[int]) -> list[RunReport]:
    """One run per (variant, depth, seed); emits a model-by-depth CSV."""
    if sorted(depths) != list(depths):
        raise InputError("depths must be sorted ascending")
    os.makedirs(config.output_dir, exist_ok=True)
    variants = config.variants or [_implied_variant(config.model)]
    dataset = load_or_generate(config)
    reports: list[RunReport] = []
    table: dict[str, dict[int, str]] = {}
    for variant in variants:
        table[variant] = {}
        for depth in depths:
            cell_accs = []
            for seed in config.seeds:
                sub = _sub_config(config, _variant_model(config.model, variant, depth))
                path = os.path.join(
                    config.output_dir, f"report_{variant.replace('+', '_')}_d{depth}_s{seed}.json"
                )
                try:
                    report = run_single(sub, seed, dataset=dataset, report_path=path)
                    reports.append(report)
                    cell_accs.append(report.best_accuracy)
                except Exception as exc:  # keep sweeping, record the failure
                    table[variant][depth] = f"error:{type(exc).__name__}"
                    break
            else:
                table[variant][depth] = f"{float(np.mean(cell_accs)):.4f}"
    csv_path = os.path.join(config.output_dir, "sweep.csv")
    _write_sweep_csv(csv_path, table, depths)
    return reports


def _implied_variant(model: ModelConfig) -> str:
    suffix = "+tsc" if (model.use_masking or model.use_contrastive) else ""
    return model.backbone + suffix


def _write_sweep_csv(path: str, table: dict, depths: list[int]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + [f"depth_{d}" for d in depths])
        for variant, cells in table.items():
            writer.writerow([variant] + [cells.get(d, "") for d in depths])
    os.replace(tmp, path)


def run_param_sweep(config: RunConfig, axis: str, values: list) -> str:
    """Accuracy and smoothness versus depth for each value of one knob."""
    if axis not in ("lambda", "tau", "beta"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ConfigError("sweep values must be non-empty")
    os.makedirs(config.output_dir, exist_ok=True)
    field_name = {"lambda": "lambda_", "tau": "tau", "beta": "beta"}[axis]
    depths = config.depths or [config.model.depth]
    dataset = load_or_generate(config)
    rows = []
    for value in values:
        for depth in depths:
            accs, mads = [], []
            for seed in config.seeds:
                model = ModelConfig(
                    **{**config.model.to_dict(), field_name: value, "depth": depth}
                )
                report = run_single(_sub_config(config, model), seed, dataset=dataset)
                accs.append(report.best_accuracy)
                mads.append(report.final_metrics["mad_per_layer"][-1])
            rows.append(
                [value, depth, f"{float(np.mean(accs)):.4f}", f"{float(np.mean(mads)):.4f}"]
            )
    csv_path = os.path.join(config.output_dir, "sweep.csv")
    tmp = csv_path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis, "depth", "mean_best_acc", "mean_final_mad"])
        writer.writerows(rows)
    os.replace(tmp, csv_path)
    return csv_path


def dump_embeddings(
    trace: ForwardTrace, labels: np.ndarray, layer: int, path: str
) -> str:
    """Write one layer's representations as CSV with a trailing label column."""
    if not 0 <= layer < len(trace.layers):
        raise InputError(f"layer {layer} outside trace of depth {trace.depth}")
    H = trace.layers[layer].data
    labels = np.asarray(labels, dtype=np.int64)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"e{k}" for k in range(H.shape[1])] + ["label"])
        for row, label in zip(H, labels):
            writer.writerow([f"{x:.17g}" for x in row] + [int(label)])
    os.replace(tmp, path)
    return path
