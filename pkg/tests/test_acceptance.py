"""Acceptance gate: every criterion below prints one [PASS]/[FAIL] line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
complete.  The two training criteria share one set of depth-32 runs; the
rescue-side runs use a sound early stop (best-so-far test accuracy is
non-decreasing in the epoch budget, so a bar cleared early is also
cleared at the full budget).  When a Cora export is available at
``data/cora.json`` (or ``$TSC_CORA_PATH``) the training criteria use it;
otherwise they fall back to a 7-block synthetic graph in the same
density band.
"""

import math
import os
import time

import numpy as np
import pytest

from tsc.autodiff import (
    Value,
    add,
    constant,
    cosine_sim_matrix,
    dropout,
    grad_check,
    hadamard,
    log_softmax_rows,
    matmul,
    nll_loss,
    relu,
    scale,
    spmm_const,
    sum_all,
)
from tsc.contrastive import ContrastiveConfig, decompose_pair, info_nce_pair, loss_gcn, loss_sgc
from tsc.graph import (
    build_adjacency,
    degree_vector,
    generate_sbm,
    limit_matrix,
    load_dataset,
    normalize_sym,
    spmm,
)
from tsc.masking import (
    ColumnMask,
    MaskSchedule,
    masked_propagate_sgc,
    sample_mask,
    schedule_rate,
    survival_probability,
)
from tsc.metrics import amo, andcnn
from tsc.models import (
    ModelConfig,
    forward_model,
    init_params,
    prepare_features,
    sample_layer_masks,
    total_loss,
)
from tsc.rng import labeled_stream
from tsc.runner import RunConfig, SyntheticSpec, run_single

from conftest import dataset_from_edges, random_connected_graph
from test_contrastive import loop_pair_loss, loop_sgc_loss
from test_metrics import dense_reach

CORA_PATH = os.environ.get(
    "TSC_CORA_PATH",
    os.path.join(os.path.dirname(__file__), os.pardir, "data", "cora.json"),
)

CORA_LIKE_SBM = SyntheticSpec(
    blocks=7, nodes_per_block=386, p_in=0.008, p_out=0.0003, feature_dim=50
)


def report(number: int, ok: bool, detail: str, started: float) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {number}: {detail} ({time.perf_counter() - started:.1f}s)")


def training_graph():
    if os.path.exists(CORA_PATH):
        return load_dataset(CORA_PATH), "cora export"
    spec = CORA_LIKE_SBM
    ds = generate_sbm(
        spec.blocks, spec.nodes_per_block, spec.p_in, spec.p_out, spec.feature_dim, seed=2024
    )
    return ds, "7-block synthetic graph"


def test_criterion_1_gradient_correctness():
    """Every primitive and both full losses match central differences."""
    started = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}

    a = Value(rng.standard_normal((4, 3)), requires_grad=True)
    b = Value(rng.standard_normal((3, 2)), requires_grad=True)
    w42 = constant(rng.standard_normal((4, 2)))
    worst["matmul"] = grad_check(
        lambda: sum_all(hadamard(matmul(a, b), w42)), {"a": a, "b": b}
    )

    x = Value(rng.standard_normal((4, 3)), requires_grad=True)
    bias = Value(rng.standard_normal((1, 3)), requires_grad=True)
    worst["add"] = grad_check(lambda: sum_all(add(x, bias)), {"x": x, "b": bias})

    h1 = Value(rng.standard_normal((4, 3)), requires_grad=True)
    h2 = Value(rng.standard_normal((4, 3)), requires_grad=True)
    worst["hadamard+scale"] = grad_check(
        lambda: scale(sum_all(hadamard(h1, h2)), 1.7), {"a": h1, "b": h2}
    )

    edges = random_connected_graph(5, rng)
    L5 = normalize_sym(build_adjacency(dataset_from_edges(edges, 5)))
    hs = Value(rng.standard_normal((5, 3)), requires_grad=True)
    w53 = constant(rng.standard_normal((5, 3)))
    worst["spmm_const"] = grad_check(
        lambda: sum_all(hadamard(spmm_const(L5, hs), w53)), {"h": hs}
    )

    xr_data = rng.standard_normal((4, 4))
    xr_data[np.abs(xr_data) < 1e-3] += 0.1
    xr = Value(xr_data, requires_grad=True)
    w44 = constant(rng.standard_normal((4, 4)))
    worst["relu"] = grad_check(lambda: sum_all(hadamard(relu(xr), w44)), {"x": xr})

    xd = Value(rng.standard_normal((4, 4)), requires_grad=True)
    worst["dropout"] = grad_check(
        lambda: sum_all(dropout(xd, 0.4, True, np.random.default_rng(5))), {"x": xd}
    )

    xl = Value(rng.standard_normal((6, 4)), requires_grad=True)
    labels = rng.integers(0, 4, 6)
    mask = np.ones(6, dtype=bool)
    worst["log_softmax+nll"] = grad_check(
        lambda: nll_loss(log_softmax_rows(xl), labels, mask), {"x": xl}
    )

    ca = Value(rng.standard_normal((3, 5)), requires_grad=True)
    cb = Value(rng.standard_normal((3, 5)), requires_grad=True)
    w33 = constant(rng.standard_normal((3, 3)))
    worst["cosine"] = grad_check(
        lambda: sum_all(hadamard(cosine_sim_matrix(ca, cb), w33)), {"a": ca, "b": cb}
    )

    ds = generate_sbm(2, 3, 1.0, 0.2, feature_dim=5, seed=11)
    L = normalize_sym(build_adjacency(ds))
    for backbone in ("sgc", "gcn"):
        config = ModelConfig(
            backbone=backbone, depth=4, hidden_dim=4, seed=3,
            input_dropout=0.3, view_dropout=0.4,
        )
        params = init_params(config, ds.num_features, ds.num_classes, labeled_stream(3, "init"))
        X = prepare_features(ds, config)
        masks = sample_layer_masks(config, labeled_stream(3, "masks"))

        def build():
            stream = labeled_stream(99, "dropout")
            trace = forward_model(X, L, config, params, masks, stream, True)
            return total_loss(trace, ds, config, stream, True)

        worst[f"{backbone}+tsc full loss"] = grad_check(build, params, epsilon=1e-5)

    elapsed = time.perf_counter() - started
    peak = max(worst.values())
    ok = peak < 1e-4 and elapsed < 10.0
    report(1, ok, f"max relative gradient error {peak:.2e} over {len(worst)} checks", started)
    assert peak < 1e-4, worst
    assert elapsed < 10.0


def test_criterion_2_propagation_limit_oracle():
    """Iterated propagation converges to sqrt((d_i+1)(d_j+1)) / (2m+n)."""
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_gap = 0.0
    for trial in range(20):
        n = int(rng.integers(5, 31))
        edges = random_connected_graph(n, rng)
        ds = dataset_from_edges(edges, n)
        adj = build_adjacency(ds)
        L = normalize_sym(adj)
        target = limit_matrix(degree_vector(adj), ds.num_edges)
        out = np.eye(n)
        for _ in range(4000):
            nxt = spmm(L, out)
            if np.abs(nxt - out).max() < 1e-12:
                out = nxt
                break
            out = nxt
        worst_gap = max(worst_gap, np.abs(out - target).max())
    elapsed = time.perf_counter() - started
    ok = worst_gap < 1e-6 and elapsed < 5.0
    report(2, ok, f"20 connected graphs, worst entrywise gap {worst_gap:.2e}", started)
    assert worst_gap < 1e-6
    assert elapsed < 5.0


def test_criterion_3_survival_chain_oracle():
    """Monte-Carlo trajectories match the freeze-rate product; the analytic
    lower bound stays below the exact masked-phase product on the grid."""
    started = time.perf_counter()
    schedule = MaskSchedule.build(0.5, 8)
    rng = labeled_stream(0, "masks")
    columns, rounds = 512, 20
    survived = 0
    for _ in range(rounds):
        frozen = np.ones(columns, dtype=bool)
        for layer in range(1, 9):
            mask = sample_mask(columns, schedule.rate(layer), rng, enforce_update=False)
            if layer >= 3:
                frozen &= ~mask.keep
        survived += int(frozen.sum())
    total = columns * rounds
    expected = survival_probability(schedule, 8, start_layer=3).probability
    p_hat = survived / total
    sigma = math.sqrt(expected * (1 - expected) / total)
    mc_ok = abs(p_hat - expected) <= 3 * sigma

    bound_ok = True
    for lam in (0.1, 0.5, 1.0):
        for depth in (4, 8, 16, 32):
            rep = survival_probability(MaskSchedule.build(lam, depth), depth, start_layer=3)
            bound_ok &= rep.lower_bound <= rep.probability + 1e-12

    elapsed = time.perf_counter() - started
    ok = mc_ok and bound_ok and elapsed < 10.0
    report(
        3,
        ok,
        f"empirical {p_hat:.4f} vs product {expected:.4f} (3sd={3*sigma:.4f}); bound grid ok={bound_ok}",
        started,
    )
    assert mc_ok and bound_ok
    assert elapsed < 10.0


def test_criterion_4_decomposition_identity():
    """Pair loss equals the summed heterogeneity-minus-alignment terms."""
    started = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 12))
        d = int(rng.integers(1, 8))
        tau = float(rng.uniform(0.1, 1.5))
        nxt = rng.standard_normal((n, d))
        prev = rng.standard_normal((n, d))
        align, heter = decompose_pair(nxt, prev, tau)
        pair = info_nce_pair(Value(nxt), Value(prev), tau).item()
        worst = max(worst, abs((heter - align).sum() - pair))
    elapsed = time.perf_counter() - started
    ok = worst < 1e-9 and elapsed < 5.0
    report(4, ok, f"100 random instances, worst identity gap {worst:.2e}", started)
    assert worst < 1e-9
    assert elapsed < 5.0


def test_criterion_5_brute_force_equivalences():
    """Masked propagation, both losses, and the neighborhood metrics agree
    with literal dense/loop transcriptions."""
    started = time.perf_counter()
    rng = np.random.default_rng(5)

    worst_mask = 0.0
    for _ in range(30):
        n = int(rng.integers(3, 12))
        edges = random_connected_graph(n, rng)
        L = normalize_sym(build_adjacency(dataset_from_edges(edges, n)))
        h = rng.standard_normal((n, int(rng.integers(1, 9))))
        keep = rng.random(h.shape[1]) < 0.5
        M = np.tile(keep.astype(float), (n, 1))
        dense = (L.to_dense() @ h) * M + h * (1.0 - M)
        got = masked_propagate_sgc(L, h, ColumnMask(keep=keep))
        worst_mask = max(worst_mask, np.abs(got - dense).max())

    worst_sgc = 0.0
    for _ in range(5):
        layers = [rng.standard_normal((6, 4)) for _ in range(3)]
        impl = loss_sgc([Value(h) for h in layers], ContrastiveConfig(temperature=0.5)).item()
        worst_sgc = max(worst_sgc, abs(impl - loop_sgc_loss(layers, 0.5)))

    worst_gcn = 0.0
    for trial in range(5):
        h = Value(rng.standard_normal((6, 4)))
        rate, tau = 0.3, 0.5
        impl = loss_gcn(
            h, rate, ContrastiveConfig(temperature=tau), np.random.default_rng(trial)
        ).item()
        replay = np.random.default_rng(trial)
        keep_a = replay.random(h.shape) >= rate
        keep_b = replay.random(h.shape) >= rate
        view_a = np.where(keep_a, h.data / (1 - rate), 0.0)
        view_b = np.where(keep_b, h.data / (1 - rate), 0.0)
        worst_gcn = max(worst_gcn, abs(impl - loop_pair_loss(view_a, view_b, tau)))

    metrics_exact = True
    for n in (10, 30):
        edges = random_connected_graph(n, rng)
        adj = build_adjacency(dataset_from_edges(edges, n))
        labels = rng.integers(0, 3, n)
        for order in range(1, 7):
            S = dense_reach(adj.to_dense(), order, augment=True)
            metrics_exact &= amo(adj, order) == pytest.approx((S @ S.T).mean())
            expected = sum(
                1.0
                for i in range(n)
                for j in range(n)
                if i != j and S[i, j] == 1.0 and labels[i] != labels[j]
            ) / n
            metrics_exact &= andcnn(adj, labels, order) == pytest.approx(expected)

    elapsed = time.perf_counter() - started
    ok = (
        worst_mask < 1e-10
        and worst_sgc < 1e-10
        and worst_gcn < 1e-10
        and metrics_exact
        and elapsed < 30.0
    )
    report(
        5,
        ok,
        f"masking {worst_mask:.1e}, sgc loss {worst_sgc:.1e}, gcn loss {worst_gcn:.1e}, metrics exact={metrics_exact}",
        started,
    )
    assert ok


@pytest.fixture(scope="module")
def collapse_and_rescue_runs():
    """Depth-32 runs shared by criteria 6 and 8: vanilla GCN trained for the
    full budget, the constrained variant early-stopped once it clears the
    rescue bar (sound: best accuracy is non-decreasing in epochs)."""
    started = time.perf_counter()
    dataset, source = training_graph()
    seeds = [0, 1, 2]
    results = {"gcn": [], "tsc": [], "source": source, "seconds": 0.0}
    base = dict(
        synthetic=CORA_LIKE_SBM,
        epochs=200,
        eval_every=5,
        seeds=seeds,
        metric_orders=[1],
        output_dir="/tmp/tsc-acceptance",
    )
    for seed in seeds:
        gcn_model = ModelConfig(
            backbone="gcn", use_masking=False, use_contrastive=False,
            depth=32, hidden_dim=64, seed=seed,
        )
        gcn_report = run_single(RunConfig(model=gcn_model, **base), seed, dataset=dataset)
        results["gcn"].append(gcn_report)

        tsc_model = ModelConfig(
            backbone="gcn", use_masking=True, use_contrastive=True,
            depth=32, hidden_dim=64, seed=seed,
        )
        bar = gcn_report.best_accuracy + 0.30 + 0.005
        tsc_report = run_single(
            RunConfig(model=tsc_model, **base), seed, dataset=dataset,
            stop_when_best_reaches=bar,
        )
        results["tsc"].append(tsc_report)
    results["seconds"] = time.perf_counter() - started
    return results


def test_criterion_6_collapse_and_rescue(collapse_and_rescue_runs):
    """Vanilla GCN at depth 32 collapses; the constrained variant recovers."""
    started = time.perf_counter()
    runs = collapse_and_rescue_runs
    gcn_best = float(np.mean([r.best_accuracy for r in runs["gcn"]]))
    tsc_best = float(np.mean([r.best_accuracy for r in runs["tsc"]]))
    elapsed = runs["seconds"]
    ok = gcn_best <= 0.45 and tsc_best >= gcn_best + 0.30 and elapsed < 900.0
    report(
        6,
        ok,
        f"{runs['source']}: GCN@32 {gcn_best:.3f} (<=0.45), GCN+TSC@32 {tsc_best:.3f} "
        f"(gap {tsc_best - gcn_best:+.3f} >= 0.30), training {elapsed:.0f}s",
        started,
    )
    assert gcn_best <= 0.45
    assert tsc_best >= gcn_best + 0.30
    assert elapsed < 900.0


def test_criterion_7_shallow_accuracy_band():
    """The constrained SGC reaches the accuracy band at shallow depths."""
    started = time.perf_counter()
    dataset, source = training_graph()
    results = {}
    for depth in (2, 4, 8):
        model = ModelConfig(
            backbone="sgc", use_masking=True, use_contrastive=True,
            depth=depth, hidden_dim=64, seed=0,
        )
        config = RunConfig(
            model=model, synthetic=CORA_LIKE_SBM, epochs=200, eval_every=2,
            seeds=[0], metric_orders=[1], output_dir="/tmp/tsc-acceptance",
        )
        rep = run_single(config, 0, dataset=dataset, stop_when_best_reaches=0.75)
        results[depth] = rep.best_accuracy
    elapsed = time.perf_counter() - started
    ok = all(acc >= 0.75 for acc in results.values()) and elapsed < 600.0
    detail = ", ".join(f"depth {d}: {acc:.3f}" for d, acc in results.items())
    report(7, ok, f"{source}: {detail} (band >= 0.75)", started)
    assert all(acc >= 0.75 for acc in results.values()), results
    assert elapsed < 600.0


def test_criterion_8_mad_separation(collapse_and_rescue_runs):
    """At depth 32 the constrained model keeps representations apart."""
    started = time.perf_counter()
    runs = collapse_and_rescue_runs
    gcn_mad = float(np.mean([r.final_metrics["mad_per_layer"][-1] for r in runs["gcn"]]))
    tsc_mad = float(np.mean([r.final_metrics["mad_per_layer"][-1] for r in runs["tsc"]]))
    ok = gcn_mad < 0.1 and tsc_mad >= 2.0 * gcn_mad
    report(
        8,
        ok,
        f"final-layer MAD: GCN {gcn_mad:.4f} (<0.1), GCN+TSC {tsc_mad:.4f} "
        f"(ratio {tsc_mad / max(gcn_mad, 1e-12):.1f}x >= 2x)",
        started,
    )
    assert gcn_mad < 0.1
    assert tsc_mad >= 2.0 * gcn_mad


def test_criterion_9_schedule_sanity():
    """Zero branch below layer 3; monotone in depth and in the knob."""
    started = time.perf_counter()
    lambdas = np.linspace(0.05, 2.0, 20)
    layers = np.arange(1, 21)
    zero_branch = all(
        schedule_rate(lam, layer) == 0.0 for lam in lambdas for layer in (1, 2)
    )
    grid = np.array([[schedule_rate(lam, l) for l in layers] for lam in lambdas])
    monotone_depth = bool(np.all(np.diff(grid, axis=1) >= -1e-15))
    monotone_lambda = bool(np.all(np.diff(grid, axis=0) <= 1e-15))
    elapsed = time.perf_counter() - started
    ok = zero_branch and monotone_depth and monotone_lambda and elapsed < 1.0
    report(
        9,
        ok,
        f"zero branch={zero_branch}, monotone in depth={monotone_depth}, "
        f"monotone in lambda={monotone_lambda} on a 20x20 grid",
        started,
    )
    assert ok
