"""Experiment drivers behind the CLI. Each returns a list of flat row dicts."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, make_split, perturb_edges, perturb_features, subsample_labels, synth_sbm
from .graph import gcn_adjacency, stationary_limit
from .models import ModelConfig, adjacency_for, build_model, predict_logits, split_dp, train
from .smoothness import graph_smoothness, gsl_trajectory

# representative model of each architecture family
METHOD_ARCH = {"sgc": "pptt", "appnp": "ttpp", "gcn": "ptpt", "mlp": "mlp"}


def method_config(method: str, base: ModelConfig, d_p: int, d_t: int) -> ModelConfig:
    """Config for a method name such as ``"gcn"`` or ``"sgc+air"``."""
    name, _, suffix = method.lower().partition("+")
    if name not in METHOD_ARCH or suffix not in ("", "air"):
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(METHOD_ARCH)} with optional '+air'")
    arch = METHOD_ARCH[name]
    if arch == "ptpt":
        d_p = d_t
    elif arch == "mlp":
        d_p = 0
    return replace(base, architecture=arch, d_p=d_p, d_t=d_t, air=suffix == "air", skip="none")


def summarize(rows, key, fields=("train_acc", "test_acc")):
    """Append mean and population-std rows per ``key`` value."""
    out = list(rows)
    for value in dict.fromkeys(r[key] for r in rows):
        group = [r for r in rows if r[key] == value]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            row = {k: "" for k in group[0]}
            row.update(kind=stat, **{key: value})
            for f in fields:
                row[f] = float(fn([r[f] for r in group]))
            out.append(row)
    return out


def _depth_config(base: ModelConfig, axis: str, depth: int) -> ModelConfig:
    if axis == "dp":
        if base.architecture == "ptpt":
            if base.d_t != 2:
                raise ValueError("a d_p sweep under PTPT needs the split variant with d_t == 2")
            return replace(base, d_p=depth, pt_split=split_dp(depth))
        return replace(base, d_p=depth)
    if axis == "dt":
        if base.architecture == "ptpt":
            raise ValueError("a d_t sweep is not defined for PTPT; use the layers axis")
        return replace(base, d_t=depth)
    if axis == "layers":
        if base.architecture not in ("ptpt", "mlp"):
            raise ValueError("the layers axis applies to PTPT (and MLP) only")
        d_p = 0 if base.architecture == "mlp" else depth * base.adjacency_power
        return replace(base, d_t=depth, d_p=d_p)
    raise ValueError(f"unknown sweep axis {axis!r}")


def sweep_depth(base: ModelConfig, dataset: Dataset, axis: str, depths, seeds) -> list[dict]:
    configs = [_depth_config(base, axis, d).validate() for d in depths]
    rows = []
    for depth, cfg in zip(depths, configs):
        for seed in seeds:
            rep = train(replace(cfg, seed=seed), dataset)
            rows.append(
                {
                    "kind": "run",
                    "depth": depth,
                    "seed": seed,
                    "train_acc": rep.best_train_acc,
                    "test_acc": rep.best_test_acc,
                    "final_train_acc": rep.train_acc[-1] if rep.epochs else rep.best_train_acc,
                }
            )
    return summarize(rows, "depth", ("train_acc", "test_acc", "final_train_acc"))


def smoothness_study(dataset: Dataset, k_max: int, r: float = 0.5) -> list[dict]:
    report = gsl_trajectory(dataset.graph, dataset.features, k_max, r)
    return list(report.rows())


def geometric_schedule(k_max: int) -> list[int]:
    ks, k = [], 1
    while k < k_max:
        ks.append(k)
        k *= 2
    return ks + [k_max]


def stationary_study(graph, k_max: int = 256, r: float = 0.5) -> list[dict]:
    """Max-norm distance between ``A_hat ** k`` and the closed-form limit."""
    if graph.num_nodes > 5000:
        raise ValueError("stationary study materializes dense N x N matrices; N must be <= 5000")
    limit = stationary_limit(graph, r)
    adj = gcn_adjacency(graph, r)
    rows, power, k = [], np.eye(graph.num_nodes), 0
    for target in geometric_schedule(k_max):
        while k < target:
            power = adj.matrix @ power
            k += 1
        rows.append({"k": k, "max_abs_diff": float(np.max(np.abs(power - limit)))})
    return rows


def perturb(dataset: Dataset, mode: str, level, seed: int) -> Dataset:
    if mode == "edge":
        return perturb_edges(dataset, float(level), seed)
    if mode == "feature":
        return perturb_features(dataset, float(level), seed)
    if mode == "label":
        return subsample_labels(dataset, int(level), seed)
    raise ValueError(f"unknown sparsity mode {mode!r}")


def sparsity_study(base: ModelConfig, dataset: Dataset, mode: str, levels, methods, seeds, perturb_seed=0):
    """Accuracy over a levels x methods x seeds grid.

    Every method sees the identical perturbed dataset at a given level; the
    ``dataset_hash`` column makes that checkable.
    """
    configs = {m: method_config(m, base, base.d_p, base.d_t).validate() for m in methods}
    rows = []
    for level in levels:
        ds = perturb(dataset, mode, level, perturb_seed)
        digest = ds.content_hash()
        for m, cfg in configs.items():
            for seed in seeds:
                rep = train(replace(cfg, seed=seed), ds)
                rows.append(
                    {
                        "mode": mode,
                        "level": level,
                        "method": m,
                        "seed": seed,
                        "dataset_hash": digest,
                        "test_acc": rep.best_test_acc,
                    }
                )
    return rows


def _median_epoch_ms(cfg, dataset):
    rep = train(cfg, dataset)
    return float(np.median(rep.epoch_ms)), float(np.sum(rep.epoch_ms)), rep.precompute_ms


def bench(base: ModelConfig, dataset: Dataset, methods=("sgc", "appnp", "gcn"), d_p=3, d_t=3, repeats=3):
    """Training-time comparison of each method with and without AIR.

    Base and AIR runs alternate ``repeats`` times; the reported per-epoch
    time is the smallest of the per-run medians, which damps scheduler noise.
    Dataset loading and PPTT precomputation are excluded from the epoch time.
    """
    rows = []
    for m in methods:
        plain = method_config(m, base, d_p, d_t).validate()
        air = replace(plain, air=True).validate()
        runs = {False: [], True: []}
        for _ in range(repeats):
            for flag, cfg in ((False, plain), (True, air)):
                runs[flag].append(_median_epoch_ms(cfg, dataset))
        best = {flag: min(r, key=lambda t: t[0]) for flag, r in runs.items()}
        base_ms = best[False][0]
        for flag in (False, True):
            epoch_ms, total_ms, pre_ms = best[flag]
            rows.append(
                {
                    "method": m + ("+air" if flag else ""),
                    "architecture": plain.architecture,
                    "epochs": base.epochs,
                    "epoch_ms": epoch_ms,
                    "train_ms": total_ms,
                    "precompute_ms": pre_ms,
                    "overhead": (epoch_ms - base_ms) / base_ms if flag else 0.0,
                }
            )
    return rows


def gradcheck_dataset(seed=0) -> Dataset:
    ds = synth_sbm(10, 2, 0.6, 0.2, 4, 1.0, seed=seed)
    return make_split(ds, 2, 2, 4, seed=seed)


def gradcheck_grid():
    for arch in ("pptt", "ttpp", "ptpt", "mlp"):
        for air in (False, True):
            for skip in ("none",) if air else ("none", "res", "dense"):
                yield arch, air, skip


def gradcheck_model(arch, air, skip, dataset, tolerance=1e-4, seed=0):
    d_p = 0 if arch == "mlp" else 3
    cfg = ModelConfig(
        architecture=arch, d_p=d_p, d_t=3, air=air, skip=skip, hidden=8, dropout=0.0,
        num_classes=dataset.class_count, dtype="float64", seed=seed,
    ).validate()
    model = build_model(cfg, dataset.num_features)
    rng = np.random.default_rng(seed + 100)
    for gate in model.gates.values():
        gate.u.data[...] = 0.5 * rng.standard_normal(gate.u.shape)
    for name, p in model.params.items():
        if name.startswith("b") or name == "proj_b":
            p.data[...] = 0.1 * rng.standard_normal(p.shape)
    adj = None if arch == "mlp" else adjacency_for(dataset.graph, cfg.r)
    x = ad.Tensor(dataset.features.astype(np.float64))

    def forward():
        return ad.masked_softmax_cross_entropy(model.forward(adj, x), dataset.labels, dataset.train_mask)

    return ad.gradient_check(forward, model.parameters(), tolerance, n_samples=100, seed=seed)


def gradcheck_all(tolerance=1e-4, seed=0, corrupt: str | None = None) -> list[dict]:
    dataset = gradcheck_dataset(seed)
    rows = []
    for arch, air, skip in gradcheck_grid():
        if corrupt:
            with ad.corrupted_backward(corrupt):
                rep = gradcheck_model(arch, air, skip, dataset, tolerance, seed)
        else:
            rep = gradcheck_model(arch, air, skip, dataset, tolerance, seed)
        rows.append(
            {
                "architecture": arch,
                "air": int(air),
                "skip": skip,
                "checked": rep.checked,
                "max_rel_error": rep.max_rel_error,
                "passed": int(rep.passed),
            }
        )
    return rows


def degradation_probe(base: ModelConfig, dataset: Dataset, layers, seeds, track_grad=False):
    """Train/test accuracy of PTPT (or MLP) models across layer counts.

    Returns ``(rows, grad_rows)``; ``grad_rows`` holds the per-epoch mean
    absolute first-layer gradient when ``track_grad`` is set.
    """
    rows, grad_rows = [], []
    for L in layers:
        cfg = _depth_config(replace(base, track_first_layer_grad=track_grad), "layers", L).validate()
        for seed in seeds:
            rep = train(replace(cfg, seed=seed), dataset)
            rows.append(
                {
                    "kind": "run",
                    "layers": L,
                    "seed": seed,
                    "train_acc": rep.best_train_acc,
                    "test_acc": rep.best_test_acc,
                    "final_train_acc": rep.train_acc[-1] if rep.epochs else rep.best_train_acc,
                }
            )
            if track_grad:
                grad_rows += [
                    {"layers": L, "seed": seed, "epoch": e + 1, "first_layer_grad": g}
                    for e, g in enumerate(rep.first_layer_grad)
                ]
    return summarize(rows, "layers", ("train_acc", "test_acc", "final_train_acc")), grad_rows


def gsl_vs_dt_probe(base: ModelConfig, dataset: Dataset, d_p: int, d_t_values, seeds) -> list[dict]:
    """GSL of trained PPTT output representations as d_t varies with d_p fixed."""
    rows = []
    for d_t in d_t_values:
        cfg = replace(base, architecture="pptt", d_p=d_p, d_t=d_t).validate()
        for seed in seeds:
            rep = train(replace(cfg, seed=seed), dataset)
            rows.append(
                {
                    "d_t": d_t,
                    "seed": seed,
                    "gsl": graph_smoothness(predict_logits(rep.model, dataset)),
                    "test_acc": rep.best_test_acc,
                }
            )
    return rows


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, (time.perf_counter() - t0) * 1e3
