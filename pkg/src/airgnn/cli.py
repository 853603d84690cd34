"""``airgnn`` command line: training, depth sweeps, smoothness, sparsity, stationarity, probes and benchmarks.

Every command writes CSV (to ``--out`` or stdout). The first lines are ``#``
comments carrying the command, the fully resolved JSON config and the dataset
content hash, so a file is enough to re-run its experiment.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace

from . import experiments as ex
from .data import load_dataset, parse_sbm_spec, row_normalize, synth_sbm
from .models import ARCHITECTURES, SKIPS, ModelConfig, split_dp, train

log = logging.getLogger(__name__)

TIMING_COLUMNS = ("elapsed_ms", "epoch_ms", "train_ms", "precompute_ms", "overhead")


class UsageError(ValueError):
    """Invalid flag combination, reported before any computation."""


@dataclass
class RunRecord:
    """Everything needed to reproduce one training run."""

    config: dict
    dataset: dict
    seed: int
    metrics: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# -- argument parsing -------------------------------------------------------


def _int_list(text: str) -> list[int]:
    """``"1,2,4"`` or ``"1:20"`` (inclusive) or ``"1:20:2"``."""
    text = text.strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use START:STOP[:STEP]")
        step = parts[2] if len(parts) == 3 else 1
        return list(range(parts[0], parts[1] + 1, step))
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from e


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from e


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _add_data_flags(p):
    p.add_argument("--dataset", metavar="PATH", help="dataset directory (citation or canonical format)")
    p.add_argument(
        "--format",
        default="sbm:n=300,c=3,pin=0.1,pout=0.01,d=16,s=1.0",
        help="citation | canonical | sbm:SPEC (default: a 300-node SBM)",
    )
    p.add_argument("--row-normalize", dest="row_normalize", action="store_true", default=True)
    p.add_argument("--no-row-normalize", dest="row_normalize", action="store_false")
    p.add_argument("--split-seed", type=int, default=0, help="seed of the citation split")


def _add_model_flags(p, arch="ptpt"):
    p.add_argument("--arch", default=arch, choices=ARCHITECTURES)
    p.add_argument("--air", action="store_true", help="enable adaptive initial residual")
    p.add_argument("--skip", default="none", choices=SKIPS + ("residual",))
    p.add_argument("--dp", type=int, default=2, help="number of propagation operations")
    p.add_argument("--dt", type=int, default=2, help="number of transformation operations")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r", type=float, default=0.5, help="normalization exponent of the adjacency")
    p.add_argument("--power", type=int, default=1, help="PTPT: propagations per layer")
    p.add_argument("--pt-split", action="store_true", help="PTPT with d_t=2: split d_p across the two layers")
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))


def _add_out(p):
    p.add_argument("--out", metavar="PATH", help="CSV destination (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and emit per-epoch metrics")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--record", metavar="PATH", help="also write the RunRecord as JSON")
    _add_out(p)

    p = sub.add_parser("sweep-depth", help="accuracy across a range of depths")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--axis", required=True, choices=("dp", "dt", "layers"))
    p.add_argument("--range", dest="depths", required=True, type=_int_list, help="e.g. 1:20 or 2,4,8,16")
    p.add_argument("--repeats", type=int, default=1, help="seeds seed..seed+repeats-1")
    _add_out(p)

    p = sub.add_parser("smoothness", help="GSL of A_hat^k X for k=0..k_max plus the stationary value")
    _add_data_flags(p)
    p.add_argument("--k-max", type=int, default=50)
    p.add_argument("--r", type=float, default=0.5)
    _add_out(p)

    p = sub.add_parser("stationary", help="max-norm distance of A_hat^k from its closed-form limit")
    _add_data_flags(p)
    p.add_argument("--k-max", type=int, default=256)
    p.add_argument("--r", type=float, default=0.5)
    _add_out(p)

    p = sub.add_parser("sparsity", help="accuracy under edge, label or feature sparsity")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--mode", required=True, choices=("edge", "label", "feature"))
    p.add_argument("--levels", required=True, type=_float_list, help="keep rates, or labels per class")
    p.add_argument("--methods", type=_str_list, default=["gcn", "gcn+air"], help="e.g. sgc,sgc+air,appnp,gcn,mlp")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--perturb-seed", type=int, default=0)
    _add_out(p)

    p = sub.add_parser("bench", help="training time of each method with and without AIR")
    _add_data_flags(p)
    _add_model_flags(p)
    p.set_defaults(dp=3, dt=3, hidden=256, format="sbm:n=5000,c=5,pin=0.01,pout=0.001,d=128")
    p.add_argument("--methods", type=_str_list, default=["sgc", "appnp", "gcn"])
    p.add_argument("--repeats", type=int, default=3, help="alternating base/AIR timing rounds")
    _add_out(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every architecture x AIR x skip")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", metavar="RULE", help="negative control: scale a backward rule (e.g. gated_mix, relu)")
    _add_out(p)

    p = sub.add_parser("degradation-probe", help="train/test accuracy of deep PTPT models")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--layers", type=_int_list, default=[2, 4, 8, 16])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--grad-out", metavar="PATH", help="write the first-layer gradient trajectory here")
    _add_out(p)
    return parser


# -- config resolution ------------------------------------------------------


def config_from_args(args) -> ModelConfig:
    pt_split = None
    if args.pt_split:
        if args.arch != "ptpt":
            raise UsageError("--pt-split applies to --arch ptpt only")
        pt_split = split_dp(args.dp)
    cfg = ModelConfig(
        architecture=args.arch,
        d_p=args.dp,
        d_t=args.dt,
        air=args.air,
        skip=args.skip,
        hidden=args.hidden,
        dropout=args.dropout,
        lr=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        seed=args.seed,
        r=args.r,
        adjacency_power=args.power,
        pt_split=pt_split,
        dtype=args.dtype,
    )
    try:
        return cfg.validate()
    except ValueError as e:
        raise UsageError(str(e).replace("pt_split", "--pt-split").replace("adjacency_power", "--power")) from e


def dataset_from_args(args):
    return load_dataset(args.dataset, args.format, row_norm=args.row_normalize, split_seed=args.split_seed)


def unsplit_dataset_from_args(args):
    """Dataset for commands that ignore labels and splits; SBMs skip split drawing."""
    if not args.format.startswith("sbm"):
        return dataset_from_args(args)
    p = parse_sbm_spec(args.format)
    ds = synth_sbm(p["n"], p["c"], p["pin"], p["pout"], p["d"], p["s"], p["seed"])
    features = row_normalize(ds.features) if args.row_normalize else ds.features
    return ds.with_(features=features, meta={**ds.meta, "row_normalized": args.row_normalize})


def _dataset_info(ds) -> dict:
    return {
        "name": ds.name,
        "hash": ds.content_hash(),
        "num_nodes": ds.num_nodes,
        "num_edges": ds.graph.num_edges,
        "row_normalized": bool(ds.meta.get("row_normalized", False)),
    }


# -- CSV output -------------------------------------------------------------


def render_csv(command: str, header: dict, rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# command: {command}\n")
    for key, value in header.items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def strip_timing(csv_text: str) -> list[list[str]]:
    """CSV body without comment lines and timing columns, for reproducibility checks."""
    lines = [ln for ln in csv_text.splitlines() if not ln.startswith("#")]
    table = list(csv.reader(lines))
    if not table:
        return []
    keep = [i for i, name in enumerate(table[0]) if name not in TIMING_COLUMNS]
    return [[row[i] for i in keep] for row in table]


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------


def run_train(cfg: ModelConfig, dataset) -> RunRecord:
    t0 = time.perf_counter()
    rep = train(cfg, dataset)
    total = (time.perf_counter() - t0) * 1e3
    return RunRecord(
        config=rep.config,
        dataset=_dataset_info(dataset),
        seed=cfg.seed,
        metrics=list(rep.metric_rows()),
        timings={"total_ms": total, "precompute_ms": rep.precompute_ms},
    )


def cmd_train(args) -> str:
    cfg = config_from_args(args)
    ds = dataset_from_args(args)
    record = run_train(cfg, ds)
    if args.record:
        with open(args.record, "w", encoding="utf-8") as fh:
            fh.write(record.to_json())
    best = max(record.metrics, key=lambda r: r["val_acc"], default=None)
    if best:
        log.info("best val %.4f at epoch %d (test %.4f)", best["val_acc"], best["epoch"], best["test_acc"])
    return render_csv("train", {"config": record.config, "dataset": record.dataset}, record.metrics)


def _seeds(args):
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    return list(range(args.seed, args.seed + args.repeats))


def cmd_sweep_depth(args) -> str:
    base = config_from_args(args)
    try:
        # reject inconsistent axis/architecture pairs before any training
        for d in args.depths:
            ex._depth_config(base, args.axis, d).validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    ds = dataset_from_args(args)
    rows = ex.sweep_depth(base, ds, args.axis, args.depths, _seeds(args))
    header = {"config": base.to_dict(), "axis": args.axis, "dataset": _dataset_info(ds)}
    return render_csv("sweep-depth", header, rows)


def cmd_smoothness(args) -> str:
    if args.k_max < 0:
        raise UsageError("--k-max must be >= 0")
    ds = unsplit_dataset_from_args(args)
    rows = ex.smoothness_study(ds, args.k_max, args.r)
    return render_csv("smoothness", {"config": {"k_max": args.k_max, "r": args.r}, "dataset": _dataset_info(ds)}, rows)


def cmd_stationary(args) -> str:
    if args.k_max < 1:
        raise UsageError("--k-max must be >= 1")
    ds = unsplit_dataset_from_args(args)
    rows = ex.stationary_study(ds.graph, args.k_max, args.r)
    return render_csv("stationary", {"config": {"k_max": args.k_max, "r": args.r}, "dataset": _dataset_info(ds)}, rows)


def cmd_sparsity(args) -> str:
    base = config_from_args(args)
    levels = args.levels
    if args.mode == "label":
        if any(v != int(v) or v < 1 for v in levels):
            raise UsageError("label-mode levels are labels per class (positive integers)")
        levels = [int(v) for v in levels]
    elif any(not 0 < v <= 1 for v in levels):
        raise UsageError("edge/feature levels are keep rates in (0, 1]")
    try:
        for m in args.methods:
            ex.method_config(m, base, base.d_p, base.d_t).validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    ds = dataset_from_args(args)
    rows = ex.sparsity_study(base, ds, args.mode, levels, args.methods, _seeds(args), args.perturb_seed)
    header = {"config": base.to_dict(), "mode": args.mode, "perturb_seed": args.perturb_seed, "dataset": _dataset_info(ds)}
    return render_csv("sparsity", header, rows)


def cmd_bench(args) -> str:
    base = config_from_args(args)
    try:
        for m in args.methods:
            ex.method_config(m + "+air", base, args.dp, args.dt).validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    ds = dataset_from_args(args)
    rows = ex.bench(base, ds, args.methods, args.dp, args.dt, args.repeats)
    return render_csv("bench", {"config": base.to_dict(), "dataset": _dataset_info(ds)}, rows)


def cmd_gradcheck(args) -> str:
    from .autodiff import BACKWARD_RULES

    if args.corrupt and args.corrupt not in BACKWARD_RULES:
        raise UsageError(f"--corrupt must name one of {sorted(BACKWARD_RULES)}")
    rows = ex.gradcheck_all(args.tolerance, args.seed, args.corrupt)
    header = {"config": {"tolerance": args.tolerance, "seed": args.seed, "corrupt": args.corrupt, "dtype": "float64"}}
    failed = [r for r in rows if not r["passed"]]
    args._failed = bool(failed)
    return render_csv("gradcheck", header, rows)


def cmd_degradation_probe(args) -> str:
    base = config_from_args(args)
    try:
        for L in args.layers:
            ex._depth_config(base, "layers", L).validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    ds = dataset_from_args(args)
    rows, grad_rows = ex.degradation_probe(base, ds, args.layers, _seeds(args), track_grad=bool(args.grad_out))
    header = {"config": base.to_dict(), "dataset": _dataset_info(ds)}
    if args.grad_out:
        _emit(render_csv("degradation-probe", header, grad_rows), args.grad_out)
    return render_csv("degradation-probe", header, rows)


COMMANDS = {
    "train": cmd_train,
    "sweep-depth": cmd_sweep_depth,
    "smoothness": cmd_smoothness,
    "stationary": cmd_stationary,
    "sparsity": cmd_sparsity,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "degradation-probe": cmd_degradation_probe,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        text = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"airgnn {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"airgnn {args.command}: error: {e}", file=sys.stderr)
        return 1
    except FloatingPointError as e:
        print(f"airgnn {args.command}: numeric failure: {e}", file=sys.stderr)
        return 3
    _emit(text, args.out)
    if getattr(args, "_failed", False):
        print(f"airgnn {args.command}: one or more checks failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
