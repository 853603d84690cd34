import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from airgnn.cli import main, strip_timing
from airgnn.data import Dataset, load_dataset, save_canonical
from airgnn.models import ModelConfig, train

from conftest import triangle

SBM = "sbm:n=120,c=3,pin=0.15,pout=0.01,d=8,s=1.0,train=5"


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    return list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))


def header(text):
    return {
        ln[2:].split(":", 1)[0]: ln.split(":", 1)[1].strip()
        for ln in text.splitlines()
        if ln.startswith("# ")
    }


def test_train_csv_contract(capsys):
    code, out, _ = run(["train", "--format", SBM, "--epochs", "6"], capsys)
    assert code == 0
    rows = table(out)
    assert len(rows) == 6
    assert list(rows[0]) == ["epoch", "loss", "train_acc", "val_acc", "test_acc", "elapsed_ms"]
    h = header(out)
    cfg = json.loads(h["config"])
    assert cfg["epochs"] == 6 and cfg["architecture"] == "ptpt" and cfg["hidden"] == 64
    assert len(json.loads(h["dataset"])["hash"]) == 64


def test_default_epochs_is_500():
    p = __import__("airgnn.cli", fromlist=["build_parser"]).build_parser()
    assert p.parse_args(["train"]).epochs == 500


def test_train_matches_library(capsys):
    code, out, _ = run(["train", "--format", SBM, "--epochs", "5", "--seed", "3"], capsys)
    ds = load_dataset(None, SBM)
    rep = train(ModelConfig(epochs=5, seed=3), ds)
    assert [float(r["test_acc"]) for r in table(out)] == rep.test_acc


def test_ptpt_depth_mismatch_rejected_before_loading(capsys):
    code, out, err = run(["train", "--format", "citation", "--dataset", "/nonexistent", "--dp", "3", "--dt", "2"], capsys)
    assert code == 2 and out == ""
    assert "PTPT requires d_p == d_t" in err and "--power" in err


@pytest.mark.parametrize(
    "args, msg",
    [
        (["--arch", "mlp", "--dp", "1"], "d_p must be 0"),
        (["--air", "--skip", "res"], "mutually exclusive"),
        (["--arch", "pptt", "--pt-split"], "ptpt only"),
        (["--power", "2", "--dp", "3", "--dt", "2"], "2 \\* d_t"),
    ],
)
def test_invalid_combinations(args, msg, capsys):
    code, _, err = run(["train", "--format", SBM] + args, capsys)
    assert code == 2
    assert __import__("re").search(msg, err)


def test_power_and_split_accepted(capsys):
    assert run(["train", "--format", SBM, "--epochs", "2", "--dp", "4", "--dt", "2", "--power", "2"], capsys)[0] == 0
    assert run(["train", "--format", SBM, "--epochs", "2", "--dp", "5", "--dt", "2", "--pt-split"], capsys)[0] == 0


def test_lr_zero_flat_metrics(capsys):
    _, out, _ = run(["train", "--format", SBM, "--epochs", "5", "--lr", "0"], capsys)
    rows = table(out)
    for col in ("loss", "train_acc", "val_acc", "test_acc"):
        assert len({r[col] for r in rows}) == 1


def test_train_record_and_out_file(tmp_path, capsys):
    out, rec = tmp_path / "m.csv", tmp_path / "r.json"
    code, stdout, _ = run(["train", "--format", SBM, "--epochs", "3", "--out", str(out), "--record", str(rec)], capsys)
    assert code == 0 and stdout == ""
    record = json.loads(rec.read_text())
    assert record["seed"] == 0 and len(record["metrics"]) == 3
    assert record["dataset"]["hash"] == load_dataset(None, SBM).content_hash()
    assert record["config"]["weight_decay"] == 5e-4
    assert out.read_text().startswith("# command: train\n")


@pytest.mark.parametrize(
    "args",
    [
        ["train", "--epochs", "4", "--air", "--arch", "pptt", "--dp", "3", "--dt", "2"],
        ["sweep-depth", "--axis", "layers", "--range", "2,3", "--epochs", "3", "--repeats", "2"],
        ["sparsity", "--mode", "edge", "--levels", "0.5,1", "--methods", "gcn,sgc+air", "--epochs", "3"],
        ["degradation-probe", "--layers", "2,3", "--epochs", "3"],
        ["smoothness", "--k-max", "3"],
    ],
)
def test_rerun_reproduces_csv_body(args, capsys):
    a = run(args + ["--format", SBM], capsys)[1]
    b = run(args + ["--format", SBM], capsys)[1]
    assert strip_timing(a) == strip_timing(b) and len(strip_timing(a)) > 1


def test_sweep_length_one_equals_train(capsys):
    _, out, _ = run(["sweep-depth", "--format", SBM, "--axis", "layers", "--range", "2", "--epochs", "5"], capsys)
    rows = table(out)
    run_row = next(r for r in rows if r["kind"] == "run")
    rep = train(ModelConfig(epochs=5), load_dataset(None, SBM))
    assert float(run_row["test_acc"]) == rep.best_test_acc
    assert {r["kind"] for r in rows} == {"run", "mean", "std"}


def test_sweep_axis_checks(capsys):
    code, _, err = run(["sweep-depth", "--format", SBM, "--axis", "dt", "--range", "1:3"], capsys)
    assert code == 2 and "layers" in err
    code, _, err = run(["sweep-depth", "--format", SBM, "--arch", "pptt", "--axis", "layers", "--range", "1:3"], capsys)
    assert code == 2
    code, out, _ = run(
        ["sweep-depth", "--format", SBM, "--arch", "pptt", "--dt", "2", "--axis", "dp", "--range", "1:3", "--epochs", "2"],
        capsys,
    )
    assert code == 0 and [r["depth"] for r in table(out) if r["kind"] == "run"] == ["1", "2", "3"]


def test_sparsity_shares_perturbations(capsys):
    args = ["sparsity", "--format", SBM, "--mode", "feature", "--levels", "0.5", "--epochs", "3"]
    _, out, _ = run(args + ["--methods", "gcn,gcn+air,appnp,mlp"], capsys)
    rows = table(out)
    assert len({r["dataset_hash"] for r in rows}) == 1 and len(rows) == 4


def test_sparsity_full_level_is_unperturbed(capsys):
    _, out, _ = run(["sparsity", "--format", SBM, "--mode", "edge", "--levels", "1.0", "--methods", "gcn", "--epochs", "5"], capsys)
    row = table(out)[0]
    ds = load_dataset(None, SBM)
    assert row["dataset_hash"] == ds.content_hash()
    assert float(row["test_acc"]) == train(ModelConfig(epochs=5), ds).best_test_acc


def test_sparsity_label_levels(capsys):
    code, out, _ = run(["sparsity", "--format", SBM, "--mode", "label", "--levels", "1,2", "--methods", "mlp", "--epochs", "2"], capsys)
    assert code == 0 and [r["level"] for r in table(out)] == ["1", "2"]
    code, _, err = run(["sparsity", "--format", SBM, "--mode", "label", "--levels", "0.5"], capsys)
    assert code == 2


def test_gradcheck_command(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    rows = table(out)
    assert code == 0 and len(rows) == 16
    assert all(r["passed"] == "1" and float(r["max_rel_error"]) <= 1e-4 for r in rows)
    code, out, err = run(["gradcheck", "--corrupt", "gated_mix"], capsys)
    assert code == 1 and "failed" in err
    assert any(r["passed"] == "0" for r in table(out))
    assert run(["gradcheck", "--corrupt", "nope"], capsys)[0] == 2


def test_stationary_command(capsys):
    code, out, _ = run(["stationary", "--format", "sbm:n=30,c=2,pin=0.4,pout=0.1,d=2", "--k-max", "200"], capsys)
    rows = table(out)
    assert code == 0 and rows[-1]["k"] == "200"
    assert float(rows[-1]["max_abs_diff"]) <= 1e-6
    ks = [int(r["k"]) for r in rows]
    assert ks == sorted(ks)


def test_smoothness_triangle(tmp_path, capsys):
    g = triangle()
    n = 3
    ds = Dataset(g, np.eye(3), np.array([0, 1, 2]), *(np.zeros(n, bool),) * 3, class_count=3)
    save_canonical(ds, tmp_path)
    code, out, _ = run(["smoothness", "--format", "canonical", "--dataset", str(tmp_path), "--k-max", "2", "--no-row-normalize"], capsys)
    rows = table(out)
    assert code == 0
    assert float(rows[0]["gsl"]) == 0.0
    assert abs(float(rows[1]["gsl"]) - 1.0) <= 1e-12


def test_degradation_probe_grad_out(tmp_path, capsys):
    g = tmp_path / "g.csv"
    code, out, _ = run(["degradation-probe", "--format", SBM, "--layers", "2,3", "--epochs", "3", "--grad-out", str(g)], capsys)
    assert code == 0
    grads = table(g.read_text())
    assert len(grads) == 6 and all(float(r["first_layer_grad"]) >= 0 for r in grads)
    assert {"train_acc", "test_acc"} <= set(table(out)[0])


def test_bench_columns(capsys):
    code, out, _ = run(
        ["bench", "--format", SBM, "--epochs", "3", "--hidden", "8", "--methods", "sgc,gcn", "--repeats", "1"], capsys
    )
    rows = table(out)
    assert code == 0 and [r["method"] for r in rows] == ["sgc", "sgc+air", "gcn", "gcn+air"]
    assert float(rows[0]["overhead"]) == 0.0
    base, air = float(rows[0]["epoch_ms"]), float(rows[1]["epoch_ms"])
    assert float(rows[1]["overhead"]) == pytest.approx((air - base) / base)
    assert float(rows[0]["precompute_ms"]) > 0


def test_missing_dataset_is_nonzero(capsys):
    code, _, err = run(["train", "--format", "canonical", "--dataset", "/nonexistent"], capsys)
    assert code == 1 and "missing" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "airgnn", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep-depth" in res.stdout
