import json
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from napmon.cli import cli
from napmon.dumps import read_dump
from napmon.persist import load_monitor, load_store

SPEC_DOC = {
    "classes": 4,
    "layers": [
        {"name": "c", "kind": "conv", "shape": [10, 3, 3]},
        {"name": "d", "kind": "dense", "shape": [20]},
    ],
    "id_noise_scale": 0.25,
    "ood_shift_scale": 1.5,
    "train_count": 120,
    "valid_count": 40,
    "test_count": 40,
    "seed": 5,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    (root / "spec.json").write_text(json.dumps(SPEC_DOC))
    runner = CliRunner()
    res = runner.invoke(
        cli, ["synth", "--spec", str(root / "spec.json"), "--out", str(root / "data")]
    )
    assert res.exit_code == 0, res.output
    res = runner.invoke(
        cli,
        [
            "calibrate",
            "--train", str(root / "data" / "ds"),
            "--valid", str(root / "data" / "dv"),
            "--k", "2",
            "--scheme", "1",
            "--criterion", "hybrid",
            "--p-grid", "30,60,90",
            "--id-eval-out", str(root / "ideval"),
            "--out", str(root / "monitor"),
            "--seed", "3",
        ],
    )
    assert res.exit_code == 0, res.output
    return root


def test_synth_writes_triplet(workdir):
    for sub in ("ds", "dv", "dt"):
        dump = read_dump(workdir / "data" / sub)
        assert dump.layer_names == ["c", "d"]
    assert read_dump(workdir / "data" / "ds").sample_count == 120


def test_calibrate_outputs(workdir):
    bundle = load_monitor(workdir / "monitor")
    assert bundle.config.k == 2
    assert 0 <= bundle.meta["val_accuracy"] <= 1
    ideval = read_dump(workdir / "ideval")
    assert ideval.sample_count == 24  # 20% of 120
    # stores were fitted on the remaining 80%
    for store in bundle.stores.values():
        assert store.total_count == 96


def test_extract_command(workdir, tmp_path):
    out = tmp_path / "c.naps"
    res = CliRunner().invoke(
        cli,
        [
            "extract",
            "--dump", str(workdir / "data" / "ds"),
            "--layer", "c",
            "--p", "60",
            "--pool", "max",
            "--mode", "per-pattern",
            "--out", str(out),
        ],
    )
    assert res.exit_code == 0, res.output
    store = load_store(out, "c")
    assert store.bit_len == 10
    assert store.total_count == 120


def test_evaluate_command_writes_report_and_figures(workdir, tmp_path):
    report = tmp_path / "rep" / "report.txt"
    res = CliRunner().invoke(
        cli,
        [
            "evaluate",
            "--monitor", str(workdir / "monitor"),
            "--test", str(workdir / "data" / "dt"),
            "--id-eval", str(workdir / "ideval"),
            "--report", str(report),
        ],
    )
    assert res.exit_code == 0, res.output
    text = report.read_text()
    assert "test_accuracy=" in text
    assert "test_auroc=" in text
    records = report.with_suffix(".records.csv")
    lines = records.read_text().strip().splitlines()
    assert lines[0] == "index,label,score,verdict"
    assert len(lines) > 1
    for name in ("report_scores.png", "report_roc.png"):
        assert (report.parent / name).exists()


def test_evaluate_no_figures(workdir, tmp_path):
    report = tmp_path / "rep2" / "report.txt"
    res = CliRunner().invoke(
        cli,
        [
            "evaluate",
            "--monitor", str(workdir / "monitor"),
            "--test", str(workdir / "data" / "dt"),
            "--id-eval", str(workdir / "ideval"),
            "--report", str(report),
            "--no-figures",
        ],
    )
    assert res.exit_code == 0, res.output
    assert report.exists()
    assert not (report.parent / "report_roc.png").exists()


def test_evaluate_scheme2_no_auroc(workdir, tmp_path):
    runner = CliRunner()
    res = runner.invoke(
        cli,
        [
            "calibrate",
            "--train", str(workdir / "data" / "ds"),
            "--valid", str(workdir / "data" / "dv"),
            "--k", "1",
            "--scheme", "2",
            "--p-grid", "50",
            "--out", str(tmp_path / "mon2"),
        ],
    )
    assert res.exit_code == 0, res.output
    report = tmp_path / "rep" / "report.txt"
    res = runner.invoke(
        cli,
        [
            "evaluate",
            "--monitor", str(tmp_path / "mon2"),
            "--test", str(workdir / "data" / "dt"),
            "--id-eval", str(workdir / "ideval"),
            "--report", str(report),
            "--no-figures",
        ],
    )
    assert res.exit_code == 0, res.output
    assert "test_auroc=NA" in report.read_text()
    lines = report.with_suffix(".records.csv").read_text().strip().splitlines()
    # no score column content for the majority-vote scheme
    first = lines[1].split(",")
    assert first[2] == ""
    assert first[3] in ("id", "ood")


def test_odtest_command(workdir, tmp_path):
    report = tmp_path / "od" / "report.txt"
    res = CliRunner().invoke(
        cli,
        [
            "odtest",
            "--ds", str(workdir / "data" / "ds"),
            "--dv", str(workdir / "data" / "dv"),
            "--dt", str(workdir / "data" / "dt"),
            "--k", "1",
            "--p-grid", "30,60",
            "--report", str(report),
            "--no-figures",
        ],
    )
    assert res.exit_code == 0, res.output
    assert "val_accuracy=" in report.read_text()


def test_bench_command(tmp_path):
    out = tmp_path / "bench.csv"
    res = CliRunner().invoke(
        cli,
        [
            "bench",
            "--sizes", "100,500",
            "--bits", "64",
            "--queries", "20",
            "--out", str(out),
        ],
    )
    assert res.exit_code == 0, res.output
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "kind,store_size,bit_len,layers,queries,mean_s,p99_s"
    assert len(lines) == 3
    assert out.with_suffix(".png").exists()


def _query_exit_code(workdir, sample_file):
    proc = subprocess.run(
        [
            sys.executable, "-m", "napmon.cli",
            "query",
            "--monitor", str(workdir / "monitor"),
            "--sample", str(sample_file),
        ],
        capture_output=True,
        text=True,
    )
    return proc


def test_query_exit_codes(workdir, tmp_path):
    # A training-store member has d_min = 0 on every layer, which forces
    # an ID verdict under both schemes (tau >= 0).
    ds = read_dump(workdir / "data" / "ds")
    ideval = read_dump(workdir / "ideval")
    held_out = {row.tobytes() for row in ideval.layer_values("d")}
    train_idx = next(
        i
        for i in range(ds.sample_count)
        if ds.layer_values("d")[i].tobytes() not in held_out
    )
    id_sample = tmp_path / "id.npz"
    np.savez(
        id_sample,
        c=ds.layer_values("c")[train_idx],
        d=ds.layer_values("d")[train_idx],
    )
    proc = _query_exit_code(workdir, id_sample)
    assert proc.returncode == 0, proc.stderr
    record = json.loads(proc.stdout.strip().splitlines()[0])
    assert record["is_ood"] is False
    assert all(layer["d_min"] == 0 for layer in record["layers"])

    # an extreme sample: alternating huge activations
    rng = np.random.default_rng(0)
    ood_sample = tmp_path / "ood.npz"
    np.savez(
        ood_sample,
        c=rng.normal(50, 30, size=(10, 3, 3)).astype(np.float32),
        d=rng.normal(-50, 30, size=20).astype(np.float32),
    )
    proc = _query_exit_code(workdir, ood_sample)
    assert proc.returncode == 2, proc.stdout + proc.stderr
    record = json.loads(proc.stdout.strip().splitlines()[0])
    assert record["is_ood"] is True


def test_query_missing_layer_is_error(workdir, tmp_path):
    bad = tmp_path / "bad.npz"
    np.savez(bad, c=np.zeros((10, 3, 3), dtype=np.float32))
    proc = _query_exit_code(workdir, bad)
    assert proc.returncode == 1


def test_error_exit_code_is_one(tmp_path):
    proc = subprocess.run(
        [
            sys.executable, "-m", "napmon.cli",
            "evaluate",
            "--monitor", str(tmp_path / "nope"),
            "--test", str(tmp_path / "nope"),
            "--id-eval", str(tmp_path / "nope"),
            "--report", str(tmp_path / "r.txt"),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1


def test_all_commands_accept_seed():
    runner = CliRunner()
    for cmd in ("extract", "calibrate", "evaluate", "query", "bench", "synth", "odtest"):
        res = runner.invoke(cli, [cmd, "--help"])
        assert res.exit_code == 0
        assert "--seed" in res.output, cmd
