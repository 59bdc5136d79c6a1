"""Cross-component checks: dumps written here must drive the monitor."""

import json
import subprocess
import sys

import numpy as np
import pytest

from napexport.export import ExportSpec, export

LAYERS = ("relu1", "relu2", "relu3")


@pytest.fixture(scope="module")
def dumps(tmp_path_factory):
    root = tmp_path_factory.mktemp("interop")
    paths = {}
    for split in ("train", "valid", "ideval"):
        paths[split] = export(
            ExportSpec(
                model="toy",
                layers=LAYERS,
                dataset="noise:16",
                out_dir=root / split,
                split=split,
                seed=11,
            )
        )
    return paths


def test_primary_reads_exported_dump(dumps):
    from napmon import read_dump

    dump = read_dump(dumps["train"])
    assert dump.layer_names == list(LAYERS)
    assert dump.sample_count == 16
    specs = {s.name: s for s in dump.layers}
    assert specs["relu1"].kind == "conv" and specs["relu1"].shape == (8, 32, 32)
    assert specs["relu2"].kind == "conv" and specs["relu2"].shape == (12, 16, 16)
    assert specs["relu3"].kind == "dense" and specs["relu3"].shape == (32,)
    assert dump.meta["capture"] == "post_relu"
    for name in LAYERS:
        values = dump.layer_values(name)
        assert values.shape == (16, *specs[name].shape)
        assert float(np.asarray(values).min()) >= 0.0


def _napmon(*args):
    return subprocess.run(
        [sys.executable, "-m", "napmon.cli", *args], capture_output=True, text=True
    )


def test_calibration_pipeline_runs_on_export(dumps, tmp_path):
    monitor = tmp_path / "monitor"
    proc = _napmon(
        "calibrate",
        "--train", str(dumps["train"]),
        "--valid", str(dumps["valid"]),
        "--k", "1",
        "--scheme", "1",
        "--criterion", "hybrid",
        "--p-grid", "50,80",
        "--out", str(monitor),
    )
    assert proc.returncode == 0, proc.stderr
    manifest = json.loads((monitor / "monitor.json").read_text())
    assert manifest["k"] == 1

    report = tmp_path / "report.txt"
    proc = _napmon(
        "evaluate",
        "--monitor", str(monitor),
        "--test", str(dumps["valid"]),
        "--id-eval", str(dumps["ideval"]),
        "--report", str(report),
        "--no-figures",
    )
    assert proc.returncode == 0, proc.stderr
    text = report.read_text()
    assert "test_accuracy=" in text

    # A training sample must judge as ID (distance 0 to its own pattern).
    from napmon import read_dump

    train = read_dump(dumps["train"])
    sample = tmp_path / "sample.npz"
    np.savez(sample, **{n: train.layer_values(n)[0] for n in LAYERS})
    proc = _napmon("query", "--monitor", str(monitor), "--sample", str(sample))
    assert proc.returncode == 0, proc.stdout + proc.stderr
    record = json.loads(proc.stdout.strip().splitlines()[0])
    assert record["is_ood"] is False
