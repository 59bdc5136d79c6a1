"""Command-line interface.

Exit codes: 0 on success (and ID verdicts from ``query``), 1 on any
error, 2 when ``query`` flags a sample as OOD.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .calibration import CRITERIA
from .dumps import read_dump
from .errors import NapmonError
from .extraction import DEFAULT_P_GRID, fit_thresholds, extract_words
from .monitor import judge
from .odtest import (
    ODTestReport,
    SearchSpace,
    calibrate_monitor,
    evaluate_pair,
    run_odtest,
    split_source,
)
from .persist import load_monitor, save_monitor, save_store
from .store import build_store_from_words
from .synth import SyntheticSpec, spec_from_dict, synth_generate
from . import bench as bench_mod
from . import dumps as dumps_mod
from . import report as report_mod


@click.group()
def cli():
    """OOD runtime monitoring via binary activation patterns."""


def _parse_p_grid(text: str | None) -> tuple[float, ...]:
    if not text:
        return DEFAULT_P_GRID
    values = tuple(float(tok) for tok in text.replace(" ", "").split(",") if tok)
    if not values:
        raise click.BadParameter("empty percentile grid")
    return values


@cli.command()
@click.option("--dump", "dump_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--layer", required=True, help="Layer name as declared in the dump manifest.")
@click.option("--p", default=50.0, show_default=True, help="Binarization percentile.")
@click.option("--pool", type=click.Choice(["max", "avg"]), default="max", show_default=True)
@click.option(
    "--mode",
    type=click.Choice(["per-pattern", "per-position"]),
    default="per-pattern",
    show_default=True,
)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True)
def extract(dump_dir, layer, p, pool, mode, out_path, seed):
    """Extract patterns for one layer of a dump into a NAPS store file."""
    dump = read_dump(dump_dir)
    spec = dump.spec(layer)
    cfg = fit_thresholds(
        dump.layer_values(layer), spec, p, pool, mode.replace("-", "_")
    )
    words = extract_words(dump.layer_values(layer), spec, cfg)
    store = build_store_from_words(words, spec.width, layer)
    save_store(out_path, store)
    click.echo(
        f"{layer}: {store.total_count} patterns ({store.unique_count} unique, "
        f"{store.bit_len} bits) -> {out_path}"
    )


@cli.command()
@click.option("--train", "train_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--valid", "valid_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--k", default=3, show_default=True, help="Number of layers to monitor.")
@click.option("--scheme", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option(
    "--criterion", type=click.Choice(list(CRITERIA)), default="hybrid", show_default=True
)
@click.option("--p-grid", default=None, help="Comma-separated percentile grid.")
@click.option(
    "--mode",
    type=click.Choice(["per-pattern", "per-position"]),
    default="per-pattern",
    show_default=True,
)
@click.option(
    "--id-eval-out",
    default=None,
    type=click.Path(file_okay=False),
    help="Hold out 20% of --train as an ID evaluation dump written here; "
    "the monitor is then fitted on the remaining 80%.",
)
@click.option("--out", "out_path", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
def calibrate(train_dir, valid_dir, k, scheme, criterion, p_grid, mode, id_eval_out, out_path, seed):
    """Auto-configure a monitor: grid search, thresholds, layer selection."""
    train = read_dump(train_dir)
    valid = read_dump(valid_dir)
    if id_eval_out:
        train, id_eval = split_source(train, seed)
        dumps_mod.write_dump(id_eval, id_eval_out)
        click.echo(f"held out {id_eval.sample_count} ID samples -> {id_eval_out}")
    search = SearchSpace(
        p_grid=_parse_p_grid(p_grid), threshold_mode=mode.replace("-", "_")
    )
    fitted = calibrate_monitor(
        train, valid, k=k, vote_scheme=int(scheme), criterion=criterion, search=search
    )
    save_monitor(
        out_path,
        fitted.config,
        fitted.stores,
        meta={
            "val_accuracy": fitted.val_accuracy,
            "criterion": criterion,
            "seed": seed,
            "train_dataset": train.dataset_id,
            "valid_dataset": valid.dataset_id,
        },
    )
    click.echo(f"monitor (k={fitted.config.k}, scheme {scheme}) -> {out_path}")
    click.echo(f"validation balanced accuracy: {fitted.val_accuracy:.4f}")
    for diag in fitted.diagnostics:
        click.echo(
            f"  {diag.name}: p={diag.p:g} pool={diag.pool_type} tau={diag.tau} "
            f"({diag.tau_scaled:.4f} scaled) val_acc={diag.val_accuracy:.4f}"
        )


@cli.command()
@click.option("--monitor", "monitor_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--test", "test_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--id-eval", "id_eval_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
def evaluate(monitor_dir, test_dir, id_eval_dir, report_path, figures, seed):
    """Score a frozen monitor on held-out ID versus an unseen OOD dump."""
    bundle = load_monitor(monitor_dir)
    id_eval = read_dump(id_eval_dir)
    test = read_dump(test_dir)
    outcome = evaluate_pair(bundle.config, bundle.stores, id_eval, test, seed)
    diagnostics = [
        _diag_from_calib(calib, bundle) for calib in bundle.config.layers
    ]
    rep = ODTestReport(
        source_id=id_eval.dataset_id,
        validation_id=str(bundle.meta.get("valid_dataset", "frozen")),
        test_id=test.dataset_id,
        vote_scheme=bundle.config.vote_scheme,
        k=bundle.config.k,
        criterion=str(bundle.meta.get("criterion", "")),
        seed=seed,
        layers=diagnostics,
        val_accuracy=bundle.meta.get("val_accuracy"),
        test_accuracy=outcome.test_accuracy,
        test_auroc=outcome.test_auroc,
        latency_per_sample=outcome.latency_per_sample,
        sample_counts={
            "id_eval": id_eval.sample_count,
            "test_ood": test.sample_count,
            "test_balanced_per_side": outcome.balanced_per_side,
        },
        test_scores=outcome.scores,
        test_labels=outcome.labels,
        test_verdicts=outcome.verdicts,
    )
    report_mod.write_report(rep, report_path)
    records = Path(report_path).with_suffix(".records.csv")
    report_mod.write_verdict_records(rep, records)
    written = [str(report_path), str(records)]
    if figures:
        prefix = Path(report_path).with_suffix("")
        written += [str(p) for p in report_mod.render_report_figures(rep, prefix)]
    click.echo(report_mod.format_report(rep), nl=False)
    click.echo("wrote: " + ", ".join(written))


def _diag_from_calib(calib, bundle):
    from .odtest import LayerDiagnostics

    store = bundle.stores[calib.layer_name]
    return LayerDiagnostics(
        name=calib.layer_name,
        kind=calib.spec.kind,
        p=calib.cfg.p,
        pool_type=calib.cfg.pool_type,
        tau=calib.tau,
        tau_scaled=calib.tau_scaled,
        bit_len=calib.bit_len,
        val_accuracy=calib.val_accuracy,
        unique_patterns=store.unique_count,
        train_patterns=store.total_count,
    )


@cli.command()
@click.option("--monitor", "monitor_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option(
    "--sample",
    "sample_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="NPZ file with one array per monitored layer (optionally batched).",
)
@click.option("--seed", default=0, show_default=True)
def query(monitor_dir, sample_path, seed):
    """Judge sample(s); exit code 0 = ID, 2 = OOD (any OOD in a batch)."""
    bundle = load_monitor(monitor_dir)
    with np.load(sample_path) as payload:
        arrays = {name: payload[name] for name in payload.files}
    config = bundle.config
    missing = [c.layer_name for c in config.layers if c.layer_name not in arrays]
    if missing:
        raise click.ClickException(f"sample file lacks monitored layers: {missing}")
    batched = {}
    n = None
    for calib in config.layers:
        arr = arrays[calib.layer_name]
        if arr.shape == calib.spec.shape:
            arr = arr[None, ...]
        if n is None:
            n = len(arr)
        batched[calib.layer_name] = arr
    any_ood = False
    for i in range(n):
        verdict = judge(
            {name: arr[i] for name, arr in batched.items()}, config, bundle.stores
        )
        record = {
            "sample": i,
            "is_ood": verdict.is_ood,
            "score": verdict.score,
            "layers": [
                {
                    "layer": lv.layer_name,
                    "d_min": lv.d_min,
                    "d_scaled": round(lv.d_scaled, 9),
                    "vote_ood": lv.is_ood,
                }
                for lv in verdict.per_layer
            ],
        }
        click.echo(json.dumps(record))
        any_ood = any_ood or verdict.is_ood
    if any_ood:
        sys.exit(2)


@cli.command()
@click.option("--sizes", default="1000,10000,100000", show_default=True)
@click.option("--bits", default="256,1024", show_default=True)
@click.option("--queries", default=200, show_default=True)
@click.option("--judge-layers", default=0, show_default=True,
              help="Also bench a full judge pass over this many layers (0 = skip).")
@click.option("--judge-store-size", default=60_000, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
def bench(sizes, bits, queries, judge_layers, judge_store_size, out_path, figures, seed):
    """Measure nearest-distance (and optionally full-judge) latency."""
    size_list = [int(s) for s in sizes.split(",") if s]
    bit_list = [int(b) for b in bits.split(",") if b]
    rows = bench_mod.bench_nearest(size_list, bit_list, queries=queries, seed=seed)
    if judge_layers:
        rows.append(
            bench_mod.bench_judge(
                k=judge_layers, store_size=judge_store_size, seed=seed
            )
        )
    click.echo(bench_mod.BenchRow.csv_header())
    for row in rows:
        click.echo(row.csv_line())
    if out_path:
        report_mod.write_bench_csv(rows, out_path)
        if figures:
            fig = Path(out_path).with_suffix(".png")
            report_mod.render_bench_figure(rows, fig)
            click.echo(f"wrote: {out_path}, {fig}", err=True)


@cli.command()
@click.option("--spec", "spec_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="JSON synthetic-data spec; defaults to the shipped recipe.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=None, type=int, help="Overrides the spec's seed.")
def synth(spec_path, out_dir, seed):
    """Generate a (source, validation-OOD, test-OOD) dump triplet."""
    doc = json.loads(Path(spec_path).read_text()) if spec_path else {}
    spec = spec_from_dict(doc)
    if seed is not None:
        spec = SyntheticSpec(
            classes=spec.classes,
            layers=spec.layers,
            id_noise_scale=spec.id_noise_scale,
            ood_shift_scale=spec.ood_shift_scale,
            train_count=spec.train_count,
            valid_count=spec.valid_count,
            test_count=spec.test_count,
            seed=seed,
        )
    ds, dv, dt = synth_generate(spec)
    root = Path(out_dir)
    for dump, sub in ((ds, "ds"), (dv, "dv"), (dt, "dt")):
        dumps_mod.write_dump(dump, root / sub)
    click.echo(
        f"wrote {ds.sample_count}/{dv.sample_count}/{dt.sample_count} samples "
        f"to {root}/(ds,dv,dt)"
    )


@cli.command()
@click.option("--ds", "ds_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dv", "dv_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dt", "dt_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--k", default=3, show_default=True)
@click.option("--scheme", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option("--criterion", type=click.Choice(list(CRITERIA)), default="hybrid", show_default=True)
@click.option("--p-grid", default=None)
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
def odtest(ds_dir, dv_dir, dt_dir, k, scheme, criterion, p_grid, report_path, figures, seed):
    """Run the full three-dataset protocol on dump directories."""
    rep = run_odtest(
        read_dump(ds_dir),
        read_dump(dv_dir),
        read_dump(dt_dir),
        k=k,
        vote_scheme=int(scheme),
        criterion=criterion,
        search=SearchSpace(p_grid=_parse_p_grid(p_grid)),
        seed=seed,
    )
    report_mod.write_report(rep, report_path)
    records = Path(report_path).with_suffix(".records.csv")
    report_mod.write_verdict_records(rep, records)
    written = [str(report_path), str(records)]
    if figures:
        prefix = Path(report_path).with_suffix("")
        written += [str(p) for p in report_mod.render_report_figures(rep, prefix)]
    click.echo(report_mod.format_report(rep), nl=False)
    click.echo("wrote: " + ", ".join(written))


def main(argv=None):
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except NapmonError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
