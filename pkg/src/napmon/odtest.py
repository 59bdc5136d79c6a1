"""Three-dataset evaluation protocol.

The detector is calibrated to discriminate the source data from one OOD
group (validation), then scored on a second, different OOD group (test)
against held-out source samples. Thresholds and all hyperparameters are
frozen before the test dump is touched; the 80/20 source split keeps the
ID evaluation samples out of the pattern stores.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .calibration import (
    LayerCalibration,
    MonitorConfig,
    evaluate_cell,
    grid_search_layer,
    select_layers,
)
from .dumps import ActivationDump
from .errors import ShapeMismatchError
from .extraction import DEFAULT_P_GRID
from .metrics import accuracy, auroc
from .monitor import BatchVerdict, judge, judge_batch
from .store import PatternStore

HOLDOUT_FRACTION = 0.2


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter grid for per-layer calibration."""

    p_grid: tuple[float, ...] = DEFAULT_P_GRID
    t_options: tuple[str, ...] = ("max", "avg")
    threshold_mode: str = "per_pattern"


@dataclass
class LayerDiagnostics:
    name: str
    kind: str
    p: float
    pool_type: str
    tau: int
    tau_scaled: float
    bit_len: int
    val_accuracy: float
    unique_patterns: int
    train_patterns: int


@dataclass
class ODTestReport:
    """Outcome of one protocol run."""

    source_id: str
    validation_id: str
    test_id: str
    vote_scheme: int
    k: int
    criterion: str
    seed: int
    layers: list[LayerDiagnostics]
    val_accuracy: Optional[float]  # unavailable when evaluating a loaded bundle
    test_accuracy: float
    test_auroc: Optional[float]  # absent for the majority-vote scheme
    latency_per_sample: float
    sample_counts: dict[str, int]
    # Raw material for figures and per-sample records; not part of the
    # serialized summary.
    test_scores: Optional[np.ndarray] = field(default=None, repr=False)
    test_labels: Optional[np.ndarray] = field(default=None, repr=False)
    test_verdicts: Optional[np.ndarray] = field(default=None, repr=False)
    val_distances: Optional[dict[str, tuple[np.ndarray, np.ndarray]]] = field(
        default=None, repr=False
    )

    def summary_fields(self) -> dict:
        out = {
            "source_id": self.source_id,
            "validation_id": self.validation_id,
            "test_id": self.test_id,
            "vote_scheme": self.vote_scheme,
            "k": self.k,
            "criterion": self.criterion,
            "seed": self.seed,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "test_auroc": self.test_auroc,
            "latency_per_sample_s": self.latency_per_sample,
        }
        out.update({f"n_{k}": v for k, v in self.sample_counts.items()})
        return out


def split_source(
    dump: ActivationDump, seed: int, holdout: float = HOLDOUT_FRACTION
) -> tuple[ActivationDump, ActivationDump]:
    """Seeded split of the source dump into (train, id_eval)."""
    n = dump.sample_count
    n_eval = int(round(n * holdout))
    if n_eval < 1 or n - n_eval < 2:
        raise ValueError(
            f"source dump with {n} samples is too small for a {holdout:.0%} holdout"
        )
    perm = np.random.default_rng(seed).permutation(n)
    train = dump.subset(np.sort(perm[n_eval:]))
    id_eval = dump.subset(np.sort(perm[:n_eval]))
    return train, id_eval


def _check_schema(reference: ActivationDump, other: ActivationDump, what: str) -> None:
    if [s for s in reference.layers] != [s for s in other.layers]:
        raise ShapeMismatchError(
            f"{what} dump layer schema {other.layers} does not match "
            f"source schema {reference.layers}"
        )


def _monitor_distance_matrix(
    config: MonitorConfig, per_layer: dict[str, np.ndarray]
) -> np.ndarray:
    return np.stack([per_layer[c.layer_name] for c in config.layers], axis=1)


def _measure_latency(
    dump: ActivationDump,
    config: MonitorConfig,
    stores: dict[str, PatternStore],
    max_samples: int = 50,
) -> float:
    n = min(dump.sample_count, max_samples)
    blocks = {c.layer_name: dump.layer_values(c.layer_name) for c in config.layers}
    start = time.perf_counter()
    for i in range(n):
        judge({name: block[i] for name, block in blocks.items()}, config, stores)
    return (time.perf_counter() - start) / n


@dataclass
class EvalOutcome:
    """Balanced ID-vs-OOD evaluation of a frozen monitor."""

    test_accuracy: float
    test_auroc: Optional[float]
    latency_per_sample: float
    balanced_per_side: int
    scores: Optional[np.ndarray]
    labels: np.ndarray
    verdicts: np.ndarray


def evaluate_pair(
    config: MonitorConfig,
    stores: dict[str, PatternStore],
    id_eval: ActivationDump,
    ood: ActivationDump,
    seed: int = 0,
) -> EvalOutcome:
    """Judge held-out ID samples against an OOD dump, balanced 1:1.

    The larger side is downsampled to the smaller with the run seed.
    """
    rng = np.random.default_rng([seed, 1])
    m = min(id_eval.sample_count, ood.sample_count)
    if m < 1:
        raise ValueError("both evaluation dumps need at least one sample")
    id_part = id_eval.subset(np.sort(rng.permutation(id_eval.sample_count)[:m]))
    ood_part = ood.subset(np.sort(rng.permutation(ood.sample_count)[:m]))

    names = config.layer_names
    id_batch = judge_batch({n: id_part.layer_values(n) for n in names}, config, stores)
    ood_batch = judge_batch({n: ood_part.layer_values(n) for n in names}, config, stores)
    verdicts = np.concatenate([id_batch.is_ood, ood_batch.is_ood])
    labels = np.concatenate([np.zeros(m, dtype=bool), np.ones(m, dtype=bool)])
    test_accuracy = accuracy(verdicts, labels)
    if config.vote_scheme == 1:
        scores = np.concatenate([id_batch.scores, ood_batch.scores])
        test_auroc = auroc(scores, labels)
    else:
        scores = None
        test_auroc = None
    latency = _measure_latency(id_part, config, stores)
    return EvalOutcome(test_accuracy, test_auroc, latency, m, scores, labels, verdicts)


@dataclass
class CalibrationOutcome:
    """A fitted monitor plus its validation-side diagnostics."""

    config: MonitorConfig
    stores: dict[str, PatternStore]
    diagnostics: list[LayerDiagnostics]
    val_accuracy: float
    val_distances: dict[str, tuple[np.ndarray, np.ndarray]]


def calibrate_monitor(
    train: ActivationDump,
    valid: ActivationDump,
    k: int = 3,
    vote_scheme: int = 1,
    criterion: str = "hybrid",
    search: SearchSpace = SearchSpace(),
) -> CalibrationOutcome:
    """Grid-search every layer on train vs validation and select the top k."""
    _check_schema(train, valid, "validation")
    calibrations: list[LayerCalibration] = []
    for spec in train.layers:
        calibrations.append(
            grid_search_layer(
                train,
                valid,
                spec.name,
                p_grid=search.p_grid,
                t_options=search.t_options,
                criterion=criterion,
                threshold_mode=search.threshold_mode,
            )
        )
    config = select_layers(calibrations, k, vote_scheme)

    # Replay the winning cells to recover stores and validation distances.
    stores: dict[str, PatternStore] = {}
    val_in: dict[str, np.ndarray] = {}
    val_out: dict[str, np.ndarray] = {}
    diagnostics = []
    for calib in config.layers:
        cell = evaluate_cell(
            train,
            valid,
            calib.layer_name,
            calib.cfg.p,
            calib.cfg.pool_type,
            calib.cfg.threshold_mode,
        )
        stores[calib.layer_name] = cell.store
        val_in[calib.layer_name] = cell.d_in
        val_out[calib.layer_name] = cell.d_out
        diagnostics.append(
            LayerDiagnostics(
                name=calib.layer_name,
                kind=calib.spec.kind,
                p=calib.cfg.p,
                pool_type=calib.cfg.pool_type,
                tau=calib.tau,
                tau_scaled=calib.tau_scaled,
                bit_len=calib.bit_len,
                val_accuracy=calib.val_accuracy,
                unique_patterns=cell.store.unique_count,
                train_patterns=cell.store.total_count,
            )
        )

    # Monitor-level validation accuracy from the frozen per-layer distances.
    v_in = BatchVerdict(config, _monitor_distance_matrix(config, val_in))
    v_out = BatchVerdict(config, _monitor_distance_matrix(config, val_out))
    val_verdicts = np.concatenate([v_in.is_ood, v_out.is_ood])
    val_labels = np.concatenate(
        [np.zeros(len(v_in), dtype=bool), np.ones(len(v_out), dtype=bool)]
    )
    val_accuracy = accuracy(val_verdicts, val_labels)
    return CalibrationOutcome(
        config,
        stores,
        diagnostics,
        val_accuracy,
        {n: (val_in[n], val_out[n]) for n in config.layer_names},
    )


def run_odtest(
    ds: ActivationDump,
    dv: ActivationDump,
    dt: ActivationDump,
    k: int = 3,
    vote_scheme: int = 1,
    criterion: str = "hybrid",
    search: SearchSpace = SearchSpace(),
    seed: int = 0,
    trace: Optional[Callable[[str], None]] = None,
) -> ODTestReport:
    """Calibrate on D_s vs D_v, freeze, then score on held-out ID vs D_t."""
    emit = trace or (lambda event: None)
    _check_schema(ds, dv, "validation")
    _check_schema(ds, dt, "test")
    train, id_eval = split_source(ds, seed)

    emit("calibration_start")
    fitted = calibrate_monitor(train, dv, k, vote_scheme, criterion, search)
    config, stores = fitted.config, fitted.stores
    emit("calibration_end")

    # Balanced ID/OOD test evaluation; everything above is frozen now.
    emit("evaluation_start")
    outcome = evaluate_pair(config, stores, id_eval, dt, seed)
    emit("evaluation_end")

    return ODTestReport(
        source_id=ds.dataset_id,
        validation_id=dv.dataset_id,
        test_id=dt.dataset_id,
        vote_scheme=vote_scheme,
        k=k,
        criterion=criterion,
        seed=seed,
        layers=fitted.diagnostics,
        val_accuracy=fitted.val_accuracy,
        test_accuracy=outcome.test_accuracy,
        test_auroc=outcome.test_auroc,
        latency_per_sample=outcome.latency_per_sample,
        sample_counts={
            "train": train.sample_count,
            "id_eval": id_eval.sample_count,
            "valid_ood": dv.sample_count,
            "test_ood": dt.sample_count,
            "test_balanced_per_side": outcome.balanced_per_side,
        },
        test_scores=outcome.scores,
        test_labels=outcome.labels,
        test_verdicts=outcome.verdicts,
        val_distances=fitted.val_distances,
    )
