"""Fit per-layer decision thresholds and pick the layers worth monitoring.

The decision threshold tau for a layer is the distance value minimizing
the weighted within-group variance of the pooled ID/OOD distance
distributions split at tau (classic intra-class variance objective,
groups weighted by size). The objective is evaluated in exact rational
arithmetic so the chosen tau is the true global minimizer, not a
float-rounding accident.

Grid search runs per layer over (percentile p, pool type t): p is chosen
first under the hybrid criterion with the pool type fixed to the default
(max), then t is chosen at that p under the configured criterion. Layer
selection takes the top-k by validation accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dumps import ActivationDump
from .errors import ShapeMismatchError
from .extraction import (
    DEFAULT_P_GRID,
    BinarizationConfig,
    LayerSpec,
    extract_words,
    fit_thresholds,
)
from .store import PatternStore, batch_nearest_words, build_store_from_words, loo_all

CRITERIA = ("accuracy", "threshold", "hybrid")

# A candidate is "as accurate" under the hybrid criterion when within this
# margin of the best validation accuracy.
HYBRID_ACCURACY_MARGIN = 0.01


@dataclass(frozen=True, eq=False)
class LayerCalibration:
    """Everything the monitor needs to judge one layer."""

    spec: LayerSpec
    cfg: BinarizationConfig
    tau: int
    val_accuracy: float
    bit_len: int

    def __post_init__(self):
        if not 0 <= self.tau <= self.bit_len:
            raise ValueError(
                f"tau {self.tau} outside [0, bit_len={self.bit_len}] "
                f"for layer {self.spec.name!r}"
            )
        if not 0 <= self.val_accuracy <= 1:
            raise ValueError(f"val_accuracy {self.val_accuracy} outside [0, 1]")

    @property
    def layer_name(self) -> str:
        return self.spec.name

    @property
    def tau_scaled(self) -> float:
        return self.tau / self.bit_len


@dataclass(frozen=True)
class MonitorConfig:
    """Ordered set of calibrated layers plus the vote scheme: the deployable detector."""

    layers: tuple[LayerCalibration, ...]
    vote_scheme: int  # 1: summed scaled-distance score, 2: majority vote

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 1:
            raise ValueError("a monitor needs at least one layer")
        if self.vote_scheme not in (1, 2):
            raise ValueError(f"vote_scheme must be 1 or 2, got {self.vote_scheme}")
        if self.vote_scheme == 2 and len(self.layers) % 2 == 0:
            raise ValueError("majority vote requires odd k")
        names = [c.layer_name for c in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in monitor: {names}")

    @property
    def k(self) -> int:
        return len(self.layers)

    @property
    def layer_names(self) -> list[str]:
        return [c.layer_name for c in self.layers]


def otsu_tau(d_in: Sequence[float], d_out: Sequence[float]) -> int | float:
    """Distance threshold minimizing the intra-class variance objective.

    Pools both multisets; candidates are the distinct observed values.
    For each candidate c the pool splits into {d <= c} and {d > c}; the
    objective is the size-weighted sum of within-group variances (an
    empty group contributes zero). Smallest candidate wins ties.
    """
    d_in = np.asarray(d_in).ravel()
    d_out = np.asarray(d_out).ravel()
    if d_in.size == 0 or d_out.size == 0:
        raise ValueError("otsu_tau needs non-empty ID and OOD distance sets")
    pool = np.concatenate([d_in, d_out])
    values, counts = np.unique(pool, return_counts=True)
    integral = np.issubdtype(pool.dtype, np.integer)

    n = int(pool.size)
    fracs = [Fraction(v.item()) for v in values]
    total_s = sum(f * int(c) for f, c in zip(fracs, counts))
    total_q = sum(f * f * int(c) for f, c in zip(fracs, counts))

    best_term = None  # maximizing s1^2/n1 + s2^2/n2 minimizes the objective
    best_value = None
    n1 = 0
    s1 = Fraction(0)
    q1 = Fraction(0)
    for v, f, c in zip(values, fracs, counts):
        n1 += int(c)
        s1 += f * int(c)
        q1 += f * f * int(c)
        n2 = n - n1
        s2 = total_s - s1
        term = s1 * s1 / n1
        if n2:
            term += s2 * s2 / n2
        if best_term is None or term > best_term:
            best_term = term
            best_value = v
    return int(best_value) if integral else float(best_value)


def intra_class_variance(
    d_in: Sequence[float], d_out: Sequence[float], tau: float
) -> float:
    """The objective value at a given split point (diagnostics/tests)."""
    pool = np.concatenate([np.asarray(d_in).ravel(), np.asarray(d_out).ravel()])
    lo = pool[pool <= tau]
    hi = pool[pool > tau]
    obj = 0.0
    for group in (lo, hi):
        if group.size:
            obj += group.size / pool.size * float(np.var(group))
    return obj


def balanced_detection_accuracy(
    tau: float, id_distances: Sequence[float], ood_distances: Sequence[float]
) -> float:
    """Mean of the ID-kept rate and the OOD-flagged rate at threshold tau.

    A sample is flagged OOD iff its distance strictly exceeds tau.
    """
    d_in = np.asarray(id_distances).ravel()
    d_out = np.asarray(ood_distances).ravel()
    if d_in.size == 0 or d_out.size == 0:
        raise ValueError("accuracy needs non-empty ID and OOD distance sets")
    id_kept = float((d_in <= tau).mean())
    ood_flagged = float((d_out > tau).mean())
    return (id_kept + ood_flagged) / 2


def layer_accuracy(
    calib: LayerCalibration,
    id_distances: Sequence[float],
    ood_distances: Sequence[float],
) -> float:
    """Balanced OOD-detection accuracy of one calibrated layer."""
    return balanced_detection_accuracy(calib.tau, id_distances, ood_distances)


@dataclass(frozen=True, eq=False)
class CellResult:
    """One grid cell, fully evaluated (kept around so callers can reuse the store)."""

    calibration: LayerCalibration
    store: PatternStore
    d_in: np.ndarray
    d_out: np.ndarray

    @property
    def p(self) -> float:
        return self.calibration.cfg.p

    @property
    def pool_type(self) -> str:
        return self.calibration.cfg.pool_type


def evaluate_cell(
    train: ActivationDump,
    valid: ActivationDump,
    layer: str,
    p: float,
    pool_type: str = "max",
    threshold_mode: str = "per_pattern",
) -> CellResult:
    """Fit and score one (p, t) candidate for one layer.

    Thresholds fit on the training dump; d_in is leave-one-out over the
    training patterns; d_out is the nearest distance of each validation
    sample; tau minimizes the intra-class variance of the pooled sets.
    """
    spec = train.spec(layer)
    vspec = valid.spec(layer)
    if vspec.shape != spec.shape or vspec.kind != spec.kind:
        raise ShapeMismatchError(
            f"layer {layer!r}: train declares {spec.kind} {spec.shape}, "
            f"validation declares {vspec.kind} {vspec.shape}"
        )
    cfg = fit_thresholds(train.layer_values(layer), spec, p, pool_type, threshold_mode)
    store = build_store_from_words(
        extract_words(train.layer_values(layer), spec, cfg), spec.width, spec.name
    )
    d_in = loo_all(store)
    d_out = batch_nearest_words(store, extract_words(valid.layer_values(layer), spec, cfg))
    tau = int(otsu_tau(d_in, d_out))
    acc = balanced_detection_accuracy(tau, d_in, d_out)
    calib = LayerCalibration(spec, cfg, tau, acc, spec.width)
    return CellResult(calib, store, d_in, d_out)


def _tiebreak(cell: CellResult, t_options: Sequence[str]) -> tuple:
    # Deterministic tie-breaking: larger p first, then earlier pool type.
    return (-cell.p, t_options.index(cell.pool_type))


def pick_by_criterion(
    cells: Sequence[CellResult], criterion: str, t_options: Sequence[str]
) -> CellResult:
    """Rank evaluated cells under one optimization criterion."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    if not cells:
        raise ValueError("no candidate cells to rank")
    if criterion == "accuracy":
        return min(
            cells,
            key=lambda c: (
                -c.calibration.val_accuracy,
                c.calibration.tau_scaled,
                *_tiebreak(c, t_options),
            ),
        )
    if criterion == "threshold":
        return min(
            cells,
            key=lambda c: (
                c.calibration.tau_scaled,
                -c.calibration.val_accuracy,
                *_tiebreak(c, t_options),
            ),
        )
    # hybrid: near-best accuracy, then lowest scaled threshold
    best_acc = max(c.calibration.val_accuracy for c in cells)
    eligible = [
        c for c in cells if c.calibration.val_accuracy >= best_acc - HYBRID_ACCURACY_MARGIN
    ]
    return min(
        eligible,
        key=lambda c: (c.calibration.tau_scaled, *_tiebreak(c, t_options)),
    )


def grid_search_layer(
    train: ActivationDump,
    valid: ActivationDump,
    layer: str,
    p_grid: Sequence[float] = DEFAULT_P_GRID,
    t_options: Sequence[str] = ("max", "avg"),
    criterion: str = "hybrid",
    threshold_mode: str = "per_pattern",
) -> LayerCalibration:
    """Grid-search (p, t) for one layer and return the winning calibration.

    Two-stage selection: p is picked under the hybrid criterion with the
    pool type fixed to ``t_options[0]``; the pool type is then picked at
    that p under ``criterion``. Dense layers have no pool type to tune.
    """
    if len(p_grid) == 0:
        raise ValueError("p_grid must be non-empty")
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    spec = train.spec(layer)
    valid.spec(layer)
    t_opts = tuple(t_options) if spec.kind == "conv" else ("max",)
    cells = {
        (p, t): evaluate_cell(train, valid, layer, p, t, threshold_mode)
        for p in p_grid
        for t in t_opts
    }
    stage1 = [cells[(p, t_opts[0])] for p in p_grid]
    best_p = pick_by_criterion(stage1, "hybrid", t_opts).p
    stage2 = [cells[(best_p, t)] for t in t_opts]
    return pick_by_criterion(stage2, criterion, t_opts).calibration


def select_layers(
    calibrations: Sequence[LayerCalibration], k: int, vote_scheme: int = 1
) -> MonitorConfig:
    """Top-k layers by validation accuracy, kept in network order.

    ``calibrations`` must be in network order (shallow to deep); accuracy
    ties prefer the deeper layer, then the lexically smaller name.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(calibrations):
        raise ValueError(f"k={k} exceeds the {len(calibrations)} calibrated layers")
    if vote_scheme == 2 and k % 2 == 0:
        raise ValueError("majority vote requires odd k")
    ranked = sorted(
        range(len(calibrations)),
        key=lambda i: (-calibrations[i].val_accuracy, -i, calibrations[i].layer_name),
    )
    chosen = sorted(ranked[:k])
    return MonitorConfig(tuple(calibrations[i] for i in chosen), vote_scheme)
