"""Runtime OOD detection for ReLU classifiers via binary activation patterns.

Workflow: export per-layer activations to dump directories, calibrate a
monitor (per-layer binarization, Hamming thresholds, layer selection),
then judge incoming samples by their nearest-pattern distances.
"""

from .calibration import (
    CRITERIA,
    LayerCalibration,
    MonitorConfig,
    grid_search_layer,
    layer_accuracy,
    otsu_tau,
    select_layers,
)
from .dumps import ActivationDump, read_dump, write_dump
from .extraction import (
    DEFAULT_P_GRID,
    BinarizationConfig,
    LayerSpec,
    binarize,
    extract_pattern,
    fit_thresholds,
    percentile_threshold,
    pool_channels,
)
from .metrics import accuracy, auroc
from .monitor import Verdict, judge, judge_batch, score_scheme1, vote_scheme2
from .odtest import (
    ODTestReport,
    SearchSpace,
    calibrate_monitor,
    evaluate_pair,
    run_odtest,
    split_source,
)
from .patterns import BinaryPattern, hamming, pack, unpack
from .persist import MonitorBundle, load_monitor, load_store, save_monitor, save_store
from .store import (
    PatternStore,
    batch_nearest,
    build_store,
    loo_nearest,
    nearest_distance,
)
from .synth import SyntheticSpec, synth_generate

__version__ = "0.1.0"

__all__ = [
    "ActivationDump",
    "BinarizationConfig",
    "BinaryPattern",
    "CRITERIA",
    "DEFAULT_P_GRID",
    "LayerCalibration",
    "LayerSpec",
    "MonitorBundle",
    "MonitorConfig",
    "ODTestReport",
    "PatternStore",
    "SearchSpace",
    "SyntheticSpec",
    "Verdict",
    "accuracy",
    "auroc",
    "batch_nearest",
    "binarize",
    "build_store",
    "calibrate_monitor",
    "evaluate_pair",
    "extract_pattern",
    "fit_thresholds",
    "grid_search_layer",
    "hamming",
    "judge",
    "judge_batch",
    "layer_accuracy",
    "load_monitor",
    "load_store",
    "loo_nearest",
    "nearest_distance",
    "otsu_tau",
    "pack",
    "percentile_threshold",
    "pool_channels",
    "read_dump",
    "run_odtest",
    "save_monitor",
    "save_store",
    "score_scheme1",
    "select_layers",
    "split_source",
    "synth_generate",
    "unpack",
    "vote_scheme2",
    "write_dump",
]
