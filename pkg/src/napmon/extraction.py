"""Turn raw layer activations into binary patterns.

Convolutional layers are first pooled per channel (max or mean over the
spatial map), then the pooled vector is binarized against a percentile
threshold: bit n is set iff value n strictly exceeds its threshold. Dense
layers binarize the raw activation vector directly.

Two threshold modes exist. ``per_pattern`` computes the percentile within
the sample's own vector at extraction time and needs no dataset
statistics; ``per_position`` uses thresholds fitted per position over a
reference dataset. The percentile convention is nearest-rank with the
rank computed in exact arithmetic, so thresholds are always observed
values and results are platform-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import (
    CalibrationMissingError,
    NonFiniteActivationError,
    ShapeMismatchError,
)
from .patterns import BinaryPattern, pack_rows

POOL_TYPES = ("max", "avg")
THRESHOLD_MODES = ("per_pattern", "per_position")

# Coarse sweep with a fine tail where channel selection gets aggressive.
DEFAULT_P_GRID = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 99)


@dataclass(frozen=True)
class LayerSpec:
    """Identity and geometry of one monitored layer."""

    name: str
    kind: str  # "conv" or "dense"
    shape: tuple[int, ...]  # (C, H, W) for conv, (M,) for dense

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.kind not in ("conv", "dense"):
            raise ValueError(f"layer kind must be conv or dense, got {self.kind!r}")
        if any(s < 1 for s in self.shape):
            raise ValueError(f"layer {self.name!r}: all shape entries must be >= 1")
        if self.kind == "dense" and len(self.shape) != 1:
            raise ValueError(f"dense layer {self.name!r} must have a 1-entry shape")
        if self.kind == "conv" and len(self.shape) != 3:
            raise ValueError(f"conv layer {self.name!r} must have a (C, H, W) shape")

    @property
    def width(self) -> int:
        """Pattern bit length: channel count for conv, element count for dense."""
        return self.shape[0]


@dataclass(frozen=True, eq=False)
class BinarizationConfig:
    """Fitted binarization settings for one layer."""

    p: float
    pool_type: str = "max"
    threshold_mode: str = "per_pattern"
    thresholds: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if not 0 <= self.p <= 100:
            raise ValueError(f"percentile must be in [0, 100], got {self.p}")
        if self.pool_type not in POOL_TYPES:
            raise ValueError(f"pool_type must be one of {POOL_TYPES}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.thresholds is not None:
            arr = np.ascontiguousarray(self.thresholds, dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, "thresholds", arr)


def nearest_rank(p: float, n: int) -> int:
    """1-based nearest-rank index for percentile ``p`` over ``n`` values.

    Exact: ceil(p/100 * n) computed in rational arithmetic, clamped to
    [1, n], so float noise can never shift the rank across an integer.
    """
    if n < 1:
        raise ValueError("rank undefined for empty input")
    r = math.ceil(Fraction(p) * n / 100)
    return min(max(r, 1), n)


def percentile_threshold(values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile: the observed value at rank ceil(p/100*n)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("percentile of an empty value set is undefined")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    r = nearest_rank(p, values.size)
    return float(np.partition(values, r - 1)[r - 1])


def _check_finite(arr: np.ndarray, layer: str, sample: int | None) -> None:
    if not np.isfinite(arr).all():
        where = f"sample {sample}" if sample is not None else "input"
        raise NonFiniteActivationError(
            f"non-finite activation value in {where} of layer {layer!r}"
        )


def pool_channels(
    tensor: np.ndarray,
    pool_type: str,
    layer: str = "?",
    sample: int | None = None,
) -> np.ndarray:
    """Reduce a (C, H, W) activation tensor to one value per channel."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ShapeMismatchError(
            f"layer {layer!r}: expected a (C, H, W) tensor, got shape {tensor.shape}"
        )
    if pool_type not in POOL_TYPES:
        raise ValueError(f"pool_type must be one of {POOL_TYPES}")
    _check_finite(tensor, layer, sample)
    if pool_type == "max":
        return tensor.max(axis=(1, 2))
    return tensor.mean(axis=(1, 2))


def binarize(
    vector: np.ndarray, cfg: BinarizationConfig, layer: str = "?"
) -> BinaryPattern:
    """Binarize a pooled/dense vector: bit n = (value n > threshold n)."""
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if cfg.threshold_mode == "per_pattern":
        thr: np.ndarray | float = percentile_threshold(vector, cfg.p)
    else:
        if cfg.thresholds is None:
            raise CalibrationMissingError(
                f"layer {layer!r}: per_position binarization requested but "
                "calibration missing (no fitted thresholds)"
            )
        if cfg.thresholds.size != vector.size:
            raise ShapeMismatchError(
                f"layer {layer!r}: {cfg.thresholds.size} fitted thresholds for a "
                f"{vector.size}-element vector"
            )
        thr = cfg.thresholds
    bits = vector > thr
    return BinaryPattern(pack_rows(bits.reshape(1, -1))[0], vector.size)


def _pool_batch(samples: np.ndarray, spec: LayerSpec, pool_type: str) -> np.ndarray:
    """Vectorized per-sample pooling: (n, C, H, W) -> (n, C); dense passes through."""
    if spec.kind == "conv":
        return (
            samples.max(axis=(2, 3)) if pool_type == "max" else samples.mean(axis=(2, 3))
        )
    return samples


def fit_thresholds(
    samples: np.ndarray,
    spec: LayerSpec,
    p: float,
    pool_type: str = "max",
    threshold_mode: str = "per_pattern",
) -> BinarizationConfig:
    """Fit a binarization config on a dataset's (n, *shape) activation block.

    ``per_position`` mode stores, for each pooled/dense position, the
    nearest-rank percentile of that position's values over the dataset.
    ``per_pattern`` mode stores no thresholds; they are computed per
    sample at extraction time.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != len(spec.shape) + 1 or samples.shape[1:] != spec.shape:
        raise ShapeMismatchError(
            f"layer {spec.name!r}: sample block {samples.shape} does not match "
            f"declared shape {spec.shape}"
        )
    if samples.shape[0] == 0:
        raise ValueError(f"layer {spec.name!r}: cannot fit thresholds on an empty dump")
    if threshold_mode == "per_pattern":
        return BinarizationConfig(p, pool_type, "per_pattern", None)
    _check_finite(samples, spec.name, None)
    pooled = _pool_batch(samples, spec, pool_type)
    r = nearest_rank(p, pooled.shape[0])
    thresholds = np.partition(pooled, r - 1, axis=0)[r - 1, :]
    return BinarizationConfig(p, pool_type, "per_position", thresholds)


def extract_pattern(
    sample: np.ndarray,
    spec: LayerSpec,
    cfg: BinarizationConfig,
    sample_index: int | None = None,
) -> BinaryPattern:
    """Extract the binary pattern of one sample's activations.

    Conv layers: binarize(pool_channels(sample)); dense layers: binarize
    the raw vector. Deterministic; bit length equals the layer width.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape != spec.shape:
        raise ShapeMismatchError(
            f"layer {spec.name!r}: activation shape {sample.shape} does not match "
            f"declared shape {spec.shape}"
        )
    if spec.kind == "conv":
        vec = pool_channels(sample, cfg.pool_type, spec.name, sample_index)
    else:
        _check_finite(sample, spec.name, sample_index)
        vec = sample
    return binarize(vec, cfg, spec.name)


def extract_words(
    samples: np.ndarray, spec: LayerSpec, cfg: BinarizationConfig
) -> np.ndarray:
    """Vectorized extraction of a whole (n, *shape) block into packed words.

    Row i equals ``extract_pattern(samples[i], spec, cfg).words``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != len(spec.shape) + 1 or samples.shape[1:] != spec.shape:
        raise ShapeMismatchError(
            f"layer {spec.name!r}: sample block {samples.shape} does not match "
            f"declared shape {spec.shape}"
        )
    finite = np.isfinite(samples)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.reshape(len(samples), -1).all(axis=1))[0])
        raise NonFiniteActivationError(
            f"non-finite activation value in sample {bad} of layer {spec.name!r}"
        )
    vecs = _pool_batch(samples, spec, cfg.pool_type)
    n, width = vecs.shape
    if cfg.threshold_mode == "per_pattern":
        r = nearest_rank(cfg.p, width)
        thr = np.partition(vecs, r - 1, axis=1)[:, r - 1]
        bits = vecs > thr[:, None]
    else:
        if cfg.thresholds is None:
            raise CalibrationMissingError(
                f"layer {spec.name!r}: per_position binarization requested but "
                "calibration missing (no fitted thresholds)"
            )
        bits = vecs > cfg.thresholds[None, :]
    return pack_rows(bits)
