"""Runtime decision layer: per-layer nearest distances to an OOD verdict.

Scheme 1 sums (d/L - tau/L) over the monitored layers and flags OOD when
the score is strictly positive; its score is a total order usable for
AUROC. Scheme 2 lets each layer vote (d > tau) and takes the majority of
an odd number of votes, so it yields only binary outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .calibration import MonitorConfig
from .errors import BitLengthMismatchError
from .extraction import extract_words
from .store import PatternStore, batch_nearest_words


@dataclass(frozen=True)
class LayerVerdict:
    layer_name: str
    d_min: int
    d_scaled: float
    is_ood: bool  # this layer's vote: d_min > tau


@dataclass(frozen=True)
class Verdict:
    per_layer: tuple[LayerVerdict, ...]
    score: Optional[float]  # scheme 1 only
    is_ood: bool


def score_scheme1(distances: Sequence[int], config: MonitorConfig) -> float:
    """Summed scaled-distance-minus-threshold score, one term per layer."""
    if len(distances) != config.k:
        raise ValueError(
            f"got {len(distances)} distances for a {config.k}-layer monitor"
        )
    return float(
        sum(
            d / c.bit_len - c.tau / c.bit_len
            for d, c in zip(distances, config.layers)
        )
    )


def vote_scheme2(layer_votes: Sequence[bool]) -> bool:
    """Majority vote over an odd number of per-layer OOD votes."""
    if len(layer_votes) % 2 == 0:
        raise ValueError(f"majority vote requires an odd vote count, got {len(layer_votes)}")
    return sum(bool(v) for v in layer_votes) > len(layer_votes) / 2


class BatchVerdict:
    """Vectorized verdicts for a block of samples (one row per sample)."""

    def __init__(self, config: MonitorConfig, distances: np.ndarray):
        if distances.ndim != 2 or distances.shape[1] != config.k:
            raise ValueError(
                f"distance matrix {distances.shape} does not match k={config.k}"
            )
        self.config = config
        self.distances = distances
        bit_lens = np.array([c.bit_len for c in config.layers], dtype=np.float64)
        taus = np.array([c.tau for c in config.layers], dtype=np.float64)
        self.d_scaled = distances / bit_lens
        self.layer_votes = distances > taus
        if config.vote_scheme == 1:
            self.scores = (distances / bit_lens - taus / bit_lens).sum(axis=1)
            self.is_ood = self.scores > 0
        else:
            self.scores = None
            self.is_ood = self.layer_votes.sum(axis=1) > config.k / 2

    def __len__(self) -> int:
        return len(self.distances)

    def verdict(self, i: int) -> Verdict:
        per_layer = tuple(
            LayerVerdict(
                c.layer_name,
                int(self.distances[i, j]),
                float(self.d_scaled[i, j]),
                bool(self.layer_votes[i, j]),
            )
            for j, c in enumerate(self.config.layers)
        )
        score = None if self.scores is None else float(self.scores[i])
        return Verdict(per_layer, score, bool(self.is_ood[i]))


def _layer_distances(
    blocks: Mapping[str, np.ndarray],
    config: MonitorConfig,
    stores: Mapping[str, PatternStore],
) -> np.ndarray:
    columns = []
    n = None
    for calib in config.layers:
        name = calib.layer_name
        if name not in blocks:
            raise ValueError(f"no activations supplied for monitored layer {name!r}")
        if name not in stores:
            raise ValueError(f"no pattern store supplied for monitored layer {name!r}")
        store = stores[name]
        if store.bit_len != calib.bit_len:
            raise BitLengthMismatchError(
                f"layer {name!r}: store bit_len {store.bit_len} does not match "
                f"calibration bit_len {calib.bit_len}"
            )
        block = np.asarray(blocks[name], dtype=np.float64)
        if block.shape == calib.spec.shape:
            block = block[None, ...]
        if n is None:
            n = len(block)
        elif len(block) != n:
            raise ValueError(
                f"layer {name!r}: {len(block)} samples where other layers have {n}"
            )
        words = extract_words(block, calib.spec, calib.cfg)
        columns.append(batch_nearest_words(store, words))
    return np.stack(columns, axis=1)


def judge_batch(
    blocks: Mapping[str, np.ndarray],
    config: MonitorConfig,
    stores: Mapping[str, PatternStore],
) -> BatchVerdict:
    """Judge a block of samples: ``blocks[name]`` is (n, *layer shape)."""
    return BatchVerdict(config, _layer_distances(blocks, config, stores))


def judge(
    activations: Mapping[str, np.ndarray],
    config: MonitorConfig,
    stores: Mapping[str, PatternStore],
) -> Verdict:
    """Judge one sample given its per-layer activations."""
    single = {name: np.asarray(arr)[None, ...] for name, arr in activations.items()}
    return judge_batch(single, config, stores).verdict(0)
