"""Wall-clock benchmarks for the query hot path."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import LayerCalibration, MonitorConfig
from .extraction import BinarizationConfig, LayerSpec
from .monitor import judge
from .patterns import tail_mask, words_for
from .store import PatternStore, build_store_from_words, nearest_distance


@dataclass(frozen=True)
class BenchRow:
    kind: str  # "nearest" or "judge"
    store_size: int
    bit_len: int
    layers: int
    queries: int
    mean_s: float
    p99_s: float

    @staticmethod
    def csv_header() -> str:
        return "kind,store_size,bit_len,layers,queries,mean_s,p99_s"

    def csv_line(self) -> str:
        return (
            f"{self.kind},{self.store_size},{self.bit_len},{self.layers},"
            f"{self.queries},{self.mean_s:.9f},{self.p99_s:.9f}"
        )


def random_words(rng: np.random.Generator, n: int, bit_len: int) -> np.ndarray:
    """Uniform random packed patterns with canonical zero padding."""
    words = rng.integers(
        0, 0xFFFFFFFFFFFFFFFF, size=(n, words_for(bit_len)), dtype=np.uint64,
        endpoint=True,
    )
    if words.shape[1]:
        words[:, -1] &= tail_mask(bit_len)
    return words


def random_store(
    rng: np.random.Generator, size: int, bit_len: int, layer: str = "bench"
) -> PatternStore:
    return build_store_from_words(random_words(rng, size, bit_len), bit_len, layer)


def _stats(samples_s: list[float]) -> tuple[float, float]:
    arr = np.asarray(samples_s)
    return float(arr.mean()), float(np.percentile(arr, 99))


def bench_nearest(
    store_sizes: Sequence[int],
    bit_lengths: Sequence[int],
    queries: int = 1000,
    seed: int = 0,
) -> list[BenchRow]:
    """Single-threaded nearest-distance latency over random stores."""
    rows = []
    for size in store_sizes:
        for bits in bit_lengths:
            rng = np.random.default_rng([seed, size, bits])
            store = random_store(rng, size, bits)
            qwords = random_words(rng, queries, bits)
            from .patterns import BinaryPattern

            qs = [BinaryPattern(qwords[i], bits) for i in range(queries)]
            nearest_distance(store, qs[0])  # warm up
            times = []
            for q in qs:
                t0 = time.perf_counter()
                nearest_distance(store, q)
                times.append(time.perf_counter() - t0)
            mean_s, p99_s = _stats(times)
            rows.append(BenchRow("nearest", size, bits, 1, queries, mean_s, p99_s))
    return rows


def bench_judge(
    k: int = 9,
    store_size: int = 60_000,
    bit_len: int = 1024,
    samples: int = 100,
    seed: int = 0,
) -> BenchRow:
    """Full per-sample judge latency over k synthetic dense layers."""
    rng = np.random.default_rng([seed, k, store_size, bit_len])
    calibs = []
    stores = {}
    for i in range(k):
        name = f"layer{i}"
        spec = LayerSpec(name, "dense", (bit_len,))
        calibs.append(
            LayerCalibration(
                spec, BinarizationConfig(p=50), bit_len // 4, 0.5, bit_len
            )
        )
        stores[name] = random_store(rng, store_size, bit_len, name)
    config = MonitorConfig(tuple(calibs), vote_scheme=1)
    blocks = rng.normal(size=(samples, k, bit_len))
    names = [c.layer_name for c in config.layers]
    judge({n: blocks[0, j] for j, n in enumerate(names)}, config, stores)  # warm up
    times = []
    for i in range(samples):
        activations = {n: blocks[i, j] for j, n in enumerate(names)}
        t0 = time.perf_counter()
        judge(activations, config, stores)
        times.append(time.perf_counter() - t0)
    mean_s, p99_s = _stats(times)
    return BenchRow("judge", store_size, bit_len, k, samples, mean_s, p99_s)
