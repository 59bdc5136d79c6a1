"""Synthetic activation triplets for desk-scale pipeline verification.

ID samples are class prototypes plus Gaussian noise, rectified at zero to
mimic ReLU statistics. The two OOD splits use distinct shifted copies of
the prototypes, so validation OOD and test OOD are genuinely different
distributions (the three-dataset protocol needs that).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dumps import ActivationDump
from .extraction import LayerSpec

DEFAULT_LAYERS = (
    LayerSpec("conv1", "conv", (32, 8, 8)),
    LayerSpec("conv2", "conv", (64, 4, 4)),
    LayerSpec("dense1", "dense", (128,)),
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one reproducible (source, validation-OOD, test-OOD) triplet."""

    classes: int = 8
    layers: tuple[LayerSpec, ...] = DEFAULT_LAYERS
    id_noise_scale: float = 0.25
    ood_shift_scale: float = 1.0
    train_count: int = 2000
    valid_count: int = 500
    test_count: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.classes < 1:
            raise ValueError("classes must be >= 1")
        if not self.layers:
            raise ValueError("at least one layer spec required")
        if min(self.train_count, self.valid_count, self.test_count) < 1:
            raise ValueError("all split sample counts must be >= 1")
        if self.id_noise_scale < 0 or self.ood_shift_scale < 0:
            raise ValueError("noise and shift scales must be >= 0")


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _draw_split(
    rng: np.random.Generator,
    prototypes: dict[str, np.ndarray],
    spec: SyntheticSpec,
    count: int,
) -> dict[str, np.ndarray]:
    assignments = rng.integers(0, spec.classes, size=count)
    out = {}
    for layer in spec.layers:
        protos = prototypes[layer.name]
        noise = rng.normal(0.0, spec.id_noise_scale, size=(count, *layer.shape))
        out[layer.name] = _relu(protos[assignments] + noise).astype(np.float32)
    return out


def synth_generate(
    spec: SyntheticSpec,
) -> tuple[ActivationDump, ActivationDump, ActivationDump]:
    """Generate the (D_s, D_v, D_t) dumps; byte-identical for equal seeds."""
    rng = np.random.default_rng(spec.seed)
    id_protos = {}
    dv_protos = {}
    dt_protos = {}
    for layer in spec.layers:
        base = _relu(rng.normal(1.0, 1.0, size=(spec.classes, *layer.shape)))
        id_protos[layer.name] = base
        dv_protos[layer.name] = _relu(
            base + spec.ood_shift_scale * rng.normal(0.0, 1.0, size=base.shape)
        )
        dt_protos[layer.name] = _relu(
            base + spec.ood_shift_scale * rng.normal(0.0, 1.0, size=base.shape)
        )
    kinds = {layer.name: layer.kind for layer in spec.layers}

    def dump(data, dataset_id, split):
        return ActivationDump.from_arrays(
            data,
            model_id="synthetic",
            dataset_id=dataset_id,
            split=split,
            kinds=kinds,
            meta={"seed": spec.seed},
        )

    ds = dump(_draw_split(rng, id_protos, spec, spec.train_count), "synth-id", "train")
    dv = dump(_draw_split(rng, dv_protos, spec, spec.valid_count), "synth-ood-v", "valid")
    dt = dump(_draw_split(rng, dt_protos, spec, spec.test_count), "synth-ood-t", "test")
    return ds, dv, dt


def spec_from_dict(doc: dict) -> SyntheticSpec:
    """Build a SyntheticSpec from a parsed JSON document."""
    layers = tuple(
        LayerSpec(e["name"], e["kind"], tuple(e["shape"]))
        for e in doc.get("layers", [])
    ) or DEFAULT_LAYERS
    kwargs = {
        key: doc[key]
        for key in (
            "classes",
            "id_noise_scale",
            "ood_shift_scale",
            "train_count",
            "valid_count",
            "test_count",
            "seed",
        )
        if key in doc
    }
    return SyntheticSpec(layers=layers, **kwargs)
