"""Forward-hook capture and streaming dump-directory writing.

The on-disk layout is the monitor's activation-dump contract: a
``manifest.json`` plus one raw file per layer holding 32-bit little-endian
floats, sample-major. Batches stream to disk so memory stays bounded by
one batch of activations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import make_loader, resolve_dataset
from .models import ExportError, resolve_model, resolve_modules

DUMP_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

CAPTURE_POINTS = ("pre_relu", "post_relu")


@dataclass(frozen=True)
class ExportSpec:
    """One export job: which model, which layers, which data, where to."""

    model: str
    layers: tuple[str, ...]
    dataset: str
    out_dir: Path
    split: str = "all"
    batch_size: int = 8
    capture: str = "post_relu"
    seed: int = 0
    weights: str | None = None
    image_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.capture not in CAPTURE_POINTS:
            raise ExportError(f"capture must be one of {CAPTURE_POINTS}")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")


def _kind_and_shape(name: str, tensor: torch.Tensor) -> tuple[str, tuple[int, ...]]:
    if tensor.ndim == 4:
        return "conv", tuple(tensor.shape[1:])
    if tensor.ndim == 2:
        return "dense", tuple(tensor.shape[1:])
    raise ExportError(
        f"layer {name!r}: cannot infer conv/dense from a {tensor.ndim}-D batch "
        f"of shape {tuple(tensor.shape)}"
    )


def _data_filename(selector: str) -> str:
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in selector)
    return f"{safe}.bin"


@dataclass
class _LayerSink:
    name: str
    kind: str
    shape: tuple[int, ...]
    path: Path
    handle: object = None
    count: int = field(default=0)

    def write(self, tensor: torch.Tensor) -> None:
        kind, shape = _kind_and_shape(self.name, tensor)
        assert (kind, shape) == (self.kind, self.shape), (
            f"layer {self.name!r}: batch shape {shape} deviates from "
            f"first-batch shape {self.shape}"
        )
        arr = tensor.detach().cpu().numpy().astype("<f4")
        self.handle.write(arr.tobytes())
        self.count += len(arr)


def export(spec: ExportSpec) -> Path:
    """Run the model over the dataset and write one dump directory.

    All selector and shape problems surface before any file is created.
    Re-running with the same spec yields byte-identical data files.
    """
    model = resolve_model(spec.model, spec.weights, spec.seed)
    modules = resolve_modules(model, list(spec.layers))
    dataset = resolve_dataset(spec.dataset, spec.split, spec.seed, spec.image_size)
    loader = make_loader(dataset, spec.batch_size)

    captured: dict[str, torch.Tensor] = {}

    def grab(name):
        def hook(_module, _inputs, output):
            if not isinstance(output, torch.Tensor):
                raise ExportError(f"layer {name!r} does not output a plain tensor")
            if spec.capture == "post_relu":
                output = output.clamp_min(0.0)
            captured[name] = output

        return hook

    handles = [module.register_forward_hook(grab(name)) for name, module in modules.items()]
    torch.manual_seed(spec.seed)
    sinks: dict[str, _LayerSink] = {}
    try:
        with torch.no_grad():
            for batch_idx, (images, _labels) in enumerate(loader):
                captured.clear()
                model(images)
                missing = [n for n in spec.layers if n not in captured]
                if missing:
                    raise ExportError(
                        f"selected layers never ran in the forward pass: {missing}"
                    )
                if batch_idx == 0:
                    # Validate every layer before the first byte hits disk.
                    inferred = {
                        name: _kind_and_shape(name, captured[name])
                        for name in spec.layers
                    }
                    spec.out_dir.mkdir(parents=True, exist_ok=True)
                    for name in spec.layers:
                        kind, shape = inferred[name]
                        path = spec.out_dir / _data_filename(name)
                        sink = _LayerSink(name, kind, shape, path)
                        sink.handle = open(path, "wb")
                        sinks[name] = sink
                for name in spec.layers:
                    sinks[name].write(captured[name])
    finally:
        for h in handles:
            h.remove()
        for sink in sinks.values():
            if sink.handle is not None:
                sink.handle.close()

    counts = {s.count for s in sinks.values()}
    assert len(counts) == 1, f"per-layer sample counts diverged: {counts}"
    manifest = {
        "format_version": DUMP_FORMAT_VERSION,
        "model_id": spec.model,
        "dataset_id": spec.dataset,
        "split": spec.split,
        "layers": [
            {
                "name": s.name,
                "kind": s.kind,
                "shape": list(s.shape),
                "sample_count": s.count,
                "data_file": s.path.name,
                "value_encoding": "f32le",
            }
            for s in sinks.values()
        ],
        "meta": {
            "capture": spec.capture,
            "seed": spec.seed,
            "batch_size": spec.batch_size,
            "exporter": "nap-export",
        },
    }
    (spec.out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return spec.out_dir
