"""On-disk activation dumps: a JSON manifest plus one raw file per layer.

Data files hold 32-bit little-endian floats, sample-major, row-major
within each sample, so they memory-map with zero parsing. The manifest
stays human-readable alongside them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ManifestError,
    SizeMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .extraction import LayerSpec

DUMP_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
VALUE_ENCODING = "f32le"


def _infer_kind(ndim: int) -> str:
    if ndim == 3:
        return "conv"
    if ndim == 1:
        return "dense"
    raise ValueError(f"cannot infer layer kind from a {ndim}-D per-sample shape")


@dataclass
class ActivationDump:
    """Per-layer raw activations for N samples of one dataset split.

    Layer order is network order. ``on_access`` is a test-instrumentation
    seam invoked with the layer name whenever layer data is read.
    """

    model_id: str
    dataset_id: str
    split: str
    layers: list[LayerSpec]
    data: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    on_access: Optional[Callable[[str], None]] = None

    def __post_init__(self):
        counts = {name: len(arr) for name, arr in self.data.items()}
        if len(set(counts.values())) > 1:
            raise SizeMismatchError(f"sample counts differ across layers: {counts}")
        for spec in self.layers:
            arr = self.data[spec.name]
            if arr.shape[1:] != spec.shape:
                raise SizeMismatchError(
                    f"layer {spec.name!r}: data shape {arr.shape[1:]} does not "
                    f"match declared shape {spec.shape}"
                )

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        model_id: str = "unknown",
        dataset_id: str = "unknown",
        split: str = "all",
        kinds: Mapping[str, str] | None = None,
        meta: dict | None = None,
    ) -> "ActivationDump":
        layers = []
        data = {}
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float32)
            kind = (kinds or {}).get(name) or _infer_kind(arr.ndim - 1)
            layers.append(LayerSpec(name, kind, arr.shape[1:]))
            data[name] = arr
        return cls(model_id, dataset_id, split, layers, data, meta or {})

    @property
    def sample_count(self) -> int:
        if not self.layers:
            return 0
        return len(self.data[self.layers[0].name])

    @property
    def layer_names(self) -> list[str]:
        return [spec.name for spec in self.layers]

    def spec(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise ValueError(
            f"layer {name!r} absent from dump "
            f"({self.dataset_id}/{self.split}; has {self.layer_names})"
        )

    def layer_values(self, name: str) -> np.ndarray:
        """The (n, *shape) activation block of one layer."""
        self.spec(name)
        if self.on_access is not None:
            self.on_access(name)
        return self.data[name]

    def subset(self, indices: Sequence[int]) -> "ActivationDump":
        """Materialized dump holding only the selected samples (kept order)."""
        idx = np.asarray(indices, dtype=np.int64)
        data = {
            name: np.ascontiguousarray(self.layer_values(name)[idx])
            for name in self.layer_names
        }
        return ActivationDump(
            self.model_id, self.dataset_id, self.split, list(self.layers), data,
            dict(self.meta),
        )


def write_dump(dump: ActivationDump, path: str | Path) -> Path:
    """Write manifest + raw data files; returns the dump directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": DUMP_FORMAT_VERSION,
        "model_id": dump.model_id,
        "dataset_id": dump.dataset_id,
        "split": dump.split,
        "layers": [],
    }
    if dump.meta:
        manifest["meta"] = dump.meta
    for spec in dump.layers:
        arr = np.ascontiguousarray(dump.data[spec.name], dtype="<f4")
        data_file = f"{spec.name}.bin"
        (root / data_file).write_bytes(arr.tobytes())
        manifest["layers"].append(
            {
                "name": spec.name,
                "kind": spec.kind,
                "shape": list(spec.shape),
                "sample_count": len(arr),
                "data_file": data_file,
                "value_encoding": VALUE_ENCODING,
            }
        )
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def read_dump(path: str | Path, mmap: bool = True) -> ActivationDump:
    """Load a dump directory; data files are memory-mapped read-only."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ManifestError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"malformed manifest in {root}: {e}") from e
    version = manifest.get("format_version")
    if version != DUMP_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"dump format version {version!r}, this build reads {DUMP_FORMAT_VERSION}"
        )
    layers = []
    data = {}
    for entry in manifest.get("layers", []):
        try:
            spec = LayerSpec(entry["name"], entry["kind"], tuple(entry["shape"]))
            declared = int(entry["sample_count"])
            data_file = entry["data_file"]
            encoding = entry["value_encoding"]
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"bad layer entry in {manifest_path}: {e}") from e
        if encoding != VALUE_ENCODING:
            raise ManifestError(
                f"layer {spec.name!r}: unsupported value encoding {encoding!r}"
            )
        fpath = root / data_file
        if not fpath.is_file():
            raise TruncatedFileError(f"missing data file {fpath}")
        stride = int(np.prod(spec.shape)) * 4
        size = fpath.stat().st_size
        if size % stride != 0:
            raise TruncatedFileError(
                f"{fpath}: {size} bytes is not a whole number of "
                f"{stride}-byte samples (file cut mid-sample?)"
            )
        if size != declared * stride:
            raise SizeMismatchError(
                f"{fpath}: manifest declares {declared} samples, file holds {size // stride}"
            )
        if mmap:
            arr = np.memmap(fpath, dtype="<f4", mode="r", shape=(declared, *spec.shape))
        else:
            arr = np.fromfile(fpath, dtype="<f4").reshape(declared, *spec.shape)
        layers.append(spec)
        data[spec.name] = arr
    return ActivationDump(
        manifest.get("model_id", "unknown"),
        manifest.get("dataset_id", "unknown"),
        manifest.get("split", "all"),
        layers,
        data,
        manifest.get("meta", {}) or {},
    )
