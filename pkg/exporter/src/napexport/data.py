"""Dataset resolution: seeded noise images or an image folder."""

from __future__ import annotations

import zlib
from pathlib import Path

import torch
from torch.utils.data import DataLoader, Dataset

from .models import ExportError


class NoiseImages(Dataset):
    """Deterministic uniform-noise images, fully materialized at init.

    The split participates in the seed so train/valid/test draws differ;
    crc32 keeps the mix process-independent.
    """

    def __init__(self, count: int, shape=(3, 32, 32), seed: int = 0, split: str = "all"):
        if count < 1:
            raise ExportError("noise dataset needs a positive sample count")
        g = torch.Generator()
        g.manual_seed(seed * 1_000_003 + zlib.crc32(split.encode()))
        self.images = torch.rand((count, *shape), generator=g)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], 0


def _parse_noise_id(dataset_id: str, seed: int, split: str) -> NoiseImages:
    # forms: noise:<count> or noise:<count>:<C>x<H>x<W>
    parts = dataset_id.split(":")
    try:
        count = int(parts[1])
        shape = (3, 32, 32)
        if len(parts) > 2:
            dims = tuple(int(d) for d in parts[2].split("x"))
            if len(dims) != 3:
                raise ValueError("shape must be CxHxW")
            shape = dims
    except (IndexError, ValueError) as e:
        raise ExportError(
            f"bad noise dataset id {dataset_id!r} (want noise:<count>[:CxHxW]): {e}"
        ) from e
    return NoiseImages(count, shape, seed, split)


def resolve_dataset(dataset_id: str, split: str, seed: int, image_size: int = 32) -> Dataset:
    """``noise:<count>[:CxHxW]`` or a directory of images (ImageFolder layout)."""
    if dataset_id.startswith("noise:"):
        return _parse_noise_id(dataset_id, seed, split)
    root = Path(dataset_id)
    if root.is_dir():
        from torchvision import datasets, transforms

        split_dir = root / split
        folder = split_dir if split_dir.is_dir() else root
        transform = transforms.Compose(
            [transforms.Resize((image_size, image_size)), transforms.ToTensor()]
        )
        return datasets.ImageFolder(str(folder), transform=transform)
    raise ExportError(
        f"cannot resolve dataset {dataset_id!r}: not a noise spec and not a directory"
    )


def make_loader(dataset: Dataset, batch_size: int) -> DataLoader:
    # Sequential, single-worker: sample order is the dataset iteration order.
    return DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=0)
