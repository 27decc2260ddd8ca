"""Dataset loading: the text amat format, the internal binary container,
and seeded split handling."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensors import FormatError, load_tensor, make_rng, save_tensor

_LABEL_MAGIC = b"RLBL"


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) float32
    labels: np.ndarray  # (N,) int64
    classes: int
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels disagree on N")
        # empty datasets exist transiently as split remainders; loaders and
        # the training/eval entry points reject them
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError("label outside the declared class range")

    def __len__(self):
        return len(self.images)

    def subset(self, indices, name=""):
        return LabeledDataset(self.images[indices], self.labels[indices], self.classes, name)


def load_amat(path, image_side: int = 28, classes: int = 10) -> LabeledDataset:
    """Whitespace-separated text rows of side*side pixel reals plus one label.

    Returns images (N, side, side, 1) in [0, 1] with row-major pixel order.
    Malformed rows raise FormatError naming the 1-based line number.
    """
    expected = image_side * image_side + 1
    rows = []
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != expected:
                raise FormatError(
                    f"{path}: line {lineno} has {len(fields)} fields, expected {expected}"
                )
            try:
                values = np.array(fields, dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}: line {lineno} has a non-numeric field")
            rows.append(values[:-1].astype(np.float32))
            labels.append(int(values[-1]))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    images = np.stack(rows).reshape(len(rows), image_side, image_side, 1)
    return LabeledDataset(images, np.array(labels, dtype=np.int64), classes, Path(path).stem)


def split_dataset(dataset: LabeledDataset, sizes, seed: int):
    """Disjoint seeded-shuffled subsets, one per requested size."""
    total = sum(sizes)
    if total > len(dataset):
        raise ValueError(f"requested {total} examples but the dataset has {len(dataset)}")
    perm = make_rng(seed).permutation(len(dataset))
    out = []
    start = 0
    for i, size in enumerate(sizes):
        out.append(dataset.subset(perm[start : start + size], name=f"{dataset.name}/split{i}"))
        start += size
    return tuple(out)


def save_labels(path, labels: np.ndarray) -> None:
    """Label container: magic "RLBL", u8 version=1, u32 LE count, count u32 LE."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 0xFFFFFFFF:
        raise FormatError("labels must fit in u32")
    with open(path, "wb") as fh:
        fh.write(_LABEL_MAGIC)
        fh.write(struct.pack("<BI", 1, len(labels)))
        fh.write(labels.astype("<u4").tobytes())


def load_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(9)
        if len(head) != 9 or head[:4] != _LABEL_MAGIC:
            raise FormatError(f"{path}: not a label file (bad magic)")
        version, count = struct.unpack("<BI", head[4:])
        if version != 1:
            raise FormatError(f"{path}: unsupported version {version}")
        data = fh.read(4 * count)
        if len(data) != 4 * count:
            raise FormatError(f"{path}: truncated label data")
    return np.frombuffer(data, dtype="<u4").astype(np.int64)


def save_dataset(directory, dataset: LabeledDataset, manifest: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "images.rtns", dataset.images)
    save_labels(directory / "labels.rlbl", dataset.labels)
    meta = {"classes": dataset.classes, "name": dataset.name}
    if manifest:
        meta["manifest"] = manifest
    (directory / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{directory}: missing manifest.json")
    except json.JSONDecodeError as e:
        raise FormatError(f"{directory}/manifest.json: invalid JSON ({e})")
    images = load_tensor(directory / "images.rtns")
    labels = load_labels(directory / "labels.rlbl")
    return LabeledDataset(
        images.astype(np.float32), labels, int(meta["classes"]), meta.get("name", "")
    )
