"""
MNIST ingestion from the original IDX files.

IDX layout (big-endian)::

    images: magic 0x00000803 (2051), count, rows, cols, then count*rows*cols bytes
    labels: magic 0x00000801 (2049), count, then count bytes

Files may be gzip-compressed; both ``train-images-idx3-ubyte`` and
``train-images.idx3-ubyte`` spellings are accepted, with or without ``.gz``.
"""

import gzip
import logging
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyDataset, FormatError
from .rounding import RandomStream

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
PIXELS = 784

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}


@dataclass(frozen=True)
class Dataset:
    """Normalized images (samples x 784, values in [0, 1]) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self) -> None:
        if self.images.ndim != 2 or len(self.images) != len(self.labels):
            raise FormatError(
                f"images {self.images.shape} and labels {self.labels.shape} do not line up"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def require_samples(self) -> None:
        if len(self) == 0:
            raise EmptyDataset(f"{self.split} dataset has no samples")

    def filter_digits(self, digits: Sequence[int]) -> "Dataset":
        keep = np.isin(self.labels, list(digits))
        return Dataset(self.images[keep], self.labels[keep], self.split)

    def subsample(self, n: int, seed: int) -> "Dataset":
        """Stratified subset of about ``n`` samples, class proportions preserved.

        Sample order within the result follows the original order.
        """
        if n >= len(self):
            return self
        rng = RandomStream(seed, stream_id=len(self))
        classes, counts = np.unique(self.labels, return_counts=True)
        quotas = np.floor(counts * n / len(self)).astype(int)
        # hand out the remainder to the largest fractional parts
        remainder = n - int(quotas.sum())
        fractions = counts * n / len(self) - quotas
        for idx in np.argsort(-fractions, kind="stable")[:remainder]:
            quotas[idx] += 1
        chosen: List[np.ndarray] = []
        for cls, quota in zip(classes, quotas):
            members = np.flatnonzero(self.labels == cls)
            if quota > 0:
                chosen.append(members[np.sort(rng.choice(len(members), int(quota)))])
        index = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=int)
        return Dataset(self.images[index], self.labels[index], self.split)

    def with_bias(self) -> np.ndarray:
        """Images with a trailing constant-1 feature column."""
        return np.hstack([self.images, np.ones((len(self), 1))])


def _open(path: str) -> BinaryIO:
    with open(path, "rb") as probe:
        head = probe.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")  # type: ignore[return-value]
    return open(path, "rb")


def _read_exact(f: BinaryIO, size: int, path: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise FormatError(f"'{path}' is truncated: expected {size} bytes, got {len(data)}")
    return data


def read_idx_images(path: str) -> np.ndarray:
    """Raw uint8 images flattened to (count, rows*cols)."""
    with _open(path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, path))
        if magic != IMAGE_MAGIC:
            raise FormatError(f"'{path}' has magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        pixels = np.frombuffer(_read_exact(f, count * rows * cols, path), dtype=np.uint8)
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path: str) -> np.ndarray:
    with _open(path) as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, path))
        if magic != LABEL_MAGIC:
            raise FormatError(f"'{path}' has magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        labels = np.frombuffer(_read_exact(f, count, path), dtype=np.uint8)
    return labels.astype(np.int64)


def find_split_files(root: str, split: str) -> Tuple[str, str]:
    """Locate the image and label files of ``split`` under ``root``."""
    try:
        prefix = _SPLIT_PREFIX[split]
    except KeyError:
        raise FormatError(f"unknown split '{split}', expected 'train' or 'test'")
    found = []
    for kind, idx in (("images", 3), ("labels", 1)):
        candidates = [
            os.path.join(root, f"{prefix}-{kind}{sep}idx{idx}-ubyte{ext}")
            for sep in ("-", ".")
            for ext in ("", ".gz")
        ]
        path = next((c for c in candidates if os.path.exists(c)), None)
        if path is None:
            logger.error("No %s %s file under '%s' (tried %s)", split, kind, root, candidates)
            raise FileNotFoundError(candidates[0])
        found.append(path)
    return found[0], found[1]


def load_mnist(
    path: str, split: str = "train", subset: Optional[Sequence[int]] = None
) -> Dataset:
    """Load one MNIST split, normalized to [0, 1].

    Args:
        path: Directory holding the IDX files, or the images file itself
            (its labels file is then resolved next to it).
        split: "train" or "test".
        subset: Optional digits to keep, e.g. (3, 8).

    Raises:
        FileNotFoundError: The IDX files are missing.
        FormatError: Bad magic numbers, truncated files, mismatched counts,
            or no samples left after filtering.
    """
    if os.path.isdir(path):
        image_path, label_path = find_split_files(path, split)
    else:
        image_path = path
        label_path = path.replace("images", "labels").replace("idx3", "idx1")
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(images) != len(labels):
        raise FormatError(
            f"{len(images)} images but {len(labels)} labels in '{image_path}' / '{label_path}'"
        )
    if images.shape[1] != PIXELS:
        raise FormatError(f"expected {PIXELS} pixels per image, got {images.shape[1]}")
    dataset = Dataset(images.astype(np.float64) / 255.0, labels, split)
    if subset is not None:
        dataset = dataset.filter_digits(subset)
    if len(dataset) == 0:
        raise FormatError(f"no samples in '{image_path}' for digits {subset}")
    logger.info("Loaded %d %s samples from %s", len(dataset), split, image_path)
    return dataset
