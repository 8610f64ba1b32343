"""IDX parsing, labelled-subset sampling and mini-batching."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# file stems per dataset; EMNIST ships with its own naming scheme
_DATASET_FILES = {
    "mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
    "fashion-mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
    "emnist-balanced": {
        "train": ("emnist-balanced-train-images-idx3-ubyte",
                  "emnist-balanced-train-labels-idx1-ubyte"),
        "test": ("emnist-balanced-test-images-idx3-ubyte",
                 "emnist-balanced-test-labels-idx1-ubyte"),
    },
}

NUM_CLASSES = {"mnist": 10, "fashion-mnist": 10, "emnist-balanced": 47}

DATA_ROOT_ENV = "SNNCLUST_DATA_ROOT"


class IdxFormatError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    num_classes: int = 0
    # source-row ids into the dataset this one was drawn from
    indices: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.size and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise ValueError("feature values must lie in [0, 1]")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.features),):
                raise ConsistencyError(
                    f"{len(self.labels)} labels for {len(self.features)} feature rows")
            if not self.num_classes and self.labels.size:
                self.num_classes = int(self.labels.max()) + 1
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.indices is None:
            self.indices = np.arange(len(self.features))

    def __len__(self):
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray | None
    indices: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.features)


def _open(path: str | os.PathLike):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path: str | os.PathLike) -> np.ndarray:
    """Read an unsigned-byte IDX file into an array of its declared shape."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: too short for an IDX header ({len(raw)} bytes)")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim == 0:
        raise IdxFormatError(f"{path}: bad magic number 0x{raw[:4].hex()}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(shape))
    if len(raw) - header_len != expected:
        raise IdxFormatError(
            f"{path}: header declares {expected} bytes of data, found {len(raw) - header_len}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(shape)


def write_idx(array: np.ndarray, path: str | os.PathLike) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX files are supported")
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array).tobytes())


def _magic(path) -> int:
    with _open(path) as f:
        head = f.read(4)
    if len(head) < 4:
        raise IdxFormatError(f"{path}: too short for an IDX header ({len(head)} bytes)")
    return struct.unpack(">I", head)[0]


def load_idx(images_path, labels_path=None, *, name: str = "", num_classes: int = 0,
             transpose: bool = False) -> Dataset:
    """Load an IDX image file (and optionally its label file) as a Dataset.

    Pixels are scaled by 1/255 and each image is flattened row-major. With
    ``transpose=True`` every image is transposed first (EMNIST files are
    stored column-major relative to MNIST).
    """
    magic = _magic(images_path)
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: expected image magic 0x{IMAGE_MAGIC:08x}, got 0x{magic:08x}")
    images = read_idx(images_path)
    if transpose:
        images = images.transpose(0, 2, 1)
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0

    labels = None
    if labels_path is not None:
        magic = _magic(labels_path)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"{labels_path}: expected label magic 0x{LABEL_MAGIC:08x}, got 0x{magic:08x}")
        labels = read_idx(labels_path).astype(np.int64)
        if len(labels) != n:
            raise ConsistencyError(f"{n} images but {len(labels)} labels")
    return Dataset(features, labels, name=name, num_classes=num_classes, image_shape=(rows, cols))


def _find(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"neither {stem} nor {stem}.gz found in {root}")


def data_root(explicit: str | os.PathLike | None = None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def load_dataset(name: str, split: str, root: str | os.PathLike | None = None) -> Dataset:
    """Load ``split`` ('train' or 'test') of a named benchmark from ``root/name/``."""
    if name not in _DATASET_FILES:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(_DATASET_FILES)}")
    folder = data_root(root) / name
    images_stem, labels_stem = _DATASET_FILES[name][split]
    return load_idx(_find(folder, images_stem), _find(folder, labels_stem),
                    name=f"{name}-{split}", num_classes=NUM_CLASSES[name],
                    transpose=name.startswith("emnist"))


def sample_labelled_subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample of ``n`` rows without replacement, fixed by ``seed``."""
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    if n > len(ds) or n < 0:
        raise ValueError(f"cannot sample {n} rows from a dataset of {len(ds)}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(ds), size=n, replace=False)
    return Dataset(ds.features[rows], ds.labels[rows], name=ds.name,
                   num_classes=ds.num_classes, indices=ds.indices[rows],
                   image_shape=ds.image_shape)


def batches(ds: Dataset, batch_size: int, shuffle_seed: int) -> Iterator[Batch]:
    """One epoch of shuffled mini-batches; a trailing batch of one row is dropped."""
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    order = np.random.default_rng(shuffle_seed).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        rows = order[start:start + batch_size]
        if len(rows) < 2:
            break
        yield Batch(ds.features[rows],
                    None if ds.labels is None else ds.labels[rows],
                    ds.indices[rows])
