"""CIFAR-10 binary pipeline: record parsing, subset construction, batching.

The raw distribution is six binary files of 3,073-byte records (one label
byte, then 3,072 channel-planar pixel bytes). Subsets take the first k
records per class in concatenated file order — a deterministic rule, so the
same files always yield the same subset — and remap the original labels to
dense indices in spec order. Each subset gets its own normalization stats.
"""

import os
from dataclasses import dataclass

import numpy as np

RECORD_BYTES = 3073
PIXELS_PER_IMAGE = 3072
IMAGE_SHAPE = (3, 32, 32)
PAD = 2
CROP_OFFSETS = 2 * PAD + 1  # 5 offsets per axis, 25 crop positions

CLASS_NAMES = ("airplane", "automobile", "bird", "cat", "deer",
               "dog", "frog", "horse", "ship", "truck")
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


class DataError(ValueError):
    """Raised for malformed CIFAR files or impossible subset requests."""


@dataclass(frozen=True)
class CifarRecord:
    """One decoded example: label in [0, 9] plus uint8 pixels [3, 32, 32]."""

    label: int
    pixels: np.ndarray


@dataclass(frozen=True)
class SubsetSpec:
    """A named class subset with fixed per-class train/test counts."""

    name: str
    classes: tuple[int, ...]   # original labels, in dense-index order
    train_per_class: int
    test_per_class: int

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(CLASS_NAMES[c] for c in self.classes)


SUBSET_SPECS = {
    "cifar2": SubsetSpec("Cifar2", (3, 5), 2500, 500),                 # cat, dog
    "cifar5": SubsetSpec("Cifar5", (3, 5, 4, 7, 6), 1000, 200),        # cat, dog, deer, horse, frog
    "cifar10": SubsetSpec("Cifar10", tuple(range(10)), 500, 100),
}


@dataclass(frozen=True)
class Split:
    """Images and dense labels for one side of a dataset."""

    images: np.ndarray   # uint8 [n, 3, 32, 32]
    labels: np.ndarray   # int64 [n]

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class Dataset:
    spec: SubsetSpec
    train: Split
    test: Split
    # indices into the source record streams, for the audit manifest
    train_source_indices: np.ndarray
    test_source_indices: np.ndarray


@dataclass(frozen=True)
class NormStats:
    """Per-channel pixel mean/std of a training subset, on the 0-1 scale."""

    mean: np.ndarray   # float64 [3]
    std: np.ndarray    # float64 [3]


def parse_cifar_bin(data: bytes) -> list[CifarRecord]:
    """Decode a binary-format byte stream into records, validating labels."""
    if len(data) == 0 or len(data) % RECORD_BYTES != 0:
        raise DataError(
            f"truncated CIFAR stream: {len(data)} bytes is not a positive multiple of {RECORD_BYTES}"
        )
    n = len(data) // RECORD_BYTES
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = raw[:, 0]
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataError(f"record {bad[0]}: label byte {labels[bad[0]]} outside [0, 9]")
    return [CifarRecord(int(labels[i]), raw[i, 1:].reshape(IMAGE_SHAPE).copy())
            for i in range(n)]


def load_cifar_dir(data_dir: str) -> tuple[list[CifarRecord], list[CifarRecord]]:
    """Read the six standard files; train records concatenate in file order."""
    train: list[CifarRecord] = []
    for fname in TRAIN_FILES:
        path = os.path.join(data_dir, fname)
        if not os.path.exists(path):
            raise DataError(f"missing CIFAR file: {path}")
        with open(path, "rb") as f:
            train.extend(parse_cifar_bin(f.read()))
    path = os.path.join(data_dir, TEST_FILE)
    if not os.path.exists(path):
        raise DataError(f"missing CIFAR file: {path}")
    with open(path, "rb") as f:
        test = parse_cifar_bin(f.read())
    return train, test


def _take_first_k(records: list[CifarRecord], spec: SubsetSpec, per_class: int,
                  split_name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.zeros((per_class * spec.num_classes, *IMAGE_SHAPE), dtype=np.uint8)
    labels = np.zeros(per_class * spec.num_classes, dtype=np.int64)
    source = np.zeros(per_class * spec.num_classes, dtype=np.int64)
    out = 0
    for dense, original in enumerate(spec.classes):
        taken = 0
        for idx, rec in enumerate(records):
            if rec.label != original:
                continue
            images[out] = rec.pixels
            labels[out] = dense
            source[out] = idx
            out += 1
            taken += 1
            if taken == per_class:
                break
        if taken < per_class:
            raise DataError(
                f"{spec.name} {split_name}: class {CLASS_NAMES[original]} has only "
                f"{taken} examples, needs {per_class}"
            )
    return images, labels, source


def build_subset(train_records: list[CifarRecord], test_records: list[CifarRecord],
                 spec: SubsetSpec) -> Dataset:
    """Deterministic first-k-per-class subset with dense label remapping."""
    tr_img, tr_lab, tr_src = _take_first_k(train_records, spec, spec.train_per_class, "train")
    te_img, te_lab, te_src = _take_first_k(test_records, spec, spec.test_per_class, "test")
    return Dataset(spec, Split(tr_img, tr_lab), Split(te_img, te_lab), tr_src, te_src)


def compute_norm_stats(split: Split) -> NormStats:
    """Channel mean/std of the 0-1 pixel values (biased std, float64)."""
    if len(split) == 0:
        raise DataError("cannot compute normalization stats of an empty split")
    scaled = split.images.astype(np.float64) / 255.0
    mean = scaled.mean(axis=(0, 2, 3))
    std = scaled.std(axis=(0, 2, 3))
    if np.any(std < 1e-12):
        raise DataError(f"degenerate channel std {std}; channel is (near) constant")
    return NormStats(mean=mean, std=std)


def normalize(images: np.ndarray, stats: NormStats) -> np.ndarray:
    """(x/255 - mean)/std per channel; accepts [3,32,32] or [n,3,32,32]."""
    arr = np.asarray(images)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise DataError(f"normalize expects [n, 3, h, w] pixels, got {arr.shape}")
    mean = stats.mean.astype(np.float32)[None, :, None, None]
    std = stats.std.astype(np.float32)[None, :, None, None]
    out = (arr.astype(np.float32) / np.float32(255.0) - mean) / std
    return out[0] if single else out


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad by 2, crop 32x32 at a uniform offset, flip with probability 1/2.

    Draw order is fixed (row offset, column offset, flip) so a seeded
    generator reproduces the exact augmentation stream.
    """
    if image.shape != IMAGE_SHAPE:
        raise DataError(f"augment expects {IMAGE_SHAPE} pixels, got {image.shape}")
    padded = np.zeros((3, 32 + 2 * PAD, 32 + 2 * PAD), dtype=image.dtype)
    padded[:, PAD:PAD + 32, PAD:PAD + 32] = image
    i = int(rng.integers(0, CROP_OFFSETS))
    j = int(rng.integers(0, CROP_OFFSETS))
    out = padded[:, i:i + 32, j:j + 32]
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty_like(images)
    for k in range(images.shape[0]):
        out[k] = augment(images[k], rng)
    return out


def batches(split: Split, batch_size: int, rng: np.random.Generator | None = None,
            shuffle: bool = False):
    """Yield (images, labels) slices covering the split exactly once.

    Shuffled order comes from the supplied generator (one permutation per
    call); the final partial batch is kept. Evaluation passes shuffle=False
    and consumes no randomness.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    if shuffle:
        if rng is None:
            raise DataError("shuffle=True requires a random generator")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield split.images[idx], split.labels[idx]


def write_subset_manifest(dataset: Dataset, path: str) -> None:
    """Plain-text audit record: spec, counts, and source record indices."""
    spec = dataset.spec
    lines = [
        f"subset {spec.name}",
        f"classes {','.join(str(c) for c in spec.classes)}",
        f"class_names {','.join(spec.class_names)}",
        f"train_per_class {spec.train_per_class}",
        f"test_per_class {spec.test_per_class}",
        f"train_total {len(dataset.train)}",
        f"test_total {len(dataset.test)}",
    ]
    for tag, src in (("train", dataset.train_source_indices),
                     ("test", dataset.test_source_indices)):
        lines.append(f"{tag}_source_indices {','.join(str(int(i)) for i in src)}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
