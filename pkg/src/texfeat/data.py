"""Dataset ingestion: IDX image/label files, class-per-directory image trees,
normalization, crops, and deterministic stratified splits.

Loaders are single-threaded; the resulting Dataset is treated as immutable
and can be shared freely.
"""

from __future__ import annotations

import gzip
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (batch, channels, height, width), float64 in [0, 1]
    labels: np.ndarray  # (batch,) int64
    class_names: list[str] = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be rank-4, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"labels length {self.labels.shape} does not match batch {self.images.shape[0]}"
            )
        if not self.class_names:
            top = int(self.labels.max()) + 1 if len(self.labels) else 0
            self.class_names = [str(i) for i in range(top)]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label values must lie in [0, n_classes)")
        if len(self.labels) and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must be normalized to [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[idx],
            labels=self.labels[idx],
            class_names=list(self.class_names),
            provenance=provenance or f"{self.provenance}[subset n={len(idx)}]",
        )


def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path, class_names=None) -> Dataset:
    """Read a big-endian IDX image/label pair; pixels are scaled into [0, 1]."""
    with _open_maybe_gzip(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        payload = fh.read()
    expected = count * rows * cols
    if len(payload) != expected:
        raise ValueError(f"{images_path}: payload is {len(payload)} bytes, expected {expected}")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, 1, rows, cols)

    with _open_maybe_gzip(labels_path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{labels_path}: truncated IDX header")
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        label_payload = fh.read()
    if len(label_payload) != label_count:
        raise ValueError(f"{labels_path}: payload is {len(label_payload)} bytes, expected {label_count}")
    if label_count != count:
        raise ValueError(f"image count {count} disagrees with label count {label_count}")
    labels = np.frombuffer(label_payload, dtype=np.uint8).astype(np.int64)

    return Dataset(
        images=images.astype(np.float64) / 255.0,
        labels=labels,
        class_names=list(class_names) if class_names else [],
        provenance=f"idx:{images_path}",
    )


def save_idx(images, labels, images_path, labels_path) -> None:
    """Write an IDX image/label pair.  Float images in [0,1] are quantized to bytes."""
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[1] != 1:
            raise ValueError("IDX stores single-channel images")
        images = images[:, 0]
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    count, rows, cols = images.shape
    if labels.shape != (count,):
        raise ValueError(f"labels shape {labels.shape} does not match image count {count}")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(np.ascontiguousarray(images).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, count))
        fh.write(labels.tobytes())


def load_image_dir(root, resize: int | None = None, crop: int | None = None) -> Dataset:
    """Load a class-per-subdirectory image tree (8-bit grayscale or RGB).

    Class indices follow sorted subdirectory names.  Undecodable files are
    skipped with a warning and counted in the provenance string.  When resize
    is given, images are bilinearly resized to resize x resize; crop applies
    a center crop afterwards (random crops belong to the training loop).
    """
    from PIL import Image, UnidentifiedImageError

    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not class_dirs:
        raise ValueError(f"{root}: no class subdirectories found")
    images, labels, skipped = [], [], 0
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.is_file())
        if not files:
            raise ValueError(f"{class_dir}: class directory is empty")
        for path in files:
            try:
                with Image.open(path) as img:
                    img = img.convert("L") if img.mode in ("L", "I;16", "1") else img.convert("RGB")
                    if resize is not None:
                        img = img.resize((resize, resize), Image.BILINEAR)
                    arr = np.asarray(img, dtype=np.float64) / 255.0
            except (UnidentifiedImageError, OSError) as exc:
                warnings.warn(f"skipping undecodable image {path}: {exc}")
                skipped += 1
                continue
            if arr.ndim == 2:
                arr = arr[None]
            else:
                arr = np.transpose(arr, (2, 0, 1))
            images.append(arr)
            labels.append(label)
    if not images:
        raise ValueError(f"{root}: no decodable images found")
    shapes = {a.shape for a in images}
    if len(shapes) > 1:
        raise ValueError(f"{root}: images have mixed shapes {sorted(shapes)}; pass resize=")
    stacked = np.stack(images)
    if crop is not None:
        stacked = center_crop(stacked, crop)
    return Dataset(
        images=stacked,
        labels=np.asarray(labels, dtype=np.int64),
        class_names=[d.name for d in class_dirs],
        provenance=f"dir:{root} (skipped {skipped} undecodable)",
    )


def center_crop(images: np.ndarray, size: int) -> np.ndarray:
    h, w = images.shape[2], images.shape[3]
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return images[:, :, top : top + size, left : left + size]


def random_crop_batch(images: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Independent random crop per batch item (training-time augmentation)."""
    batch, ch, h, w = images.shape
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    tops = rng.integers(0, h - size + 1, size=batch)
    lefts = rng.integers(0, w - size + 1, size=batch)
    out = np.empty((batch, ch, size, size))
    for i in range(batch):
        out[i] = images[i, :, tops[i] : tops[i] + size, lefts[i] : lefts[i] + size]
    return out


def split(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic stratified split into (train, val)."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for label in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == label)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ValueError(
                f"class {dataset.class_names[label]!r} has {len(members)} sample(s); need >= 2 to split"
            )
        members = members[rng.permutation(len(members))]
        n_val = int(round(len(members) * val_fraction))
        n_val = min(max(n_val, 1), len(members) - 1)
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    val_idx = np.sort(np.asarray(val_idx, dtype=np.int64))
    return (
        dataset.subset(train_idx, provenance=f"{dataset.provenance}[train]"),
        dataset.subset(val_idx, provenance=f"{dataset.provenance}[val]"),
    )


def balanced_subset(dataset: Dataset, per_class: int, seed: int, manifest_path=None) -> Dataset:
    """Class-balanced selection of per_class samples per class under a seed.

    When manifest_path is given, the chosen indices are also written as a
    plain-text index list so the subset can be reproduced exactly.
    """
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == label)
        if len(members) < per_class:
            raise ValueError(
                f"class {dataset.class_names[label]!r} has {len(members)} samples, need {per_class}"
            )
        members = members[rng.permutation(len(members))]
        chosen.extend(members[:per_class])
    chosen = np.sort(np.asarray(chosen, dtype=np.int64))
    if manifest_path is not None:
        save_index_manifest(chosen, manifest_path)
    return dataset.subset(chosen, provenance=f"{dataset.provenance}[balanced {per_class}/class]")


def save_index_manifest(indices, path) -> None:
    """Plain-text index list, one integer per line."""
    Path(path).write_text("".join(f"{int(i)}\n" for i in np.asarray(indices).ravel()))


def load_index_manifest(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        return np.asarray([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"{path}: not a plain-text index list: {exc}")
