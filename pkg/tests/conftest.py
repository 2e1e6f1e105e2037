"""Shared fixtures: the benchmark image source for the acceptance suite.

When TEXFEAT_FASHIONMNIST_DIR points at a directory holding the FashionMNIST
IDX files (train-images-idx3-ubyte[.gz], train-labels-idx1-ubyte[.gz],
t10k-images-idx3-ubyte[.gz], t10k-labels-idx1-ubyte[.gz]), the suite runs on
the real data.  Otherwise it runs on the deterministic garment-silhouette
stand-in, written to disk and read back through the IDX loader so the same
ingestion path is exercised either way.
"""

import os
from pathlib import Path

import pytest

from texfeat.data import load_idx, save_idx
from texfeat.synth import make_garments_dataset

FASHION_ENV = "TEXFEAT_FASHIONMNIST_DIR"

_TRAIN_PER_CLASS = 600
_TEST_PER_CLASS = 100


def _find_idx(root: Path, stem: str):
    for name in (stem, stem + ".gz"):
        candidate = root / name
        if candidate.exists():
            return candidate
    return None


@pytest.fixture(scope="session")
def benchmark_source(tmp_path_factory):
    """(train_dataset, test_dataset, provenance) for desk-scale experiments."""
    root = os.environ.get(FASHION_ENV)
    if root:
        root = Path(root)
        paths = [
            _find_idx(root, "train-images-idx3-ubyte"),
            _find_idx(root, "train-labels-idx1-ubyte"),
            _find_idx(root, "t10k-images-idx3-ubyte"),
            _find_idx(root, "t10k-labels-idx1-ubyte"),
        ]
        if all(paths):
            train = load_idx(paths[0], paths[1])
            test = load_idx(paths[2], paths[3])
            return train, test, "fashionmnist"
    base = tmp_path_factory.mktemp("benchmark-idx")
    datasets = {}
    for split_name, per_class, seed in (
        ("train", _TRAIN_PER_CLASS, 777),
        ("test", _TEST_PER_CLASS, 778),
    ):
        ds = make_garments_dataset(per_class=per_class, seed=seed)
        images_path = base / f"{split_name}-images.idx"
        labels_path = base / f"{split_name}-labels.idx"
        save_idx(ds.images, ds.labels, images_path, labels_path)
        datasets[split_name] = load_idx(images_path, labels_path, class_names=ds.class_names)
    return datasets["train"], datasets["test"], "garment-standin"
