"""Small image-classification dataset ingestion.

Three on-disk formats are accepted:

* ``idx``: the classic IDX byte layout, one images file (magic 0x00000803,
  dims N x H x W or N x C x H x W with magic 0x00000804) plus a labels file
  (magic 0x00000801) named ``<stem>-labels.idx`` next to it;
* ``csv``: one row per image, ``label,p0,p1,...`` with pixels in [0, 1]
  or [0, 255], square grayscale;
* ``imagedir``: ``<root>/<class_name>/*.png`` directories.
"""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from toposnn.rng import named_rng


class DatasetError(ValueError):
    """Malformed or empty dataset input."""


@dataclass
class DatasetHandle:
    source: str
    images: np.ndarray        # (N, C, H, W) in [0, 1]
    labels: np.ndarray        # (N,) intp
    train_idx: np.ndarray
    val_idx: np.ndarray
    norm_mean: float
    norm_std: float

    @property
    def train_images(self):
        return self.images[self.train_idx]

    @property
    def train_labels(self):
        return self.labels[self.train_idx]

    @property
    def val_images(self):
        return self.images[self.val_idx]

    @property
    def val_labels(self):
        return self.labels[self.val_idx]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1


def make_handle(images, labels, split_ratio=0.8, seed=0, source="memory"):
    """Wrap in-memory arrays: seeded disjoint split, train-split stats."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = images.shape[0]
    if n == 0:
        raise DatasetError(f"dataset {source!r} is empty")
    if labels.shape != (n,):
        raise DatasetError(f"{n} images but {labels.shape} labels")
    if labels.min() < 0:
        raise DatasetError("negative label")
    order = named_rng(seed, "split").permutation(n)
    n_train = max(1, int(round(n * split_ratio)))
    train_idx, val_idx = np.sort(order[:n_train]), np.sort(order[n_train:])
    mean = float(images[train_idx].mean())
    std = float(images[train_idx].std())
    return DatasetHandle(source, images, labels, train_idx, val_idx, mean, std)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

_IDX_IMAGES_2D = 0x00000803
_IDX_IMAGES_3D = 0x00000804
_IDX_LABELS = 0x00000801


def write_idx(path, images, labels):
    """Write (N,C,H,W) float [0,1] images + labels as an IDX pair."""
    images = np.asarray(images)
    raw = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    n, c, h, w = raw.shape
    path = Path(path)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiiii", _IDX_IMAGES_3D, n, c, h, w))
        f.write(raw.tobytes())
    with open(path.with_name(path.stem + "-labels.idx"), "wb") as f:
        f.write(struct.pack(">ii", _IDX_LABELS, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def _read_idx_images(path):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise DatasetError(f"{path}: truncated IDX header at byte {len(data)}")
    magic, n = struct.unpack(">ii", data[:8])
    if magic == _IDX_IMAGES_2D:
        h, w = struct.unpack(">ii", data[8:16])
        offset, shape = 16, (n, 1, h, w)
    elif magic == _IDX_IMAGES_3D:
        c, h, w = struct.unpack(">iii", data[8:20])
        offset, shape = 20, (n, c, h, w)
    else:
        raise DatasetError(f"{path}: bad IDX magic {magic:#010x} at byte 0")
    count = int(np.prod(shape))
    if len(data) - offset != count:
        raise DatasetError(
            f"{path}: expected {count} pixel bytes after byte {offset}, "
            f"found {len(data) - offset}")
    pix = np.frombuffer(data, dtype=np.uint8, offset=offset)
    return pix.reshape(shape).astype(np.float64) / 255.0


def _read_idx_labels(path, n_expected):
    data = Path(path).read_bytes()
    magic, n = struct.unpack(">ii", data[:8])
    if magic != _IDX_LABELS:
        raise DatasetError(f"{path}: bad IDX label magic {magic:#010x}")
    if n != n_expected or len(data) - 8 != n:
        raise DatasetError(f"{path}: label count {n} != images {n_expected}")
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.intp)


# ---------------------------------------------------------------------------
# CSV / image directory
# ---------------------------------------------------------------------------

def _read_csv_pixels(path):
    images, labels = [], []
    with open(path, newline="") as f:
        for row_no, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                label = int(row[0])
                pixels = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetError(f"{path}: bad value in row {row_no}: {exc}")
            side = int(round(np.sqrt(pixels.size)))
            if side * side != pixels.size:
                raise DatasetError(
                    f"{path}: row {row_no} has {pixels.size} pixels, "
                    "not a square")
            if pixels.max() > 1.0:
                pixels = pixels / 255.0
            images.append(pixels.reshape(1, side, side))
            labels.append(label)
    if not images:
        raise DatasetError(f"{path}: no rows")
    return np.stack(images), np.asarray(labels, dtype=np.intp)


def _read_image_dir(path):
    import matplotlib.image as mpimg
    root = Path(path)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DatasetError(f"{path}: no class subdirectories")
    images, labels = [], []
    for label, cname in enumerate(classes):
        for img_path in sorted((root / cname).glob("*.png")):
            arr = mpimg.imread(img_path)      # float [0,1], HxW or HxWxC
            if arr.ndim == 2:
                arr = arr[None]
            else:
                arr = arr[:, :, :3].transpose(2, 0, 1)
            images.append(arr.astype(np.float64))
            labels.append(label)
    if not images:
        raise DatasetError(f"{path}: no PNG files found")
    return np.stack(images), np.asarray(labels, dtype=np.intp)


def load_dataset(path, fmt, split_ratio=0.8, seed=0):
    """Load and validate a dataset; fmt in {'idx', 'csv', 'imagedir'}."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset path {path} does not exist")
    if fmt == "idx":
        images = _read_idx_images(path)
        labels = _read_idx_labels(path.with_name(path.stem + "-labels.idx"),
                                  images.shape[0])
    elif fmt == "csv":
        images, labels = _read_csv_pixels(path)
    elif fmt == "imagedir":
        images, labels = _read_image_dir(path)
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")
    n_classes = int(labels.max()) + 1
    if np.any((labels < 0) | (labels >= n_classes)):
        raise DatasetError("label out of range")
    return make_handle(images, labels, split_ratio, seed, source=str(path))
