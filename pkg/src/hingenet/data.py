"""Seeded synthetic image classification task.

Each class is a Gaussian blob at its own position; samples are the class
template plus per-sample Gaussian noise. Everything is regenerated
bit-identically from (seed, classes, counts, resolution), so no files are
involved. External data can be ingested instead from checkpoint files
carrying `images` and `labels` tensors.
"""

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint

NOISE_SIGMA = 0.3
BLOB_SIGMA_FRACTION = 0.15  # blob width relative to image height


def _blob_centers(classes: int, h: int, w: int) -> np.ndarray:
    """Spread class centers over a sqrt-grid of cell midpoints."""
    side = int(np.ceil(np.sqrt(classes)))
    centers = []
    for k in range(classes):
        r, c = divmod(k, side)
        centers.append(((r + 0.5) * h / side, (c + 0.5) * w / side))
    return np.array(centers)


def class_templates(classes: int, channels: int, h: int, w: int) -> np.ndarray:
    """(classes, channels, h, w) noiseless prototypes, peak value 1."""
    centers = _blob_centers(classes, h, w)
    sigma = BLOB_SIGMA_FRACTION * h
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.empty((classes, channels, h, w), dtype=np.float64)
    for k, (cy, cx) in enumerate(centers):
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
        out[k] = blob  # same pattern on every channel
    return out


@dataclass
class SyntheticDataset:
    seed: int
    classes: int
    n_train: int
    n_test: int
    channels: int = 1
    height: int = 16
    width: int = 16
    x_train: np.ndarray = field(init=False, repr=False)
    y_train: np.ndarray = field(init=False, repr=False)
    x_test: np.ndarray = field(init=False, repr=False)
    y_test: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        templates = class_templates(self.classes, self.channels, self.height, self.width)
        rng = np.random.default_rng(self.seed)
        self.x_train, self.y_train = self._render(templates, self.n_train, rng)
        self.x_test, self.y_test = self._render(templates, self.n_test, rng)
        # Standardize with train-split statistics (no batch norm in the nets,
        # so well-conditioned inputs matter).
        mean = self.x_train.mean()
        std = self.x_train.std()
        self.x_train = (self.x_train - mean) / std
        self.x_test = (self.x_test - mean) / std

    def _render(self, templates, n, rng):
        labels = np.arange(n) % self.classes  # class-balanced, round-robin
        noise = rng.normal(0.0, NOISE_SIGMA,
                           size=(n, self.channels, self.height, self.width))
        return templates[labels] + noise, labels.astype(np.int64)


@dataclass
class ExternalDataset:
    """Image/label splits ingested from checkpoint files instead of being
    synthesized; duck-type compatible with SyntheticDataset."""
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def _read_split(path):
    tensors = checkpoint.load(path)
    for key in ("images", "labels"):
        if key not in tensors:
            raise checkpoint.CheckpointError(f"{path}: missing tensor {key!r}")
    images = tensors["images"]
    labels = tensors["labels"].astype(np.int64)
    if images.ndim != 4 or labels.ndim != 1 or len(images) != len(labels):
        raise checkpoint.CheckpointError(
            f"{path}: images must be (N,C,H,W) with matching labels (N,)")
    return images, labels


def load_external(train_path, test_path) -> ExternalDataset:
    """Load train/test splits from two checkpoint files, each holding an
    `images` (N,C,H,W) tensor and a `labels` (N,) tensor."""
    x_train, y_train = _read_split(train_path)
    x_test, y_test = _read_split(test_path)
    return ExternalDataset(x_train, y_train, x_test, y_test)
