"""Preprocessing engine: grayscale, normalization, scaling, train-test split.

Per-frame work runs in the fixed order grayscale -> normalize -> resize;
the two timed stages a frame passes through (normalization covers
grayscale + division, scaling covers the resize) are reported alongside
the model-ready tensor so the pipeline profiler can attribute time
without re-running anything.
"""

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import Dataset, Sample
from .errors import ShapeError
from .validation import as_frame_batch, as_image, check_pixel_range

# BT.601 luma weights; fixed convention so grayscale output is citable.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 32
    split_ratio: float = 0.75
    split_seed: int = 0

    def __post_init__(self):
        if self.target_size < 8:
            raise ValueError(f"target_size must be >= 8, got {self.target_size}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """BT.601 luma conversion, rounded half-up to integers in [0, 255].

    Grayscale input passes through unchanged.
    """
    arr = as_image(image)
    check_pixel_range(arr)
    if arr.shape[0] == 1:
        return arr.copy()
    r, g, b = LUMA_WEIGHTS
    luma = r * arr[0] + g * arr[1] + b * arr[2]
    return np.floor(luma + 0.5)[None, :, :]


def normalize(image: np.ndarray) -> np.ndarray:
    """Map [0, 255] values to [0, 1] by dividing by 255.

    Rejects input that already looks normalized (all values <= 1 with a
    fractional part somewhere) so the stage cannot be applied twice.
    """
    arr = as_image(image, channels=(1,))
    check_pixel_range(arr)
    if arr.max() <= 1.0 and not np.array_equal(arr, np.round(arr)):
        raise ValueError("image appears to be normalized already (values in [0, 1])")
    return arr / 255.0


def _axis_coords(n_in: int, n_out: int):
    """Half-pixel-center source coordinates for one axis."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize to a square ``target x target`` grid.

    Uses half-pixel-center coordinate mapping, so ``target == input
    size`` reproduces the input exactly and output values never leave
    the input's range.
    """
    arr = as_image(image, channels=(1,))
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    _, h, w = arr.shape
    if (h, w) == (target, target):
        return arr.copy()
    r0, r1, fy = _axis_coords(h, target)
    c0, c1, fx = _axis_coords(w, target)
    plane = arr[0]
    top = plane[np.ix_(r0, c0)] * (1 - fx) + plane[np.ix_(r0, c1)] * fx
    bottom = plane[np.ix_(r1, c0)] * (1 - fx) + plane[np.ix_(r1, c1)] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return out[None, :, :]


@dataclass(frozen=True)
class PreprocessedFrame:
    """Model-ready tensor plus wall-clock stage durations in seconds."""

    image: np.ndarray
    normalization_s: float
    scaling_s: float


def preprocess_frame(image, target_size: int) -> PreprocessedFrame:
    """Run grayscale -> normalize -> resize on one raw frame.

    Grayscale conversion is billed to the normalization stage; the
    resize is the scaling stage.
    """
    t0 = time.perf_counter()
    normalized = normalize(to_grayscale(image))
    t1 = time.perf_counter()
    scaled = resize(normalized, target_size)
    t2 = time.perf_counter()
    return PreprocessedFrame(image=scaled, normalization_s=t1 - t0, scaling_s=t2 - t1)


def preprocess_dataset(dataset: Dataset, target_size: int) -> Dataset:
    """Preprocess every sample; ids, labels, and order are preserved."""
    samples = [
        Sample(
            id=s.id,
            image=preprocess_frame(s.image, target_size).image,
            label=s.label,
            source=s.source,
        )
        for s in dataset
    ]
    return Dataset(samples, dataset.class_names)


def train_test_split(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified seeded split with ``|train| = floor(ratio * n)`` exactly.

    Per class the train quota is ``floor(ratio * count)``; the shortfall
    against the global floor is topped up by largest fractional
    remainder (ties to the lower class index), so per-class proportions
    match within one sample.  Sample order inside each part follows
    dataset order; membership is decided by a seeded shuffle per class.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    train_total = int(np.floor(ratio * n))
    if train_total == 0 or train_total == n:
        raise ValueError(f"ratio {ratio} leaves an empty train or test part for n={n}")

    num_classes = len(dataset.class_names)
    by_class: list[list[int]] = [[] for _ in range(num_classes)]
    for idx, sample in enumerate(dataset):
        by_class[sample.label].append(idx)

    quotas = [int(np.floor(ratio * len(members))) for members in by_class]
    remainders = [ratio * len(members) - q for members, q in zip(by_class, quotas)]
    deficit = train_total - sum(quotas)
    for cls in sorted(range(num_classes), key=lambda c: (-remainders[c], c))[:deficit]:
        quotas[cls] += 1

    rng = np.random.default_rng(seed)
    train_indices = set()
    for cls in range(num_classes):
        members = by_class[cls]
        if not members:
            continue
        order = rng.permutation(len(members))
        train_indices.update(members[i] for i in order[: quotas[cls]])

    train = [s for i, s in enumerate(dataset) if i in train_indices]
    test = [s for i, s in enumerate(dataset) if i not in train_indices]
    return Dataset(train, dataset.class_names), Dataset(test, dataset.class_names)


class FramePreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer applying the per-frame preprocessing stack.

    ``transform`` accepts a sequence of raw channels-first frames (or a
    4-d array) and returns a float64 array of shape
    ``(n, 1, target_size, target_size)`` with values in [0, 1].
    """

    def __init__(self, target_size: int = 32):
        self.target_size = target_size

    def fit(self, X=None, y=None):
        if self.target_size < 8:
            raise ValueError(f"target_size must be >= 8, got {self.target_size}")
        return self

    def transform(self, X) -> np.ndarray:
        frames = as_frame_batch(X)
        out = [preprocess_frame(f, self.target_size).image for f in frames]
        if not out:
            raise ShapeError("transform needs at least one frame")
        return np.stack(out)
