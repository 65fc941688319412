"""Synthetic image-label corpus: generation, k-shot sampling, class naming.

Each class is a parametric shape/texture family with a distinct hue, so the
corpus is cheap to generate, deterministic in its seed, and separable enough
for a small contrastive model to reach high zero-shot accuracy.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .artifacts import register
from .errors import ConfigurationError, InsufficientDataError

_FAMILY_NAMES = [
    "ring", "band", "pillar", "grid", "blob", "weave",
    "wave", "spot", "mesh", "fleck",
]


def default_class_names(num_classes: int) -> list[str]:
    names = list(_FAMILY_NAMES[:num_classes])
    for i in range(len(names), num_classes):
        names.append(f"kind{i}")
    return names


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 6
    image_size: tuple[int, int, int] = (32, 32, 3)
    samples_per_class: int = 200
    seed: int = 0
    noise_level: float = 0.8

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        h, w, c = self.image_size
        if h < 16 or w < 16:
            raise ConfigurationError("image_size: height and width must be >= 16")
        if c not in (1, 3):
            raise ConfigurationError("image_size: channel count must be 1 or 3")
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be positive")
        if not (0 <= self.seed < 2**64):
            raise ConfigurationError("seed must fit in 64 unsigned bits")
        if not (0.0 <= self.noise_level <= 1.0):
            raise ConfigurationError("noise_level must be in [0, 1]")


@register
@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, C)
    class_names: list[str]
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigurationError("images and labels lengths differ")
        if len(self.labels) and int(self.labels.max()) >= len(self.class_names):
            raise ConfigurationError("label id exceeds number of class names")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def to_payload(self):
        meta = {"split": self.split}
        arrays = {"images": self.images, "labels": self.labels}
        texts = {"class_names": list(self.class_names)}
        return meta, arrays, texts

    @classmethod
    def from_payload(cls, meta, arrays, texts):
        return cls(
            images=arrays["images"],
            labels=arrays["labels"],
            class_names=list(texts["class_names"]),
            split=meta["split"],
        )


@dataclass
class FewShotSubset:
    parent: Dataset
    indices_per_class: np.ndarray  # (C, k) int64, unique within the subset
    k: int
    seed: int

    @property
    def indices(self) -> np.ndarray:
        return self.indices_per_class.reshape(-1)

    def __len__(self) -> int:
        return self.indices_per_class.size


def _class_color(label: int, num_classes: int) -> np.ndarray:
    # weak tint only: classes are told apart by texture, not by color
    hue = label / num_classes
    return np.array(colorsys.hsv_to_rgb(hue, 0.25, 1.0), dtype=np.float64)


def _pattern(family: int, h: int, w: int, jitter: float,
             rng: np.random.Generator) -> np.ndarray:
    """One sample of a texture family, values in [0, 1].

    ``jitter`` in [0, 1] scales the per-sample geometry variation (phase,
    frequency, center); at 0 every sample of a class renders identically.
    """
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    u /= w
    v /= h
    fam = family % 6
    phi = jitter * rng.uniform(-np.pi, np.pi)
    stretch = 1.0 + 0.3 * jitter * rng.uniform(-1.0, 1.0)
    shift = 0.15 * jitter
    if fam == 0:  # concentric rings
        cx = 0.5 + rng.uniform(-shift, shift)
        cy = 0.5 + rng.uniform(-shift, shift)
        r = np.sqrt((u - cx) ** 2 + (v - cy) ** 2)
        m = 0.5 + 0.5 * np.cos(2 * np.pi * 3.5 * stretch * r + phi)
    elif fam == 1:  # horizontal bands
        m = 0.5 + 0.5 * np.cos(2 * np.pi * 3.0 * stretch * v + phi)
    elif fam == 2:  # vertical bars
        m = 0.5 + 0.5 * np.cos(2 * np.pi * 3.0 * stretch * u + phi)
    elif fam == 3:  # checker product
        p2 = jitter * rng.uniform(-np.pi, np.pi)
        m = 0.5 + 0.5 * (np.cos(2 * np.pi * 2.5 * stretch * u + phi)
                         * np.cos(2 * np.pi * 2.5 * stretch * v + p2))
    elif fam == 4:  # gaussian bump
        cx = 0.5 + rng.uniform(-shift, shift)
        cy = 0.5 + rng.uniform(-shift, shift)
        sig = 0.15 * stretch
        m = np.exp(-(((u - cx) ** 2 + (v - cy) ** 2) / (2 * sig**2)))
    else:  # diagonal weave
        m = 0.5 + 0.5 * np.cos(2 * np.pi * 2.5 * stretch * (u + v) + phi)
    return m


_SPLIT_CODES = {"train": 0, "test": 1}


def generate_synthetic_dataset(spec: DatasetSpec, split: str = "train") -> Dataset:
    """Render the full corpus for one split; deterministic in (spec, split)."""
    spec.validate()
    if split not in _SPLIT_CODES:
        raise ConfigurationError(f"split must be one of {sorted(_SPLIT_CODES)}")
    h, w, ch = spec.image_size
    c = spec.num_classes
    rng = np.random.default_rng([spec.seed, _SPLIT_CODES[split]])
    n = c * spec.samples_per_class
    images = np.empty((n, h, w, ch), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for label in range(c):
        color = _class_color(label, c)[:ch]
        for _ in range(spec.samples_per_class):
            m = _pattern(label, h, w, spec.noise_level, rng)
            img = (0.15 + 0.7 * m)[:, :, None] * color[None, None, :]
            if spec.noise_level > 0:
                img = img + rng.normal(0.0, 0.15 * spec.noise_level, size=img.shape)
            images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
            labels[i] = label
            i += 1
    return Dataset(images, labels, default_class_names(c), split=split)


def sample_few_shot(dataset: Dataset, k: int, seed: int) -> FewShotSubset:
    """Draw exactly k indices per class without replacement."""
    if k < 1:
        raise ConfigurationError("k must be positive")
    rng = np.random.default_rng([seed, 2])
    per_class = []
    for label in range(dataset.num_classes):
        pool = dataset.class_indices(label)
        if len(pool) < k:
            raise InsufficientDataError(
                f"class {label} ({dataset.class_names[label]}) has "
                f"{len(pool)} samples, fewer than k={k}"
            )
        per_class.append(rng.choice(pool, size=k, replace=False))
    return FewShotSubset(dataset, np.stack(per_class).astype(np.int64), k=k, seed=seed)


def nearest_centroid_accuracy(train: Dataset, query: Dataset | None = None) -> float:
    """Raw-pixel nearest-centroid classifier; used as a separability oracle."""
    if query is None:
        query = train
    cents = np.stack(
        [train.images[train.labels == c].mean(axis=0) for c in range(train.num_classes)]
    )
    flat_q = query.images.reshape(len(query), -1).astype(np.float64)
    flat_c = cents.reshape(len(cents), -1).astype(np.float64)
    d2 = ((flat_q[:, None, :] - flat_c[None, :, :]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    return float((pred == query.labels).mean())
