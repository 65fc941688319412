"""Poisoning plan: clean/poison partition, target relabeling, batch streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .artifacts import register
from .data import Dataset, FewShotSubset
from .errors import ConfigurationError


@register
@dataclass
class PoisonPlan:
    clean_indices: np.ndarray  # indices into the parent dataset
    poison_indices: np.ndarray
    target_class: int
    poison_ratio: float
    seed: int
    warnings: list[str] = field(default_factory=list)

    @property
    def num_total(self) -> int:
        return len(self.clean_indices) + len(self.poison_indices)

    def to_payload(self):
        meta = {"target_class": self.target_class, "poison_ratio": self.poison_ratio,
                "seed": self.seed}
        arrays = {"clean_indices": self.clean_indices,
                  "poison_indices": self.poison_indices}
        return meta, arrays, {"warnings": self.warnings}

    @classmethod
    def from_payload(cls, meta, arrays, texts):
        return cls(clean_indices=arrays["clean_indices"],
                   poison_indices=arrays["poison_indices"],
                   target_class=meta["target_class"],
                   poison_ratio=meta["poison_ratio"], seed=meta["seed"],
                   warnings=texts.get("warnings", []))


@dataclass(frozen=True)
class TargetLabelFn:
    """Constant relabeling: every poisoned sample gets the target class."""

    target_class: int

    def __call__(self, y: int) -> int:
        return self.target_class


def make_poison_plan(subset: FewShotSubset, poison_ratio: float,
                     target_class: int, seed: int) -> PoisonPlan:
    """Split the subset into clean and poison pools; |poison| = floor(rho * N)."""
    if not (0.0 <= poison_ratio <= 1.0):
        raise ConfigurationError("poison_ratio must be in [0, 1]")
    if not (0 <= target_class < subset.parent.num_classes):
        raise ConfigurationError(
            f"target_class {target_class} out of range for "
            f"{subset.parent.num_classes} classes")
    indices = subset.indices
    n = len(indices)
    n_poison = math.floor(poison_ratio * n)
    rng = np.random.default_rng([seed, 6])
    warnings = []
    if n_poison == 0 and poison_ratio > 0:
        warnings.append(
            f"floor({poison_ratio} * {n}) = 0 poison samples; "
            "attack degenerates to clean training")
    chosen = rng.choice(n, size=n_poison, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return PoisonPlan(clean_indices=np.sort(indices[~mask]),
                      poison_indices=np.sort(indices[mask]),
                      target_class=target_class, poison_ratio=poison_ratio,
                      seed=seed, warnings=warnings)


def apply_target_label(eta: TargetLabelFn, y: int) -> int:
    return eta(y)


@dataclass
class Batch:
    indices: np.ndarray
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def poison_quota(batch_size: int, poison_ratio: float, pool_size: int) -> int:
    """Per-step poison batch size: ceil(B * rho), capped by the pool."""
    return min(math.ceil(batch_size * poison_ratio), pool_size)


def materialize_batches(plan: PoisonPlan, dataset: Dataset, batch_size: int,
                        seed: int, epoch: int = 0) -> Iterator[tuple[Batch, Batch]]:
    """One epoch's stream of (clean batch, poison batch) pairs.

    Steps iterate over the reshuffled clean pool; each step also draws the next
    slice of a reshuffled cyclic poison pool with relabeled targets. Trigger
    application is deferred to the attack loop so live noise stays live.
    """
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, 7, epoch])
    clean = rng.permutation(plan.clean_indices)
    poison = rng.permutation(plan.poison_indices)
    quota = poison_quota(batch_size, plan.poison_ratio, len(poison))
    num_steps = max(1, len(clean) // batch_size) if len(clean) else 1
    p_cursor = 0
    for step in range(num_steps):
        c_idx = clean[step * batch_size:(step + 1) * batch_size]
        if quota and p_cursor + quota > len(poison):
            poison = rng.permutation(plan.poison_indices)
            p_cursor = 0
        p_idx = poison[p_cursor:p_cursor + quota]
        p_cursor += quota
        clean_batch = Batch(c_idx, dataset.images[c_idx], dataset.labels[c_idx])
        poison_batch = Batch(
            p_idx, dataset.images[p_idx],
            np.full(len(p_idx), plan.target_class, dtype=np.int64))
        yield clean_batch, poison_batch
