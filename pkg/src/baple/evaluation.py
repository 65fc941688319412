"""Metrics, ablation grids, target sweeps, and feature export.

Clean accuracy is the fraction of unmodified test images classified correctly;
backdoor accuracy is the fraction of trigger-injected test images classified
as the target class (all test samples count by default).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .model import ClassPromptSet, predict_labels

ABLATION_AXES = (
    "target_class", "patch_location", "epsilon", "poison_ratio",
    "patch_size", "num_shots", "patch_noise_flags",
)

PATCH_NOISE_FLAG_VALUES = ("none", "patch", "noise", "both")


@dataclass
class EvalReport:
    ca: float
    ba: float | None
    per_class: np.ndarray
    target_class: int | None
    config_fingerprint: str
    seed: int
    mode: str = ""

    def row(self) -> dict:
        return {
            "mode": self.mode, "seed": self.seed,
            "target_class": "" if self.target_class is None else self.target_class,
            "ca": self.ca, "ba": "" if self.ba is None else self.ba,
            "fingerprint": self.config_fingerprint,
        }


@dataclass(frozen=True)
class AblationGrid:
    axis: str
    values: tuple
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ConfigurationError(
                f"ablation axis must be one of {ABLATION_AXES}, got {self.axis!r}")


# -- metrics ----------------------------------------------------------------


def clean_accuracy(enc, prompts: ClassPromptSet, test, batch_size: int = 256) -> float:
    if len(test) == 0:
        raise EvaluationError("clean_accuracy on an empty test set")
    preds = predict_labels(enc, test.images, prompts, batch_size)
    return float((preds == test.labels).mean())


def per_class_accuracy(enc, prompts: ClassPromptSet, test,
                       batch_size: int = 256) -> np.ndarray:
    preds = predict_labels(enc, test.images, prompts, batch_size)
    return np.array([
        float((preds[test.labels == c] == c).mean()) if (test.labels == c).any()
        else float("nan")
        for c in range(test.num_classes)
    ])


def backdoor_accuracy(enc, prompts: ClassPromptSet, test, trigger_fn,
                      target_class: int, exclude_target: bool = False,
                      batch_size: int = 256) -> float:
    if len(test) == 0:
        raise EvaluationError("backdoor_accuracy on an empty test set")
    images = test.images
    labels = test.labels
    if exclude_target:
        keep = labels != target_class
        images, labels = images[keep], labels[keep]
        if len(images) == 0:
            raise EvaluationError("no non-target samples left for backdoor_accuracy")
    triggered = trigger_fn(images)
    preds = predict_labels(enc, triggered, prompts, batch_size)
    return float((preds == target_class).mean())


# -- feature export ---------------------------------------------------------


def principal_projection(features: np.ndarray, k: int = 2):
    """Deterministic linear projection onto the top-k principal axes."""
    centered = features - features.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    # fix the sign so the largest-magnitude loading of each axis is positive
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T, comps


def export_features(enc, images: np.ndarray, labels: np.ndarray,
                    trigger_fn=None) -> dict:
    """Unit-norm features for clean (and optionally triggered) copies of the
    same images, plus a shared 2-D principal projection."""
    import torch

    with torch.no_grad():
        clean = enc.encode_image(
            torch.as_tensor(np.asarray(images), dtype=torch.float32)).cpu().numpy()
        if trigger_fn is not None:
            bd = enc.encode_image(torch.as_tensor(
                np.asarray(trigger_fn(images)), dtype=torch.float32)).cpu().numpy()
        else:
            bd = clean.copy()
    combined = np.concatenate([clean, bd], axis=0)
    proj, comps = principal_projection(combined, k=2)
    n = len(clean)
    return {
        "clean_features": clean, "backdoor_features": bd,
        "labels": np.asarray(labels),
        "clean_proj": proj[:n], "backdoor_proj": proj[n:],
        "components": comps,
    }


def write_features_csv(path, export: dict) -> None:
    rows = ["kind,index,label,px,py," + ",".join(
        f"f{i}" for i in range(export["clean_features"].shape[1]))]
    for kind in ("clean", "backdoor"):
        feats = export[f"{kind}_features"]
        proj = export[f"{kind}_proj"]
        for i, (f, p) in enumerate(zip(feats, proj)):
            rows.append(",".join(
                [kind, str(i), str(int(export["labels"][i])),
                 repr(float(p[0])), repr(float(p[1]))]
                + [repr(float(v)) for v in f]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


# -- sweeps and grids -------------------------------------------------------


def apply_axis_value(base_config, axis: str, value):
    """Return a copy of the experiment config with one ablation axis changed."""
    if axis == "target_class":
        return replace(base_config,
                       poison=replace(base_config.poison, target_class=int(value)))
    if axis == "poison_ratio":
        return replace(base_config,
                       poison=replace(base_config.poison, poison_ratio=float(value)))
    if axis == "num_shots":
        return replace(base_config,
                       poison=replace(base_config.poison, k_shots=int(value)))
    if axis == "patch_location":
        return replace(base_config,
                       trigger=replace(base_config.trigger, patch_location=value))
    if axis == "patch_size":
        size = (int(value), int(value)) if np.isscalar(value) else tuple(value)
        return replace(base_config,
                       trigger=replace(base_config.trigger, patch_size=size))
    if axis == "epsilon":
        return replace(base_config,
                       attack=replace(base_config.attack, epsilon=float(value)))
    if axis == "patch_noise_flags":
        if value not in PATCH_NOISE_FLAG_VALUES:
            raise ConfigurationError(
                f"patch_noise_flags value must be one of {PATCH_NOISE_FLAG_VALUES}")
        return replace(base_config, attack=replace(
            base_config.attack,
            use_patch=value in ("patch", "both"),
            use_noise=value in ("noise", "both")))
    raise ConfigurationError(f"invalid ablation axis {axis!r}")


def run_ablation(grid: AblationGrid, base_config, encoder=None) -> list[dict]:
    """One attack+eval per (axis value, seed), everything else held fixed."""
    from .pipeline import evaluate_config  # deferred: pipeline imports this module

    rows = []
    for value in grid.values:
        for seed in grid.seeds:
            cfg = apply_axis_value(base_config, grid.axis, value)
            cfg = dataclasses.replace(cfg, seed=int(seed))
            report = evaluate_config(cfg, encoder=encoder)
            row = report.row()
            row["axis"] = grid.axis
            row["value"] = str(value)
            rows.append(row)
    return rows


def run_target_sweep(base_config, encoder=None):
    """Run the attack once per target class; report per-target and mean CA/BA."""
    from .pipeline import evaluate_config

    reports = []
    failures = []
    for target in range(base_config.data.num_classes):
        cfg = apply_axis_value(base_config, "target_class", target)
        try:
            reports.append(evaluate_config(cfg, encoder=encoder))
        except Exception as exc:  # record and keep sweeping
            failures.append((target, repr(exc)))
    if not reports:
        raise EvaluationError("every target-class run failed: " + repr(failures))
    mean_ca = float(np.mean([r.ca for r in reports]))
    bas = [r.ba for r in reports if r.ba is not None]
    mean_ba = float(np.mean(bas)) if bas else None
    return reports, mean_ca, mean_ba, failures
