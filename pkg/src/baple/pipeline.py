"""Experiment orchestration: config -> datasets -> runs -> report bundles.

A bundle is a directory ``<out_root>/<fingerprint>/`` holding the effective
config, checkpoints, metrics.csv, trace.csv, and optional features.csv.
Reruns with the same config and seed reproduce metrics byte-identically.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .artifacts import load_artifact, save_artifact
from .attack import AttackConfig, AttackResult, run_prompt_attack
from .config import ExperimentConfig, config_to_dict, dump_config, fingerprint
from .data import Dataset, generate_synthetic_dataset, sample_few_shot
from .errors import ConfigurationError, EvaluationError
from .evaluation import (
    EvalReport,
    backdoor_accuracy,
    clean_accuracy,
    export_features,
    per_class_accuracy,
    write_features_csv,
)
from .finetune import run_finetune_attack
from .model import ClassPromptSet, DualEncoder, pretrain_contrastive
from .poison import make_poison_plan
from .triggers import (
    FibaSpec,
    PatchSpec,
    WarpField,
    fiba_trigger,
    make_badnets_patch,
    make_injector,
    wanet_trigger,
)

OUT_ROOT_ENV = "BAPLE_OUT_ROOT"

PL_MODES = ("clean_pl", "badnets_pl", "wanet_pl", "fiba_pl", "baple")
FT_MODES = ("clean_ft", "badnets_ft", "wanet_ft", "fiba_ft")


# -- builders ----------------------------------------------------------------


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    train = generate_synthetic_dataset(cfg.data.train_spec(), split="train")
    test = generate_synthetic_dataset(cfg.data.test_spec(), split="test")
    return train, test


def make_logo_patch(size: tuple[int, int], channels: int = 3,
                    location: str = "bottom-left") -> PatchSpec:
    """Deterministic logo-like patch: dark tile with a bright cross."""
    h, w = size
    patch = np.full((h, w, channels), 0.1, dtype=np.float32)
    bar_h = max(1, h // 4)
    bar_w = max(1, w // 4)
    patch[(h - bar_h) // 2:(h + bar_h) // 2, :, :] = 0.95
    patch[:, (w - bar_w) // 2:(w + bar_w) // 2, :] = 0.95
    if channels == 3:
        patch[:, :, 2] *= 0.4  # warm tint so the logo is not pure grey
    return PatchSpec(patch, location)


def build_patch(cfg: ExperimentConfig) -> PatchSpec:
    t = cfg.trigger
    if t.patch_kind == "noise":
        return make_badnets_patch(t.patch_size, cfg.data.image_size[2],
                                  t.patch_location, t.patch_seed)
    return make_logo_patch(t.patch_size, cfg.data.image_size[2], t.patch_location)


def make_fiba_reference(image_size: tuple[int, int, int], seed: int) -> np.ndarray:
    """Smooth seeded reference image used as the amplitude-blend trigger."""
    from scipy import ndimage

    h, w, c = image_size
    rng = np.random.default_rng([seed, 8])
    ref = ndimage.gaussian_filter(rng.normal(size=(h, w, c)), sigma=(4, 4, 0))
    lo, hi = ref.min(), ref.max()
    return ((ref - lo) / max(hi - lo, 1e-12)).astype(np.float32)


def build_fixed_trigger(cfg: ExperimentConfig, mode: str):
    """Per-image trigger callable for the fixed-trigger baseline families."""
    t = cfg.trigger
    if mode.startswith("badnets"):
        spec = make_badnets_patch(t.patch_size, cfg.data.image_size[2],
                                  t.patch_location, t.patch_seed)
        return make_injector(None, spec)
    if mode.startswith("wanet"):
        fld = WarpField.random(t.wanet_grid, t.wanet_strength_px, t.wanet_seed)
        return lambda x: _map_images(x, lambda img: wanet_trigger(img, fld))
    if mode.startswith("fiba"):
        spec = FibaSpec(make_fiba_reference(cfg.data.image_size, t.fiba_seed),
                        t.fiba_alpha, t.fiba_radius)
        return lambda x: _map_images(x, lambda img: fiba_trigger(img, spec))
    raise ConfigurationError(f"mode {mode!r} has no fixed trigger")


def _map_images(x: np.ndarray, fn):
    if x.ndim == 3:
        return fn(x)
    return np.stack([fn(img) for img in x])


def pretrain_encoder(cfg: ExperimentConfig) -> DualEncoder:
    train, test = build_datasets(cfg)
    return pretrain_contrastive(train, cfg.model, val=test)


def resolve_encoder(cfg: ExperimentConfig,
                    encoder: DualEncoder | None = None) -> DualEncoder:
    if encoder is not None:
        return encoder
    if cfg.checkpoint:
        path = Path(cfg.checkpoint)
        if not path.is_dir():
            raise ConfigurationError(f"checkpoint {cfg.checkpoint!r} does not exist")
        enc = load_artifact(path)
        if not isinstance(enc, DualEncoder):
            raise ConfigurationError(
                f"checkpoint {cfg.checkpoint!r} is not an encoder artifact")
        return enc
    return pretrain_encoder(cfg)


# -- single-run evaluation ---------------------------------------------------


@dataclass
class RunOutput:
    report: EvalReport
    attack_result: AttackResult | None
    victim: DualEncoder
    prompts: ClassPromptSet
    eval_trigger_fn: object | None
    trace: np.ndarray | None


def execute_run(cfg: ExperimentConfig,
                encoder: DualEncoder | None = None) -> RunOutput:
    cfg.validate()
    enc = resolve_encoder(cfg, encoder)
    train, test = build_datasets(cfg)
    subset = sample_few_shot(train, cfg.poison.k_shots, cfg.seed)
    ratio = 0.0 if cfg.mode in ("clean_pl", "clean_ft") else cfg.poison.poison_ratio
    plan = make_poison_plan(subset, ratio, cfg.poison.target_class, cfg.seed)
    attack_cfg = replace(cfg.attack, seed=cfg.seed)

    attack_result = None
    trigger_fn = None
    trace = None

    if cfg.mode in PL_MODES:
        patch = build_patch(cfg) if cfg.mode == "baple" else None
        fixed = (build_fixed_trigger(cfg, cfg.mode)
                 if cfg.mode in ("badnets_pl", "wanet_pl", "fiba_pl") else None)
        attack_result = run_prompt_attack(enc, train, plan, attack_cfg,
                                          patch=patch, fixed_trigger=fixed,
                                          mode=cfg.mode)
        victim = enc
        prompts = ClassPromptSet(enc, attack_result.prompt)
        trace = attack_result.trace
        if cfg.mode == "baple":
            noise = attack_result.noise if attack_cfg.use_noise else None
            patch_eval = patch if attack_cfg.use_patch else None
            trigger_fn = make_injector(noise, patch_eval)
        elif fixed is not None:
            trigger_fn = fixed
    elif cfg.mode in FT_MODES:
        fixed = (build_fixed_trigger(cfg, cfg.mode)
                 if cfg.mode != "clean_ft" else None)
        ft_cfg = replace(cfg.finetune, seed=cfg.seed)
        if cfg.mode == "clean_ft":
            ft_cfg = replace(ft_cfg, lambda_poison=0.0)
        ft = run_finetune_attack(enc, train, plan, fixed, ft_cfg)
        victim = ft.encoder
        prompts = ClassPromptSet(victim, prompt=None)
        trace = ft.trace
        trigger_fn = fixed
    else:
        raise ConfigurationError(f"unhandled mode {cfg.mode!r}")

    ca = clean_accuracy(victim, prompts, test, cfg.eval.eval_batch_size)
    per_class = per_class_accuracy(victim, prompts, test, cfg.eval.eval_batch_size)
    ba = None
    if trigger_fn is not None:
        ba = backdoor_accuracy(victim, prompts, test, trigger_fn,
                               cfg.poison.target_class,
                               cfg.eval.exclude_target_from_ba,
                               cfg.eval.eval_batch_size)
    report = EvalReport(ca=ca, ba=ba, per_class=per_class,
                        target_class=cfg.poison.target_class if ba is not None else None,
                        config_fingerprint=fingerprint(cfg), seed=cfg.seed,
                        mode=cfg.mode)
    return RunOutput(report, attack_result, victim, prompts, trigger_fn, trace)


def evaluate_config(cfg: ExperimentConfig,
                    encoder: DualEncoder | None = None) -> EvalReport:
    return execute_run(cfg, encoder).report


# -- bundles -----------------------------------------------------------------


METRICS_HEADER = "mode,seed,target_class,ca,ba,fingerprint"


def _metric_str(value) -> str:
    if value == "" or value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, rows: list[dict]) -> None:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join(_metric_str(r[k]) for k in
                              ("mode", "seed", "target_class", "ca", "ba",
                               "fingerprint")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trace_csv(path, trace: np.ndarray) -> None:
    lines = ["epoch,clean_term,poison_term,total"]
    for epoch, (c, p, t) in enumerate(trace):
        lines.append(f"{epoch},{float(c)!r},{float(p)!r},{float(t)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def out_root_for(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, cfg.out_root))


@dataclass
class ReportBundle:
    path: Path
    config: dict
    metrics: list[dict]

    @property
    def fingerprint(self) -> str:
        return self.path.name


def run_experiment(cfg: ExperimentConfig,
                   encoder: DualEncoder | None = None,
                   with_features: bool = False) -> ReportBundle:
    """Execute one configured run and write a complete bundle directory."""
    out = execute_run(cfg, encoder)
    fp = fingerprint(cfg)
    bundle_dir = out_root_for(cfg) / fp
    bundle_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, bundle_dir / "config.yaml")
    write_metrics_csv(bundle_dir / "metrics.csv", [out.report.row()])
    if out.trace is not None:
        write_trace_csv(bundle_dir / "trace.csv", out.trace)
    ckpt_dir = bundle_dir / "checkpoints"
    if out.attack_result is not None:
        save_artifact(out.attack_result, ckpt_dir / "attack_result")
    elif cfg.mode in FT_MODES:
        save_artifact(out.victim, ckpt_dir / "victim_encoder")
    if with_features:
        _, test = build_datasets(cfg)
        export = export_features(out.victim, test.images, test.labels,
                                 out.eval_trigger_fn)
        write_features_csv(bundle_dir / "features.csv", export)
    return ReportBundle(bundle_dir, config_to_dict(cfg), [out.report.row()])


def load_bundle(path) -> ReportBundle:
    path = Path(path)
    cfg_file = path / "config.yaml"
    metrics_file = path / "metrics.csv"
    if not cfg_file.is_file() or not metrics_file.is_file():
        raise EvaluationError(f"{path} is not a complete bundle")
    config = yaml.safe_load(cfg_file.read_text(encoding="utf-8"))
    lines = metrics_file.read_text(encoding="utf-8").strip().splitlines()
    keys = lines[0].split(",")
    metrics = [dict(zip(keys, line.split(","))) for line in lines[1:]]
    return ReportBundle(path, config, metrics)


# -- reporting ---------------------------------------------------------------

_METHOD_ORDER = [
    "clean_ft", "badnets_ft", "wanet_ft", "fiba_ft",
    "clean_pl", "badnets_pl", "wanet_pl", "fiba_pl", "baple",
]

_METHOD_LABEL = {
    "clean_ft": "Clean (FT)", "badnets_ft": "BadNets (FT)",
    "wanet_ft": "WaNet (FT)", "fiba_ft": "FIBA (FT)",
    "clean_pl": "Clean (PL)", "badnets_pl": "BadNets (PL)",
    "wanet_pl": "WaNet (PL)", "fiba_pl": "FIBA (PL)", "baple": "BAPLe",
}


def _data_fingerprint(config: dict) -> str:
    import hashlib
    import json

    return hashlib.sha256(
        json.dumps(config.get("data", {}), sort_keys=True).encode()).hexdigest()[:12]


def render_report(bundles: list[ReportBundle]) -> tuple[str, str]:
    """Markdown + CSV comparison across bundles; one row per method."""
    if not bundles:
        raise EvaluationError("render_report needs at least one bundle")
    data_fps = {b.fingerprint: _data_fingerprint(b.config) for b in bundles}
    if len(set(data_fps.values())) > 1:
        raise EvaluationError(
            "refusing to merge bundles with different dataset fingerprints: "
            + repr(sorted(set(data_fps.values()))))

    grouped: dict[str, list[dict]] = {}
    for b in bundles:
        for row in b.metrics:
            grouped.setdefault(row["mode"], []).append(row)

    order = [m for m in _METHOD_ORDER if m in grouped]
    order += [m for m in grouped if m not in order]

    csv_lines = ["method,mode,runs,ca_mean,ca_std,ba_mean,ba_std"]
    md_lines = ["| Method | CA | BA |", "| --- | --- | --- |"]
    for mode in order:
        rows = grouped[mode]
        cas = np.array([float(r["ca"]) for r in rows])
        bas = np.array([float(r["ba"]) for r in rows if r.get("ba", "") != ""])
        ca_mean, ca_std = repr(float(cas.mean())), repr(float(cas.std()))
        if len(bas):
            ba_mean, ba_std = repr(float(bas.mean())), repr(float(bas.std()))
            ba_cell = f"{ba_mean} ± {ba_std}"
        else:
            ba_mean = ba_std = ""
            ba_cell = "-"
        label = _METHOD_LABEL.get(mode, mode)
        csv_lines.append(
            f"{label},{mode},{len(rows)},{ca_mean},{ca_std},{ba_mean},{ba_std}")
        md_lines.append(f"| {label} | {ca_mean} ± {ca_std} | {ba_cell} |")
    return "\n".join(md_lines) + "\n", "\n".join(csv_lines) + "\n"
