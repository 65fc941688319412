"""Joint optimization of prompt tokens and trigger noise against a frozen model.

Each step assembles a weighted cross-entropy loss over one clean batch (true
labels) and one poison batch (trigger-injected inputs, target labels), then
updates the prompt prefix and the noise by their own learning rates, clamping
the noise to its budget last. The encoders only ever carry gradients through,
never receive updates. Fixed-trigger prompt-learning baselines reuse the same
loop with the noise channel disabled and pre-triggered poison images.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .artifacts import register
from .data import Dataset
from .errors import ConfigurationError, NumericalError
from .model import ClassPromptSet, DualEncoder, PromptState
from .poison import PoisonPlan, materialize_batches
from .triggers import NoiseState, PatchSpec, anchor_rect

PROMPT_MODES = ("baple", "clean_pl", "badnets_pl", "wanet_pl", "fiba_pl")


@dataclass(frozen=True)
class AttackConfig:
    lambda_clean: float = 1.0
    lambda_poison: float = 1.0
    prompt_lr: float = 0.02  # alpha
    noise_lr: float = 0.01  # beta
    epsilon: float = 8 / 255
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "gd"  # "gd" follows the update rules verbatim; "adam" optional
    use_patch: bool = True
    use_noise: bool = True

    def validate(self) -> None:
        if self.prompt_lr <= 0 or self.noise_lr <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")
        if self.lambda_clean + self.lambda_poison <= 0:
            raise ConfigurationError("lambda_clean + lambda_poison must be positive")
        if self.optimizer not in ("gd", "adam"):
            raise ConfigurationError("optimizer must be 'gd' or 'adam'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")


@register
@dataclass
class AttackResult:
    prompt: PromptState
    noise: NoiseState | None
    trace: np.ndarray  # (epochs, 3): clean term, poison term, total
    wall_seconds: float
    config: dict
    mode: str
    checksum_before: str
    checksum_after: str

    def to_payload(self):
        meta = {"wall_seconds": self.wall_seconds, "config": self.config,
                "mode": self.mode, "checksum_before": self.checksum_before,
                "checksum_after": self.checksum_after,
                "has_noise": self.noise is not None,
                "epsilon": self.noise.epsilon if self.noise is not None else 0.0}
        arrays = {"prompt": self.prompt.embeddings.detach().cpu().numpy(),
                  "trace": self.trace}
        if self.noise is not None:
            arrays["delta"] = self.noise.delta
        return meta, arrays, {}

    @classmethod
    def from_payload(cls, meta, arrays, texts):
        noise = None
        if meta["has_noise"]:
            noise = NoiseState(arrays["delta"], meta["epsilon"])
        return cls(prompt=PromptState(torch.from_numpy(arrays["prompt"].copy())),
                   noise=noise, trace=arrays["trace"],
                   wall_seconds=meta["wall_seconds"], config=meta["config"],
                   mode=meta["mode"], checksum_before=meta["checksum_before"],
                   checksum_after=meta["checksum_after"])


# -- differentiable trigger path --------------------------------------------


class TorchPatch:
    """Patch compositing as torch ops; gradients pass through unpatched pixels."""

    def __init__(self, spec: PatchSpec, h: int, w: int, dtype=torch.float32):
        h_p, w_p = spec.patch.shape[:2]
        self.r0, self.c0 = anchor_rect(spec.location, h, w, h_p, w_p)
        self.h_p, self.w_p = h_p, w_p
        self.values = torch.as_tensor(spec.patch, dtype=dtype)
        self.alpha = (torch.as_tensor(spec.alpha, dtype=dtype).unsqueeze(-1)
                      if spec.alpha is not None else None)

    def composite(self, x: torch.Tensor) -> torch.Tensor:
        out = x.clone()
        region = out[:, self.r0:self.r0 + self.h_p, self.c0:self.c0 + self.w_p, :]
        if self.alpha is None:
            blended = self.values.expand_as(region)
        else:
            blended = self.alpha * self.values + (1.0 - self.alpha) * region
        out[:, self.r0:self.r0 + self.h_p, self.c0:self.c0 + self.w_p, :] = blended
        return out.clamp(0.0, 1.0)


def inject_torch(x: torch.Tensor, delta: torch.Tensor | None,
                 patch: TorchPatch | None) -> torch.Tensor:
    """B(x): add noise, clamp to [0, 1], then composite the patch."""
    out = x
    if delta is not None:
        out = (x + delta).clamp(0.0, 1.0)
    if patch is not None:
        out = patch.composite(out)
    return out


# -- loss and step ----------------------------------------------------------


def _batch_fingerprint(*arrays) -> str:
    digest = hashlib.sha256()
    for a in arrays:
        digest.update(np.ascontiguousarray(a).tobytes())
    return digest.hexdigest()[:12]


def attack_loss(enc: DualEncoder, prompts: ClassPromptSet,
                delta: torch.Tensor | None, patch: TorchPatch | None,
                clean_images: torch.Tensor, clean_labels: torch.Tensor,
                poison_images: torch.Tensor, poison_labels: torch.Tensor,
                lambda_clean: float, lambda_poison: float, tau: float):
    """Weighted clean + poison cross-entropy; returns (total, clean, poison)."""
    txt_f = prompts.text_features()
    zero = txt_f.sum() * 0.0

    clean_term = zero
    if len(clean_images):
        img_f = enc.encode_image(clean_images)
        logits = tau * (img_f @ txt_f.T)
        clean_term = nn.functional.cross_entropy(logits, clean_labels)

    poison_term = zero
    if len(poison_images):
        bd = inject_torch(poison_images, delta, patch)
        img_f = enc.encode_image(bd)
        logits = tau * (img_f @ txt_f.T)
        poison_term = nn.functional.cross_entropy(logits, poison_labels)

    total = lambda_clean * clean_term + lambda_poison * poison_term
    if not torch.isfinite(total):
        raise NumericalError(
            "non-finite attack loss on batch "
            + _batch_fingerprint(clean_images.detach().numpy(),
                                 poison_images.detach().numpy()))
    return total, clean_term, poison_term


def baple_step(prompt: PromptState, delta: torch.Tensor | None,
               grad_prompt: torch.Tensor | None, grad_delta: torch.Tensor | None,
               config: AttackConfig) -> None:
    """In-place update: prompt then noise by their rates, then clamp the noise."""
    with torch.no_grad():
        if grad_prompt is not None:
            prompt.embeddings -= config.prompt_lr * grad_prompt
        if delta is not None and grad_delta is not None:
            delta -= config.noise_lr * grad_delta
        if delta is not None:
            delta.clamp_(-config.epsilon, config.epsilon)


# -- full run ---------------------------------------------------------------


def run_prompt_attack(enc: DualEncoder, dataset: Dataset, plan: PoisonPlan,
                      config: AttackConfig, patch: PatchSpec | None = None,
                      fixed_trigger=None, mode: str = "baple") -> AttackResult:
    """Run the epochs x batches optimization loop on a frozen encoder.

    ``mode='baple'`` learns the noise live (and composites ``patch`` when
    enabled). Baseline modes supply ``fixed_trigger``, a callable applied once
    to the poison pool; only the prompt is learned. ``clean_pl`` drops the
    poison term entirely.
    """
    config.validate()
    if mode not in PROMPT_MODES:
        raise ConfigurationError(f"mode must be one of {PROMPT_MODES}")
    if not enc.frozen:
        raise ConfigurationError("encoder must be frozen before a prompt attack")
    checksum_before = enc.checksum()
    t0 = time.perf_counter()
    torch.manual_seed(config.seed)

    cfg_m = enc.config
    prompt = PromptState.random(cfg_m.prompt_len, cfg_m.embed_dim,
                                cfg_m.prompt_init_std, config.seed)
    prompts = ClassPromptSet(enc, prompt)
    tau = cfg_m.logit_scale

    img_shape = dataset.images.shape[1:]
    learn_noise = mode == "baple" and config.use_noise
    delta = (torch.zeros(img_shape, requires_grad=True)
             if learn_noise else None)
    torch_patch = None
    if mode == "baple" and config.use_patch and patch is not None:
        torch_patch = TorchPatch(patch, img_shape[0], img_shape[1])

    # fixed-trigger baselines poison a static copy of the pool once
    triggered: dict[int, np.ndarray] = {}
    if fixed_trigger is not None and mode != "baple":
        for idx in plan.poison_indices:
            triggered[int(idx)] = fixed_trigger(dataset.images[int(idx)])

    opt = None
    if config.optimizer == "adam":
        groups = [{"params": [prompt.embeddings], "lr": config.prompt_lr}]
        if delta is not None:
            groups.append({"params": [delta], "lr": config.noise_lr})
        opt = torch.optim.Adam(groups)

    lam_p = 0.0 if mode == "clean_pl" else config.lambda_poison
    trace = np.zeros((config.epochs, 3), dtype=np.float64)
    for epoch in range(config.epochs):
        sums = np.zeros(3)
        steps = 0
        for clean_b, poison_b in materialize_batches(
                plan, dataset, config.batch_size, config.seed, epoch):
            if mode == "clean_pl":
                poison_b.indices = poison_b.indices[:0]
                poison_b.images = poison_b.images[:0]
                poison_b.labels = poison_b.labels[:0]
            p_images = poison_b.images
            if triggered and len(poison_b):
                p_images = np.stack([triggered[int(i)] for i in poison_b.indices])
            try:
                total, clean_term, poison_term = attack_loss(
                    enc, prompts, delta, torch_patch,
                    torch.as_tensor(clean_b.images, dtype=torch.float32),
                    torch.as_tensor(clean_b.labels),
                    torch.as_tensor(np.asarray(p_images), dtype=torch.float32),
                    torch.as_tensor(poison_b.labels),
                    config.lambda_clean, lam_p, tau)
            except NumericalError as exc:
                exc.partial_trace = trace[:epoch].copy()
                raise
            if opt is None:
                wanted = [prompt.embeddings] + ([delta] if delta is not None else [])
                grads = torch.autograd.grad(total, wanted, allow_unused=True)
                grad_p = grads[0]
                grad_d = grads[1] if delta is not None else None
                baple_step(prompt, delta, grad_p, grad_d, config)
            else:
                opt.zero_grad()
                total.backward()
                opt.step()
                if delta is not None:
                    with torch.no_grad():
                        delta.clamp_(-config.epsilon, config.epsilon)
            sums += [float(clean_term.detach()), float(poison_term.detach()),
                     float(total.detach())]
            steps += 1
        trace[epoch] = sums / max(steps, 1)

    noise = None
    if delta is not None:
        noise = NoiseState(delta.detach().cpu().numpy().astype(np.float32),
                           config.epsilon)
    result = AttackResult(
        prompt=prompt, noise=noise, trace=trace,
        wall_seconds=time.perf_counter() - t0,
        config=json.loads(json.dumps(asdict(config))),
        mode=mode, checksum_before=checksum_before,
        checksum_after=enc.checksum())
    return result


def run_baple(enc: DualEncoder, dataset: Dataset, plan: PoisonPlan,
              config: AttackConfig, patch: PatchSpec | None) -> AttackResult:
    return run_prompt_attack(enc, dataset, plan, config, patch=patch, mode="baple")
