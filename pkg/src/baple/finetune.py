"""Full fine-tuning attack baseline: both encoders updated on a poisoned mix.

Text prompts stay fixed at the handcrafted template; the trigger is one of the
fixed functions (no learnable noise). Runs always operate on an unfrozen copy
so the reference encoder used by prompt attacks is never mutated.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .data import Dataset
from .errors import ConfigurationError, TrainingError
from .model import ClassPromptSet, DualEncoder
from .poison import PoisonPlan, materialize_batches


@dataclass(frozen=True)
class FinetuneConfig:
    learning_rate: float = 5e-5
    epochs: int = 50
    batch_size: int = 16
    lambda_clean: float = 1.0
    lambda_poison: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class FinetuneResult:
    encoder: DualEncoder
    trace: np.ndarray  # (epochs, 3): clean term, poison term, total
    wall_seconds: float
    config: dict


def run_finetune_attack(enc: DualEncoder, dataset: Dataset, plan: PoisonPlan,
                        fixed_trigger, config: FinetuneConfig) -> FinetuneResult:
    """Fine-tune an unfrozen copy of ``enc`` on the poisoned objective."""
    config.validate()
    t0 = time.perf_counter()
    torch.manual_seed(config.seed)
    victim = enc.clone_unfrozen()
    victim.frozen = False
    for p in victim.parameters():
        p.requires_grad_(True)
    victim.train()

    prompts = ClassPromptSet(victim, prompt=None)  # handcrafted template, no prefix
    tau = victim.config.logit_scale

    triggered = {}
    if fixed_trigger is not None:
        for idx in plan.poison_indices:
            triggered[int(idx)] = fixed_trigger(dataset.images[int(idx)])

    opt = torch.optim.Adam(victim.parameters(), lr=config.learning_rate)
    trace = np.zeros((config.epochs, 3), dtype=np.float64)
    for epoch in range(config.epochs):
        sums = np.zeros(3)
        steps = 0
        for clean_b, poison_b in materialize_batches(
                plan, dataset, config.batch_size, config.seed, epoch):
            txt_f = prompts.text_features()
            zero = txt_f.sum() * 0.0
            clean_term = zero
            if len(clean_b):
                img_f = victim.encode_image(
                    torch.as_tensor(clean_b.images, dtype=torch.float32))
                clean_term = nn.functional.cross_entropy(
                    tau * (img_f @ txt_f.T), torch.as_tensor(clean_b.labels))
            poison_term = zero
            if len(poison_b) and triggered:
                p_images = np.stack([triggered[int(i)] for i in poison_b.indices])
                img_f = victim.encode_image(
                    torch.as_tensor(p_images, dtype=torch.float32))
                poison_term = nn.functional.cross_entropy(
                    tau * (img_f @ txt_f.T), torch.as_tensor(poison_b.labels))
            loss = (config.lambda_clean * clean_term
                    + config.lambda_poison * poison_term)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += [float(clean_term.detach()), float(poison_term.detach()),
                     float(loss.detach())]
            steps += 1
        trace[epoch] = sums / max(steps, 1)

    victim.freeze()
    return FinetuneResult(encoder=victim, trace=trace,
                          wall_seconds=time.perf_counter() - t0,
                          config=json.loads(json.dumps(asdict(config))))
