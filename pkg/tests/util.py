"""Shared helpers: tiny float64 attack instances and finite-difference checks."""
import numpy as np
import torch

from baple.attack import TorchPatch, attack_loss
from baple.model import ClassPromptSet, DualEncoder, ModelConfig, PromptState
from baple.triggers import PatchSpec


def tiny_instance(seed, img=8, with_patch=None):
    """Randomized small float64 instance: frozen 2-class encoder, prompt, noise.

    Images are kept in [0.2, 0.8] and |delta| <= 8/255 so no clamp boundary is
    active; central differences are then valid everywhere.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(feature_dim=4, embed_dim=3, conv_channels=(4,),
                      text_hidden=6, prompt_len=2, pretrain_epochs=0,
                      logit_scale=float(rng.uniform(1.0, 10.0)))
    enc = DualEncoder(cfg, ["ring", "band"]).double()
    enc.freeze()
    prompt = PromptState(torch.tensor(rng.normal(0.0, 0.05, (2, 3)),
                                      dtype=torch.float64, requires_grad=True))
    prompts = ClassPromptSet(enc, prompt)
    eps = 8 / 255
    delta = torch.tensor(rng.uniform(-eps, eps, (img, img, 3)),
                         dtype=torch.float64, requires_grad=True)
    if with_patch is None:
        with_patch = bool(rng.integers(2))
    patch = None
    if with_patch:
        spec = PatchSpec(rng.uniform(0.05, 0.95, (3, 3, 3)), "bottom-left")
        patch = TorchPatch(spec, img, img, dtype=torch.float64)
    batch = (
        torch.tensor(rng.uniform(0.2, 0.8, (2, img, img, 3)), dtype=torch.float64),
        torch.tensor([0, 1]),
        torch.tensor(rng.uniform(0.2, 0.8, (2, img, img, 3)), dtype=torch.float64),
        torch.tensor([0, 0]),
    )
    return enc, prompts, prompt, delta, patch, batch


def instance_loss(enc, prompts, delta, patch, batch,
                  lambda_clean=1.0, lambda_poison=1.0):
    total, _, _ = attack_loss(enc, prompts, delta, patch, *batch,
                              lambda_clean, lambda_poison,
                              enc.config.logit_scale)
    return total


def fd_relative_errors(seed, h=1e-4):
    """Norm-wise relative error of autograd vs central differences."""
    enc, prompts, prompt, delta, patch, batch = tiny_instance(seed)
    total = instance_loss(enc, prompts, delta, patch, batch)
    grad_p, grad_d = torch.autograd.grad(total, [prompt.embeddings, delta])

    def loss_at():
        return float(instance_loss(enc, prompts, delta, patch, batch).detach())

    def fd(tensor):
        out = np.zeros(tensor.shape).reshape(-1)
        flat = tensor.detach().numpy().reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            out[i] = (up - down) / (2 * h)
        return out.reshape(tensor.shape)

    fd_p = fd(prompt.embeddings)
    fd_d = fd(delta)

    def rel(analytic, numeric):
        diff = np.linalg.norm(analytic.detach().numpy() - numeric)
        return diff / max(np.linalg.norm(numeric), 1e-10)

    return rel(grad_p, fd_p), rel(grad_d, fd_d)
