"""Toy frozen dual-encoder foundation model.

A small convolutional image encoder and an embedding+MLP text encoder are
pretrained contrastively on the synthetic corpus, then frozen. Classification
is zero-shot: argmax over cosine similarity between the image feature and
per-class text features. Prompt learning swaps the handcrafted text template
for a learnable prefix of continuous token embeddings shared across classes.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .artifacts import register
from .data import Dataset
from .errors import (
    ConfigurationError,
    DimensionError,
    TokenizerError,
    TrainingError,
)

DEFAULT_TEMPLATE = "an image of {}"


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64
    embed_dim: int = 32
    conv_channels: tuple[int, ...] = (16, 32, 64)
    text_hidden: int = 128
    logit_scale: float = 100.0
    prompt_len: int = 4
    prompt_init_std: float = 0.02
    pretrain_epochs: int = 3
    pretrain_lr: float = 1e-3
    pretrain_temperature: float = 10.0
    keep_template_in_prompt: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.feature_dim < 2:
            raise ConfigurationError("feature_dim must be >= 2")
        if self.logit_scale <= 0:
            raise ConfigurationError("logit_scale must be positive")
        if self.prompt_len < 0:
            raise ConfigurationError("prompt_len must be nonnegative")


class Tokenizer:
    """Whitespace word-level tokenizer over a fixed small vocabulary."""

    def __init__(self, class_names: list[str], template: str = DEFAULT_TEMPLATE):
        self.template = template
        words = set()
        for name in class_names:
            words.update(name.lower().split())
        words.update(w for w in template.replace("{}", " ").lower().split())
        self.vocab = sorted(words)
        self.word_to_id = {w: i for i, w in enumerate(self.vocab)}

    def __len__(self) -> int:
        return len(self.vocab)

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for word in text.lower().split():
            if word not in self.word_to_id:
                raise TokenizerError(f"unknown token {word!r}")
            ids.append(self.word_to_id[word])
        return ids


def handcrafted_template(tokenizer: Tokenizer, class_name: str) -> list[int]:
    """Token ids of the fixed text template with the class name inserted."""
    text = tokenizer.template.format(class_name) if tokenizer.template else class_name
    return tokenizer.tokenize(text)


class DualEncoder(nn.Module):
    def __init__(self, config: ModelConfig, class_names: list[str],
                 template: str = DEFAULT_TEMPLATE):
        super().__init__()
        config.validate()
        self.config = config
        self.class_names = list(class_names)
        self.tokenizer = Tokenizer(class_names, template)
        self.frozen = False
        self.pretrain_accuracy: float | None = None

        convs: list[nn.Module] = []
        in_ch = 3
        for out_ch in config.conv_channels:
            convs += [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1), nn.ReLU()]
            in_ch = out_ch
        convs += [nn.AdaptiveAvgPool2d(4), nn.Flatten(),
                  nn.Linear(in_ch * 16, config.feature_dim)]
        self.image_net = nn.Sequential(*convs)

        self.token_embedding = nn.Embedding(len(self.tokenizer), config.embed_dim)
        self.text_net = nn.Sequential(
            nn.Linear(config.embed_dim, config.text_hidden),
            nn.ReLU(),
            nn.Linear(config.text_hidden, config.feature_dim),
        )

    # -- feature extraction -------------------------------------------------

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) in [0, 1] -> unit-norm (B, d)."""
        if images.ndim != 4 or images.shape[-1] != 3:
            raise DimensionError(f"expected (B, H, W, 3) images, got {tuple(images.shape)}")
        feats = self.image_net(images.permute(0, 3, 1, 2))
        return nn.functional.normalize(feats, dim=-1, eps=1e-12)

    def encode_text(self, embeds: torch.Tensor,
                    mask: torch.Tensor | None = None) -> torch.Tensor:
        """(B, L, e) token-embedding sequences -> unit-norm (B, d).

        ``mask`` (B, L) marks real positions; missing mask means no padding.
        """
        if embeds.ndim != 3 or embeds.shape[-1] != self.config.embed_dim:
            raise DimensionError(
                f"expected (B, L, {self.config.embed_dim}) embeddings, "
                f"got {tuple(embeds.shape)}")
        if mask is None:
            pooled = embeds.mean(dim=1)
        else:
            m = mask.to(embeds.dtype).unsqueeze(-1)
            pooled = (embeds * m).sum(dim=1) / m.sum(dim=1).clamp_min(1e-12)
        feats = self.text_net(pooled)
        return nn.functional.normalize(feats, dim=-1, eps=1e-12)

    # -- bookkeeping --------------------------------------------------------

    def freeze(self) -> "DualEncoder":
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        self.eval()
        return self

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, param in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(param.detach().cpu().numpy().tobytes())
        return digest.hexdigest()

    def clone_unfrozen(self) -> "DualEncoder":
        copy = DualEncoder(self.config, self.class_names, self.tokenizer.template)
        copy.load_state_dict({k: v.clone() for k, v in self.state_dict().items()})
        copy.pretrain_accuracy = self.pretrain_accuracy
        return copy

    # -- persistence --------------------------------------------------------

    def to_payload(self):
        cfg = self.config
        meta = {
            "feature_dim": cfg.feature_dim, "embed_dim": cfg.embed_dim,
            "conv_channels": list(cfg.conv_channels), "text_hidden": cfg.text_hidden,
            "logit_scale": cfg.logit_scale, "prompt_len": cfg.prompt_len,
            "prompt_init_std": cfg.prompt_init_std,
            "pretrain_epochs": cfg.pretrain_epochs, "pretrain_lr": cfg.pretrain_lr,
            "pretrain_temperature": cfg.pretrain_temperature,
            "keep_template_in_prompt": cfg.keep_template_in_prompt,
            "seed": cfg.seed, "template": self.tokenizer.template,
            "frozen": self.frozen, "pretrain_accuracy": self.pretrain_accuracy,
        }
        arrays = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        texts = {"class_names": list(self.class_names)}
        return meta, arrays, texts

    @classmethod
    def from_payload(cls, meta, arrays, texts):
        cfg = ModelConfig(
            feature_dim=meta["feature_dim"], embed_dim=meta["embed_dim"],
            conv_channels=tuple(meta["conv_channels"]), text_hidden=meta["text_hidden"],
            logit_scale=meta["logit_scale"], prompt_len=meta["prompt_len"],
            prompt_init_std=meta["prompt_init_std"],
            pretrain_epochs=meta["pretrain_epochs"], pretrain_lr=meta["pretrain_lr"],
            pretrain_temperature=meta["pretrain_temperature"],
            keep_template_in_prompt=meta["keep_template_in_prompt"],
            seed=meta["seed"],
        )
        enc = cls(cfg, texts["class_names"], meta["template"])
        enc.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
        if meta["frozen"]:
            enc.freeze()
        enc.pretrain_accuracy = meta["pretrain_accuracy"]
        return enc


register(DualEncoder)


@register
@dataclass
class PromptState:
    """Learnable continuous prompt prefix, shared across all classes."""

    embeddings: torch.Tensor  # (M, e), requires_grad while under attack

    @classmethod
    def random(cls, prompt_len: int, embed_dim: int, std: float, seed: int,
               dtype=torch.float32) -> "PromptState":
        gen = torch.Generator().manual_seed(seed)
        p = torch.empty(prompt_len, embed_dim, dtype=dtype)
        p.normal_(0.0, std, generator=gen)
        return cls(p.requires_grad_(True))

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]

    def to_payload(self):
        return {}, {"embeddings": self.embeddings.detach().cpu().numpy()}, {}

    @classmethod
    def from_payload(cls, meta, arrays, texts):
        return cls(torch.from_numpy(arrays["embeddings"].copy()))


class ClassPromptSet:
    """Per-class token-embedding sequences sharing one prompt prefix.

    The prefix tensor is aliased, not copied: a single gradient update moves
    every class sequence. With ``prompt=None`` the set degenerates to the
    handcrafted template (the zero-shot baseline).
    """

    def __init__(self, encoder: DualEncoder, prompt: PromptState | None,
                 keep_template: bool | None = None):
        self.encoder = encoder
        self.prompt = prompt
        if keep_template is None:
            keep_template = encoder.config.keep_template_in_prompt
        tok = encoder.tokenizer
        if prompt is None or keep_template:
            self.class_token_ids = [
                handcrafted_template(tok, name) for name in encoder.class_names]
        else:
            self.class_token_ids = [tok.tokenize(name) for name in encoder.class_names]
        # padded token-id tensor + mask, built once; embeddings looked up per call
        tok_len = max(len(ids) for ids in self.class_token_ids)
        ids = torch.zeros(len(self.class_token_ids), tok_len, dtype=torch.long)
        tok_mask = torch.zeros(len(self.class_token_ids), tok_len, dtype=torch.bool)
        for i, row in enumerate(self.class_token_ids):
            ids[i, :len(row)] = torch.tensor(row, dtype=torch.long)
            tok_mask[i, :len(row)] = True
        self._token_ids = ids
        self._token_mask = tok_mask

    @property
    def num_classes(self) -> int:
        return len(self.class_token_ids)

    def build_sequences(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Padded (C, L, e) embedding sequences plus their (C, L) mask."""
        enc = self.encoder
        tok_embeds = enc.token_embedding(self._token_ids)
        if self.prompt is None:
            return tok_embeds, self._token_mask
        c = tok_embeds.shape[0]
        dtype = self.prompt.embeddings.dtype
        prefix = self.prompt.embeddings.unsqueeze(0).expand(c, -1, -1)
        seqs = torch.cat([prefix, tok_embeds.to(dtype)], dim=1)
        mask = torch.cat([
            torch.ones(c, self.prompt.length, dtype=torch.bool),
            self._token_mask,
        ], dim=1)
        return seqs, mask

    def text_features(self) -> torch.Tensor:
        seqs, mask = self.build_sequences()
        return self.encoder.encode_text(seqs, mask)


# -- scoring ----------------------------------------------------------------


def score_batch(enc: DualEncoder, images: np.ndarray | torch.Tensor,
                prompts: ClassPromptSet) -> np.ndarray:
    """Cosine-similarity scores (B, C) in [-1, 1], no gradients."""
    if prompts.num_classes != len(enc.class_names):
        raise DimensionError(
            f"prompt set has {prompts.num_classes} classes, "
            f"encoder expects {len(enc.class_names)}")
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        img_f = enc.encode_image(x)
        txt_f = prompts.text_features()
        return (img_f @ txt_f.T).cpu().numpy()


def predict_scores(enc: DualEncoder, image: np.ndarray,
                   prompts: ClassPromptSet) -> np.ndarray:
    return score_batch(enc, np.asarray(image)[None], prompts)[0]


def zero_shot_predict(enc: DualEncoder, image: np.ndarray,
                      prompts: ClassPromptSet) -> int:
    # np.argmax returns the first maximum: ties break to the lowest class index
    return int(np.argmax(predict_scores(enc, image, prompts)))


def predict_labels(enc: DualEncoder, images: np.ndarray,
                   prompts: ClassPromptSet, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        scores = score_batch(enc, images[start:start + batch_size], prompts)
        out.append(scores.argmax(axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


# -- pretraining ------------------------------------------------------------


def pretrain_contrastive(train: Dataset, config: ModelConfig,
                         val: Dataset | None = None,
                         template: str = DEFAULT_TEMPLATE) -> DualEncoder:
    """Symmetric contrastive pretraining on image/caption pairs.

    Each step pairs one random image per class with its templated caption, so
    in-batch negatives are always other classes. Returns a frozen encoder.
    """
    if train.num_classes < 2:
        raise ConfigurationError("pretraining needs at least 2 classes")
    torch.manual_seed(config.seed)
    enc = DualEncoder(config, train.class_names, template)

    if config.pretrain_epochs > 0:
        opt = torch.optim.Adam(enc.parameters(), lr=config.pretrain_lr)
        cap_prompts = ClassPromptSet(enc, prompt=None)
        rng = np.random.default_rng([config.seed, 3])
        pools = [train.class_indices(c) for c in range(train.num_classes)]
        steps_per_epoch = min(len(p) for p in pools)
        labels = torch.arange(train.num_classes)
        temp = config.pretrain_temperature
        for epoch in range(config.pretrain_epochs):
            perms = [rng.permutation(pool) for pool in pools]
            for step in range(steps_per_epoch):
                idx = np.array([perm[step] for perm in perms])
                x = torch.as_tensor(train.images[idx], dtype=torch.float32)
                img_f = enc.encode_image(x)
                txt_f = cap_prompts.text_features()
                logits = temp * (img_f @ txt_f.T)
                loss = 0.5 * (nn.functional.cross_entropy(logits, labels)
                              + nn.functional.cross_entropy(logits.T, labels))
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite contrastive loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()

    enc.freeze()
    if val is not None and len(val):
        prompts = ClassPromptSet(enc, prompt=None)
        preds = predict_labels(enc, val.images, prompts)
        enc.pretrain_accuracy = float((preds == val.labels).mean())
    return enc
