"""Backdoor injection functions.

The learnable attack composes additive noise with a patch: add the noise, clamp
to [0, 1], then composite the patch (opaque or alpha-blended) at one of nine
anchor locations. Fixed-trigger baselines live here too: a seeded random patch,
a smooth bilinear warping field, and low-frequency amplitude-spectrum blending.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .artifacts import register
from .errors import ConfigurationError, DimensionError

ANCHORS = [
    "top-left", "top-center", "top-right",
    "center-left", "center-center", "center-right",
    "bottom-left", "bottom-center", "bottom-right",
]


@dataclass
class PatchSpec:
    patch: np.ndarray  # (h_p, w_p, C) in [0, 1]
    location: str = "bottom-left"
    alpha: np.ndarray | None = None  # (h_p, w_p) in [0, 1]; None = opaque

    def __post_init__(self):
        if self.location not in ANCHORS:
            raise ConfigurationError(
                f"location must be one of {ANCHORS}, got {self.location!r}")
        if self.alpha is not None and self.alpha.shape != self.patch.shape[:2]:
            raise DimensionError("alpha mask shape must match patch height/width")


@register
@dataclass
class NoiseState:
    """Learnable full-image additive trigger with an L-infinity budget."""

    delta: np.ndarray  # (H, W, C)
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")

    def to_payload(self):
        return {"epsilon": self.epsilon}, {"delta": self.delta}, {}

    @classmethod
    def from_payload(cls, meta, arrays, texts):
        return cls(delta=arrays["delta"], epsilon=meta["epsilon"])

    @classmethod
    def zeros(cls, shape: tuple[int, int, int], epsilon: float) -> "NoiseState":
        return cls(np.zeros(shape, dtype=np.float32), epsilon)


@dataclass
class WarpField:
    """Smooth displacement field from a coarse control grid (warp baseline)."""

    grid: np.ndarray  # (k, k, 2) in [-1, 1]
    strength_px: float  # max displacement in pixels

    def __post_init__(self):
        if self.grid.ndim != 3 or self.grid.shape[2] != 2:
            raise DimensionError("control grid must be (k, k, 2)")
        if np.abs(self.grid).max() > 1.0 + 1e-9:
            raise ConfigurationError("control grid entries must lie in [-1, 1]")
        if self.strength_px < 0:
            raise ConfigurationError("strength_px must be nonnegative")

    @classmethod
    def random(cls, k: int = 4, strength_px: float = 0.5, seed: int = 0) -> "WarpField":
        rng = np.random.default_rng([seed, 4])
        return cls(rng.uniform(-1.0, 1.0, size=(k, k, 2)), strength_px)

    def dense_flow(self, h: int, w: int) -> np.ndarray:
        """Bilinear upsample of the control grid to an (H, W, 2) pixel flow."""
        if self.strength_px > 0.25 * min(h, w):
            raise ConfigurationError(
                f"strength_px={self.strength_px} exceeds bound "
                f"{0.25 * min(h, w)} for a {h}x{w} image")
        k = self.grid.shape[0]
        rows = np.linspace(0, k - 1, h)
        cols = np.linspace(0, k - 1, w)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        flow = np.stack([
            ndimage.map_coordinates(self.grid[:, :, a], [rr, cc], order=1,
                                    mode="nearest")
            for a in range(2)
        ], axis=-1)
        return (flow * self.strength_px).astype(np.float64)


@dataclass
class FibaSpec:
    """Low-frequency amplitude-blend trigger (frequency-domain baseline)."""

    reference: np.ndarray  # (H, W, C) trigger image in [0, 1]
    alpha_blend: float = 0.15
    radius: float = 0.1  # fraction of the spectrum, (0, 0.5]

    def __post_init__(self):
        if not (0.0 <= self.alpha_blend <= 1.0):
            raise ConfigurationError("alpha_blend must be in [0, 1]")
        if not (0.0 < self.radius <= 0.5):
            raise ConfigurationError("radius must be in (0, 0.5]")


# -- patch compositing ------------------------------------------------------


def anchor_rect(location: str, h: int, w: int, h_p: int, w_p: int):
    """Top-left corner (r0, c0) of the patch rectangle for a named anchor."""
    if h_p > h or w_p > w:
        raise DimensionError(f"patch {h_p}x{w_p} larger than image {h}x{w}")
    vert, horiz = location.split("-")
    r0 = {"top": 0, "center": (h - h_p) // 2, "bottom": h - h_p}[vert]
    c0 = {"left": 0, "center": (w - w_p) // 2, "right": w - w_p}[horiz]
    return r0, c0


def apply_patch(x: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Composite the patch into its anchored rectangle; other pixels untouched."""
    h, w = x.shape[:2]
    h_p, w_p = spec.patch.shape[:2]
    r0, c0 = anchor_rect(spec.location, h, w, h_p, w_p)
    out = x.copy()
    region = out[r0:r0 + h_p, c0:c0 + w_p]
    if spec.alpha is None:
        region[:] = spec.patch
    else:
        a = spec.alpha[:, :, None]
        region[:] = a * spec.patch + (1.0 - a) * region
    np.clip(out, 0.0, 1.0, out=out)
    return out


def clip_noise(state: NoiseState) -> NoiseState:
    """Clamp every noise entry to [-epsilon, epsilon]."""
    return NoiseState(np.clip(state.delta, -state.epsilon, state.epsilon),
                      state.epsilon)


def inject_backdoor(x: np.ndarray, noise: NoiseState | None,
                    patch: PatchSpec | None) -> np.ndarray:
    """Add the noise, clamp to [0, 1], then composite the patch (that order)."""
    out = x
    if noise is not None:
        out = np.clip(x + noise.delta, 0.0, 1.0)
    if patch is not None:
        out = apply_patch(out, patch)
    elif noise is None:
        out = x.copy()
    return out.astype(x.dtype, copy=False)


def make_injector(noise: NoiseState | None, patch: PatchSpec | None):
    """Batch-capable trigger callable for evaluation code."""

    def fn(images: np.ndarray) -> np.ndarray:
        if images.ndim == 3:
            return inject_backdoor(images, noise, patch)
        return np.stack([inject_backdoor(img, noise, patch) for img in images])

    return fn


# -- fixed-trigger baselines ------------------------------------------------


def make_badnets_patch(size: tuple[int, int] = (24, 24), channels: int = 3,
                       location: str = "bottom-left", seed: int = 0) -> PatchSpec:
    """Seeded uniform-noise patch; the same trigger for every image."""
    rng = np.random.default_rng([seed, 5])
    patch = rng.uniform(0.0, 1.0, size=(*size, channels)).astype(np.float32)
    return PatchSpec(patch, location)


def badnets_trigger(x: np.ndarray, spec: PatchSpec) -> np.ndarray:
    return apply_patch(x, spec)


def wanet_trigger(x: np.ndarray, fld: WarpField) -> np.ndarray:
    """Backward-warp with bilinear sampling; borders clamped."""
    h, w = x.shape[:2]
    flow = fld.dense_flow(h, w)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    src_r = rr + flow[:, :, 0]
    src_c = cc + flow[:, :, 1]
    out = np.stack([
        ndimage.map_coordinates(x[:, :, ch].astype(np.float64), [src_r, src_c],
                                order=1, mode="nearest")
        for ch in range(x.shape[2])
    ], axis=-1)
    return np.clip(out, 0.0, 1.0).astype(x.dtype)


def _lowfreq_mask(h: int, w: int, radius: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2,
                         indexing="ij")
    return np.sqrt(rr**2 + cc**2) <= radius * min(h, w)


def fiba_trigger(x: np.ndarray, spec: FibaSpec,
                 return_spectra: bool = False):
    """Blend the low-frequency amplitude of x with the reference's amplitude.

    The host image's phase array is reused bitwise in the reconstruction.
    """
    if spec.reference.shape != x.shape:
        raise DimensionError("reference trigger image must match host shape")
    h, w, c = x.shape
    mask = _lowfreq_mask(h, w, spec.radius)
    out = np.empty_like(x, dtype=np.float64)
    amps, phases = [], []
    for ch in range(c):
        f_host = np.fft.fftshift(np.fft.fft2(x[:, :, ch].astype(np.float64)))
        f_ref = np.fft.fftshift(np.fft.fft2(spec.reference[:, :, ch].astype(np.float64)))
        amp = np.abs(f_host)
        phase = np.angle(f_host)
        amp_blend = amp.copy()
        amp_blend[mask] = ((1.0 - spec.alpha_blend) * amp[mask]
                           + spec.alpha_blend * np.abs(f_ref)[mask])
        recon = np.fft.ifft2(np.fft.ifftshift(amp_blend * np.exp(1j * phase)))
        out[:, :, ch] = recon.real
        amps.append(amp_blend)
        phases.append(phase)
    out = np.clip(out, 0.0, 1.0).astype(x.dtype)
    if return_spectra:
        return out, np.stack(amps, axis=-1), np.stack(phases, axis=-1)
    return out


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images on the [0, 1] scale."""
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return -10.0 * np.log10(mse)
