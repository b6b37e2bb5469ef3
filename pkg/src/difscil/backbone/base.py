"""Frozen diffusion-backbone interface and the generic DDIM machinery.

Concrete backbones implement latent encoding and a single U-Net evaluation
with multi-scale taps; noising, DDIM stepping and multi-step generation are
shared here and are pure functions of their arguments for a fixed backbone.
"""
from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass, field

import torch

from ..schedule import NoiseSchedule

NULL_KIND = "null"
CLASS_NAME_KIND = "class_name"
CLASS_SPECIFIC_KIND = "class_specific"


@dataclass
class LatentTensor:
    """A latent activation map tagged with the noise level it represents."""

    data: torch.Tensor  # [C_lat, H_lat, W_lat]
    timestep_tag: int

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ValueError(f"latent must be 3-D, got shape {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ValueError("latent contains non-finite entries")


@dataclass
class PromptEmbedding:
    """A sequence of text-token embedding vectors plus its provenance kind."""

    tokens: torch.Tensor  # [n_tokens, d_txt]
    kind: str = NULL_KIND

    def __post_init__(self):
        if self.tokens.dim() != 2 or self.tokens.shape[0] < 1:
            raise ValueError("prompt must hold at least one token vector")
        if self.kind not in (NULL_KIND, CLASS_NAME_KIND, CLASS_SPECIFIC_KIND):
            raise ValueError(f"unknown prompt kind {self.kind!r}")


@dataclass
class MultiScaleTaps:
    """Per-layer U-Net feature maps from one backbone evaluation."""

    taps: dict[int, torch.Tensor]  # layer index -> [C_l, H_l, W_l]
    layer_range: tuple[int, int]

    def __post_init__(self):
        lo, hi = self.layer_range
        expected = list(range(lo, hi + 1))
        if sorted(self.taps) != expected:
            raise ValueError(f"taps must cover layers {lo}..{hi} contiguously")


def word_seed(word: str, salt: int = 0) -> int:
    """Stable cross-run seed for a word (hash() is salted per process)."""
    return zlib.crc32(word.encode("utf-8")) ^ (salt * 0x9E3779B9) & 0xFFFFFFFF


def tensor_checksum(tensors) -> str:
    """SHA-256 over the concatenated raw bytes of an iterable of tensors."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class DiffusionBackbone:
    """Base class: frozen latent-diffusion model with feature taps.

    Subclasses provide ``encode_image``, ``_unet_eval`` and
    ``token_embedding``; everything else (noising, guidance, DDIM,
    generation) is generic.  ``unet_calls`` counts guided evaluations, i.e.
    one ``unet_features`` call increments it by one even when classifier-free
    guidance internally runs a conditional and an unconditional pass.
    """

    input_shape: tuple[int, int, int]
    latent_shape: tuple[int, int, int]
    tap_table: dict[int, tuple[int, int]]  # layer -> (channels, spatial)
    layer_range: tuple[int, int] = (4, 12)
    d_txt: int = 32
    guidance_scale: float = 7.5
    # optional symmetric bound on the predicted clean latent during generation
    z0_clip: float | None = None
    frozen: bool = True

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule
        self.unet_calls = 0

    # -- subclass surface -------------------------------------------------
    def encode_image(self, image: torch.Tensor) -> LatentTensor:
        raise NotImplementedError

    def _unet_eval(self, z: torch.Tensor, t: int, tokens: torch.Tensor):
        """One raw U-Net pass -> (eps_pred, {layer: tap}) for all 12 layers."""
        raise NotImplementedError

    def token_embedding(self, word: str) -> torch.Tensor:
        raise NotImplementedError

    def parameter_tensors(self):
        raise NotImplementedError

    # -- shared operations ------------------------------------------------
    def null_prompt(self) -> PromptEmbedding:
        return PromptEmbedding(torch.zeros(1, self.d_txt), kind=NULL_KIND)

    def checksum(self) -> str:
        return tensor_checksum(self.parameter_tensors())

    def check_image(self, image: torch.Tensor):
        if tuple(image.shape) != self.input_shape:
            raise ValueError(
                f"image shape {tuple(image.shape)} != expected {self.input_shape}"
            )
        if not torch.isfinite(image).all():
            raise ValueError("image contains non-finite entries")

    def noise_to(self, z0: LatentTensor, t: int, noise: torch.Tensor) -> LatentTensor:
        """Closed-form forward noising sqrt(ab_t) z0 + sqrt(1-ab_t) eps."""
        if not 0 <= t <= self.schedule.T:
            raise ValueError(f"timestep {t} outside [0, {self.schedule.T}]")
        if noise.shape != z0.data.shape:
            raise ValueError("noise must be shaped like the latent")
        if t == 0:
            return LatentTensor(z0.data.clone(), 0)
        ab = self.schedule.alpha_bar(t)
        data = math.sqrt(ab) * z0.data + math.sqrt(1.0 - ab) * noise
        return LatentTensor(data, t)

    def unet_features(
        self,
        z: LatentTensor,
        t: int,
        prompt: PromptEmbedding,
        guidance_scale: float = 1.0,
    ) -> tuple[torch.Tensor, MultiScaleTaps]:
        """Guided noise prediction plus taps over the configured layer range.

        Taps come from the conditional pass; with guidance_scale == 1 or a
        null prompt the unconditional pass is skipped entirely.
        """
        if not 0 <= t <= self.schedule.T:
            raise ValueError(f"timestep {t} outside [0, {self.schedule.T}]")
        self.unet_calls += 1
        eps_cond, raw = self._unet_eval(z.data, t, prompt.tokens)
        if guidance_scale != 1.0 and prompt.kind != NULL_KIND:
            eps_uncond, _ = self._unet_eval(z.data, t, self.null_prompt().tokens)
            eps = eps_uncond + guidance_scale * (eps_cond - eps_uncond)
        else:
            eps = eps_cond
        lo, hi = self.layer_range
        taps = MultiScaleTaps({l: raw[l] for l in range(lo, hi + 1)}, (lo, hi))
        return eps, taps

    def ddim_step(
        self, z_t: LatentTensor, eps_pred: torch.Tensor, t: int, t_prev: int
    ) -> LatentTensor:
        """Deterministic (eta = 0) DDIM update: predict z0, re-noise to t_prev."""
        if not (0 <= t_prev < t <= self.schedule.T):
            raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
        ab_t = self.schedule.alpha_bar(t)
        ab_p = self.schedule.alpha_bar(t_prev)
        z0_hat = (z_t.data - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
        data = math.sqrt(ab_p) * z0_hat + math.sqrt(1.0 - ab_p) * eps_pred
        return LatentTensor(data, t_prev)

    @staticmethod
    def ddim_ladder(start_t: int, num_steps: int) -> list[int]:
        """Evenly spaced strictly-decreasing integer timesteps start_t -> 0."""
        if num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if num_steps > start_t:
            raise ValueError(f"cannot take {num_steps} steps from t={start_t}")
        ladder = [round(start_t * (1 - k / num_steps)) for k in range(num_steps + 1)]
        # rounding may collide for coarse grids; restore strict decrease
        for i in range(1, len(ladder)):
            ladder[i] = min(ladder[i], ladder[i - 1] - 1)
        assert ladder[-1] == 0
        return ladder

    def generate(
        self,
        start: LatentTensor,
        start_t: int,
        prompt: PromptEmbedding,
        num_steps: int,
        rng_seed: int = 0,
    ) -> tuple[LatentTensor, MultiScaleTaps]:
        """DDIM generation from start_t down to 0 with classifier-free guidance.

        Returns the denoised latent and the taps of the last U-Net
        evaluation (the one producing z0).  Deterministic: eta = 0, so
        rng_seed only pins the interface.
        """
        if start_t == 0:
            raise ValueError("start_t = 0: nothing to generate")
        if start.timestep_tag != start_t:
            raise ValueError("start latent tag does not match start_t")
        ladder = self.ddim_ladder(start_t, num_steps)
        z = start
        final_taps = None
        for t, t_prev in zip(ladder[:-1], ladder[1:]):
            eps, final_taps = self.unet_features(z, t, prompt, self.guidance_scale)
            if self.z0_clip is not None:
                # clip the implied clean-latent prediction (clip_denoised):
                # at high t the x0 formula divides by a tiny sqrt(alpha_bar),
                # so unclipped prediction errors explode off-distribution
                ab_t = self.schedule.alpha_bar(t)
                z0_hat = (z.data - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
                z0_hat = z0_hat.clamp(-self.z0_clip, self.z0_clip)
                eps = (z.data - math.sqrt(ab_t) * z0_hat) / math.sqrt(1.0 - ab_t)
            z = self.ddim_step(z, eps, t, t_prev)
        return z, final_taps
