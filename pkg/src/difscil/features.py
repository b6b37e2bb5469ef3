"""The four feature extraction routes built on a backbone plus aggregator.

  inv  one U-Net call on the clean latent, null prompt
  syn  one U-Net call on the minimally noised latent, class-name prompt
  aug  partial generation from a timestep-grid noise level, class prompt
  gen  full generation from pure noise, class-specific prompt (replay only)

One-step routes run unguided (a single conditional pass); generation routes
use the backbone's classifier-free guidance scale.  At t = T the augmented
route starts from the identical pure-noise draw as the generative route, so
the two coincide exactly under a shared seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import torch

from .aggregate import AggregatedFeature, LayerAggregator
from .backbone import (
    CLASS_NAME_KIND,
    CLASS_SPECIFIC_KIND,
    DiffusionBackbone,
    LatentTensor,
    PromptEmbedding,
)


@dataclass
class TimestepGrid:
    """The m-segment noise grid {T/m, 2T/m, ..., T}."""

    m: int
    T: int

    def __post_init__(self):
        if self.m <= 1:
            raise ValueError(f"grid needs m > 1, got m={self.m}")
        self.values = [round(k * self.T / self.m) for k in range(1, self.m + 1)]
        assert self.values[-1] == self.T

    def sample(self, rng: torch.Generator) -> int:
        return self.values[int(torch.randint(self.m, (1,), generator=rng))]


FEATURE_CACHE_HEADER = "DIFSCIL-FC-v1"


class FeatureCache:
    """Optional on-disk store of extracted features, for detached reuse.

    Entries are keyed by (backbone checksum, sample id, source kind, seed);
    the directory defaults to the DIFSCIL_CACHE environment variable.  Cached
    tensors are detached, so the cache is only suitable where no gradient is
    needed (inference, evaluation).
    """

    def __init__(self, directory: str | Path | None = None):
        directory = directory or os.environ.get("DIFSCIL_CACHE")
        if directory is None:
            raise ValueError(
                "no cache directory given and DIFSCIL_CACHE is not set"
            )
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, backbone_hash: str, sample_id: int, kind: str, seed: int) -> Path:
        return self.directory / f"{backbone_hash[:16]}_{sample_id}_{kind}_{seed}.pt"

    def get(self, backbone_hash: str, sample_id: int, kind: str, seed: int):
        path = self._path(backbone_hash, sample_id, kind, seed)
        if not path.exists():
            return None
        payload = torch.load(path, weights_only=False)
        if payload.get("header") != FEATURE_CACHE_HEADER:
            raise ValueError(f"{path} is not a feature-cache container")
        return AggregatedFeature(payload["data"], payload["kind"])

    def put(
        self,
        backbone_hash: str,
        sample_id: int,
        kind: str,
        seed: int,
        feature: AggregatedFeature,
    ):
        payload = {
            "header": FEATURE_CACHE_HEADER,
            "data": feature.data.detach().clone(),
            "kind": feature.source_kind,
        }
        torch.save(payload, self._path(backbone_hash, sample_id, kind, seed))

    def get_or_compute(self, backbone_hash, sample_id, kind, seed, compute):
        hit = self.get(backbone_hash, sample_id, kind, seed)
        if hit is not None:
            return hit
        feature = compute()
        self.put(backbone_hash, sample_id, kind, seed, feature)
        return feature


def sample_seed(root: int, sample_id: int, epoch: int, kind: str) -> int:
    """Per-sample noise stream: fresh per epoch, reproducible per run."""
    h = (root * 1000003 + sample_id) * 1000003 + epoch
    for ch in kind:
        h = (h * 31 + ord(ch)) & 0x7FFFFFFF
    return h


class FeatureExtractor:
    def __init__(
        self,
        backbone: DiffusionBackbone,
        aggregator: LayerAggregator,
        full_steps: int = 25,
    ):
        self.backbone = backbone
        self.aggregator = aggregator
        self.full_steps = full_steps

    def _noise_like(self, shape, seed: int) -> torch.Tensor:
        g = torch.Generator().manual_seed(seed)
        return torch.randn(shape, generator=g)

    def extract_inv(
        self, z0: LatentTensor, prompt: PromptEmbedding | None = None
    ) -> AggregatedFeature:
        """One-step inversion feature of the clean latent (exactly one call).

        The prompt defaults to null; inference configs may substitute a
        dataset-level class-name prompt.
        """
        if z0.timestep_tag != 0:
            raise ValueError("inversion feature requires a clean latent")
        prompt = prompt or self.backbone.null_prompt()
        _, taps = self.backbone.unet_features(z0, 0, prompt, guidance_scale=1.0)
        return self.aggregator(taps, "inv")

    def extract_syn(
        self, z0: LatentTensor, class_prompt: PromptEmbedding, rng_seed: int
    ) -> AggregatedFeature:
        """One-step synthetic feature at the minimally noised latent."""
        if class_prompt.kind != CLASS_NAME_KIND:
            raise ValueError("synthetic feature requires a class-name prompt")
        eps = self._noise_like(z0.data.shape, rng_seed)
        z1 = self.backbone.noise_to(z0, 1, eps)
        _, taps = self.backbone.unet_features(z1, 1, class_prompt, guidance_scale=1.0)
        return self.aggregator(taps, "syn")

    def aug_steps(self, t: int) -> int:
        T = self.backbone.schedule.T
        return -(-self.full_steps * t // T)  # ceil

    def extract_aug(
        self,
        z0: LatentTensor,
        class_specific_prompt: PromptEmbedding,
        grid: TimestepGrid,
        rng_seed: int,
        force_t: int | None = None,
    ) -> AggregatedFeature:
        """Partial-generation augmentation from a grid-sampled noise level."""
        if class_specific_prompt.kind != CLASS_SPECIFIC_KIND:
            raise ValueError("augmented feature requires a class-specific prompt")
        g = torch.Generator().manual_seed(rng_seed)
        t = force_t if force_t is not None else grid.sample(g)
        T = self.backbone.schedule.T
        eps = self._noise_like(z0.data.shape, rng_seed + 1)
        if t == T:
            # pure-noise endpoint: shares the generative route's start exactly
            z_t = LatentTensor(eps, T)
        else:
            z_t = self.backbone.noise_to(z0, t, eps)
        _, taps = self.backbone.generate(
            z_t, t, class_specific_prompt, self.aug_steps(t), rng_seed
        )
        return self.aggregator(taps, "aug")

    def extract_gen(
        self, class_specific_prompt: PromptEmbedding, rng_seed: int
    ) -> AggregatedFeature:
        """Full-generation replay feature from pure noise; no image decoded."""
        if class_specific_prompt.kind != CLASS_SPECIFIC_KIND:
            raise ValueError("generative feature requires a class-specific prompt")
        T = self.backbone.schedule.T
        z_T = LatentTensor(self._noise_like(self.backbone.latent_shape, rng_seed + 1), T)
        _, taps = self.backbone.generate(
            z_T, T, class_specific_prompt, self.full_steps, rng_seed
        )
        return self.aggregator(taps, "gen")
