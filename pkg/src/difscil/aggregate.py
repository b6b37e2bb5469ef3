"""Adaptive multi-scale fusion of U-Net taps into one unit-norm feature map.

Each tap is projected to a common channel count by a 1x1 convolution,
bilinearly resized to the largest tap resolution, combined with softmax
importance weights (one learnable logit per layer) and L2-normalized.  One
parameter set serves all four feature kinds.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import MultiScaleTaps

SOURCE_KINDS = ("inv", "syn", "aug", "gen")


@dataclass
class AggregatedFeature:
    data: torch.Tensor  # [C_agg, H_agg, W_agg], unit L2 norm
    source_kind: str

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")


class LayerAggregator(nn.Module):
    def __init__(self, tap_table: dict[int, tuple[int, int]],
                 layer_range: tuple[int, int] = (4, 12), c_agg: int = 128):
        super().__init__()
        lo, hi = layer_range
        self.layer_range = layer_range
        self.layers = list(range(lo, hi + 1))
        self.c_agg = c_agg
        self.target_size = max(tap_table[l][1] for l in self.layers)
        self.proj = nn.ModuleDict(
            {str(l): nn.Conv2d(tap_table[l][0], c_agg, 1) for l in self.layers}
        )
        self.logits = nn.Parameter(torch.zeros(len(self.layers)))

    def layer_weights(self) -> dict[int, torch.Tensor]:
        """Softmax importance weights; always a strict probability simplex."""
        beta = torch.softmax(self.logits, dim=0)
        return {l: beta[i] for i, l in enumerate(self.layers)}

    def forward(self, taps: MultiScaleTaps, kind: str) -> AggregatedFeature:
        if taps.layer_range != self.layer_range:
            raise ValueError(
                f"taps cover {taps.layer_range}, aggregator expects {self.layer_range}"
            )
        beta = torch.softmax(self.logits, dim=0)
        fused = 0.0
        for i, l in enumerate(self.layers):
            f = self.proj[str(l)](taps.taps[l][None])
            if f.shape[-1] != self.target_size:
                f = F.interpolate(
                    f, size=(self.target_size, self.target_size),
                    mode="bilinear", align_corners=False,
                )
            fused = fused + beta[i] * f[0]
        fused = fused / fused.flatten().norm().clamp_min(1e-12)
        return AggregatedFeature(fused, kind)
