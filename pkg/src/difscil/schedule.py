"""DDPM-style noise schedule with exact DDIM stepping helpers."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class NoiseSchedule:
    """Linear-beta variance schedule over T diffusion steps.

    ``alpha_bars[t-1]`` holds the cumulative product for timestep t in [1, T];
    ``alpha_bar(0)`` is defined as exactly 1 so t = 0 is the clean latent.
    """

    T: int
    betas: torch.Tensor
    alpha_bars: torch.Tensor = field(init=False)

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"schedule needs T >= 2, got {self.T}")
        self.betas = torch.as_tensor(self.betas, dtype=torch.float64)
        if self.betas.shape != (self.T,):
            raise ValueError(f"betas must have shape ({self.T},)")
        if not ((self.betas > 0) & (self.betas < 1)).all():
            raise ValueError("betas must lie in (0, 1)")
        self.alpha_bars = torch.cumprod(1.0 - self.betas, dim=0)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """Standard DDPM linear schedule. For small T the betas are rescaled by
    1000/T so the endpoint stays close to pure noise."""
    scale = 1000.0 / T
    betas = torch.linspace(beta_start * scale, beta_end * scale, T, dtype=torch.float64)
    betas = betas.clamp(max=0.999)
    return NoiseSchedule(T=T, betas=betas)
