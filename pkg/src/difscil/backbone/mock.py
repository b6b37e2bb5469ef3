"""Deterministic mock backbone: seeded affine maps with per-layer reshaping.

Every operation is an exact linear function of its inputs, so contracts
(determinism, guidance degeneracy, call counts, F_aug/F_gen identity) can be
checked bitwise.  The maps are differentiable, which lets prompt
optimization run against the mock as well.
"""
from __future__ import annotations

import torch

from ..schedule import NoiseSchedule, linear_schedule
from .base import DiffusionBackbone, LatentTensor, word_seed

# layer -> (channels, spatial); encoder 1-6, bottleneck 7, decoder 8-12
MOCK_TAP_TABLE = {
    1: (8, 8), 2: (16, 8), 3: (16, 4), 4: (32, 4), 5: (32, 2), 6: (64, 2),
    7: (64, 2), 8: (32, 2), 9: (32, 4), 10: (16, 4), 11: (16, 8), 12: (8, 8),
}


class MockBackbone(DiffusionBackbone):
    input_shape = (3, 16, 16)
    latent_shape = (4, 8, 8)
    tap_table = MOCK_TAP_TABLE
    d_txt = 16

    def __init__(self, seed: int = 0, schedule: NoiseSchedule | None = None):
        super().__init__(schedule or linear_schedule(T=50))
        self.seed = seed
        g = torch.Generator().manual_seed(seed)
        d_img = 3 * 16 * 16
        d_lat = 4 * 8 * 8
        scale = 0.1
        # zero-bias linear encoder: zero image -> zero latent
        self.enc_w = torch.randn(d_lat, d_img, generator=g) * scale
        self.eps_w = torch.randn(d_lat, d_lat, generator=g) * scale
        self.eps_prompt_w = torch.randn(d_lat, self.d_txt, generator=g) * scale
        self.eps_t_w = torch.randn(d_lat, generator=g) * scale
        self.tap_w = {}
        for l, (c, s) in self.tap_table.items():
            d_out = c * s * s
            self.tap_w[l] = {
                "z": torch.randn(d_out, d_lat, generator=g) * scale,
                "p": torch.randn(d_out, self.d_txt, generator=g) * scale,
                "t": torch.randn(d_out, generator=g) * scale,
            }

    def parameter_tensors(self):
        yield self.enc_w
        yield self.eps_w
        yield self.eps_prompt_w
        yield self.eps_t_w
        for l in sorted(self.tap_w):
            yield from (self.tap_w[l][k] for k in ("z", "p", "t"))

    def encode_image(self, image: torch.Tensor) -> LatentTensor:
        self.check_image(image)
        z = (self.enc_w @ image.reshape(-1)).reshape(self.latent_shape)
        return LatentTensor(z, 0)

    def token_embedding(self, word: str) -> torch.Tensor:
        g = torch.Generator().manual_seed(word_seed(word, self.seed))
        return torch.randn(self.d_txt, generator=g)

    def _unet_eval(self, z: torch.Tensor, t: int, tokens: torch.Tensor):
        zf = z.reshape(-1)
        p = tokens.mean(dim=0)
        tt = t / self.schedule.T
        eps = (self.eps_w @ zf + self.eps_prompt_w @ p + self.eps_t_w * tt).reshape(
            self.latent_shape
        )
        taps = {}
        for l, (c, s) in self.tap_table.items():
            w = self.tap_w[l]
            taps[l] = (w["z"] @ zf + w["p"] @ p + w["t"] * tt).reshape(c, s, s)
        return eps, taps
