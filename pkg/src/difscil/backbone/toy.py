"""Trainable toy latent-diffusion backbone (small VAE + 12-tap U-Net).

Trained once, offline, on the bundled synthetic shape/color dataset with the
standard noise-prediction objective; afterwards it is frozen and behaves
exactly like any other backbone.  Class conditioning during training uses a
learned per-class embedding table with unconditional dropout, so the
classifier-free guidance path is meaningful and prompt optimization has a
real optimum to find.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..schedule import NoiseSchedule, linear_schedule
from .base import DiffusionBackbone, LatentTensor, word_seed

TOY_TAP_TABLE = {
    1: (24, 16), 2: (24, 16), 3: (48, 8), 4: (48, 8), 5: (64, 4), 6: (64, 4),
    7: (64, 4), 8: (48, 8), 9: (48, 8), 10: (24, 16), 11: (24, 16), 12: (24, 16),
}
D_TXT = 32


class ToyVae(nn.Module):
    def __init__(self):
        super().__init__()
        self.enc = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 8, 3, padding=1),  # 4 mu + 4 logvar channels
        )
        self.dec = nn.Sequential(
            nn.Conv2d(4, 16, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(16, 16, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 3, 3, padding=1),
        )

    def encode(self, x):
        mu, logvar = self.enc(x).chunk(2, dim=1)
        return mu, logvar

    def decode(self, z):
        return self.dec(z)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of a batch of scalar timesteps -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class FilmBlock(nn.Module):
    """conv -> GroupNorm -> FiLM(scale, shift) -> SiLU."""

    def __init__(self, c_in, c_out, d_cond, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(min(8, c_out), c_out)
        self.film = nn.Linear(d_cond, 2 * c_out)

    def forward(self, x, cond):
        h = self.norm(self.conv(x))
        scale, shift = self.film(cond).chunk(2, dim=-1)
        h = h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        return F.silu(h)


class ToyUNet(nn.Module):
    """12 tapped blocks: encoder 1-6, bottleneck 7, decoder 8-12. Batch-first."""

    def __init__(self, d_txt: int = D_TXT):
        super().__init__()
        d_cond = 64
        self.cond_mlp = nn.Sequential(
            nn.Linear(32 + d_txt, d_cond), nn.SiLU(), nn.Linear(d_cond, d_cond)
        )
        self.b1 = FilmBlock(4, 24, d_cond)
        self.b2 = FilmBlock(24, 24, d_cond)
        self.b3 = FilmBlock(24, 48, d_cond, stride=2)
        self.b4 = FilmBlock(48, 48, d_cond)
        self.b5 = FilmBlock(48, 64, d_cond, stride=2)
        self.b6 = FilmBlock(64, 64, d_cond)
        self.b7 = FilmBlock(64, 64, d_cond)
        self.b8 = FilmBlock(64 + 48, 48, d_cond)
        self.b9 = FilmBlock(48, 48, d_cond)
        self.b10 = FilmBlock(48 + 24, 24, d_cond)
        self.b11 = FilmBlock(24, 24, d_cond)
        self.b12 = FilmBlock(24, 24, d_cond)
        self.out = nn.Conv2d(24, 4, 3, padding=1)

    def forward(self, z, t_frac, prompt_pooled):
        """z: (B, 4, 16, 16); t_frac: (B,); prompt_pooled: (B, d_txt)."""
        t_emb = timestep_embedding(t_frac * 1000.0, 32)
        cond = self.cond_mlp(torch.cat([t_emb, prompt_pooled], dim=-1))
        taps = {}
        h = taps[1] = self.b1(z, cond)
        h = taps[2] = self.b2(h, cond)
        h = taps[3] = self.b3(h, cond)
        h = taps[4] = self.b4(h, cond)
        h = taps[5] = self.b5(h, cond)
        h = taps[6] = self.b6(h, cond)
        h = taps[7] = self.b7(h, cond)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = taps[8] = self.b8(torch.cat([h, taps[4]], dim=1), cond)
        h = taps[9] = self.b9(h, cond)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = taps[10] = self.b10(torch.cat([h, taps[2]], dim=1), cond)
        h = taps[11] = self.b11(h, cond)
        h = taps[12] = self.b12(h, cond)
        return self.out(h), taps


class ToyBackbone(DiffusionBackbone):
    input_shape = (3, 32, 32)
    latent_shape = (4, 16, 16)
    tap_table = TOY_TAP_TABLE
    d_txt = D_TXT
    # latents are unit-scaled, so this only trims exploding predictions
    z0_clip = 3.0

    def __init__(
        self,
        vae: ToyVae,
        unet: ToyUNet,
        latent_scale: float,
        seed: int = 0,
        schedule: NoiseSchedule | None = None,
        recon_threshold: float | None = None,
        word_vectors: dict[str, torch.Tensor] | None = None,
    ):
        super().__init__(schedule or linear_schedule(T=100))
        self.vae = vae.eval()
        self.unet = unet.eval()
        self.latent_scale = latent_scale
        self.seed = seed
        self.recon_threshold = recon_threshold
        self.word_vectors = word_vectors or {}
        for p in self.vae.parameters():
            p.requires_grad_(False)
        for p in self.unet.parameters():
            p.requires_grad_(False)

    def parameter_tensors(self):
        for _, t in sorted(self.vae.state_dict().items()):
            yield t
        for _, t in sorted(self.unet.state_dict().items()):
            yield t
        for _, t in sorted(self.word_vectors.items()):
            yield t

    def encode_image(self, image: torch.Tensor) -> LatentTensor:
        self.check_image(image)
        with torch.no_grad():
            mu, _ = self.vae.encode(image[None])
        return LatentTensor(mu[0] * self.latent_scale, 0)

    def decode_latent(self, z: LatentTensor) -> torch.Tensor:
        with torch.no_grad():
            return self.vae.decode(z.data[None] / self.latent_scale)[0]

    # Class names map to the conditioning vector learned for their class
    # during backbone training — the analogue of a text encoder that knows the
    # class.  Words outside the vocabulary (e.g. filler words in prompt
    # templates) get large seeded random vectors: rendered multi-word prompts
    # therefore start far off the conditioning manifold, which leaves prompt
    # optimization real room to improve, while a bare class-name prompt stays
    # clean.
    unknown_word_scale = 10.0

    def token_embedding(self, word: str) -> torch.Tensor:
        base = self.word_vectors.get(word)
        if base is not None:
            return base.clone()
        g = torch.Generator().manual_seed(word_seed(word, self.seed))
        return self.unknown_word_scale * torch.randn(self.d_txt, generator=g)

    def _unet_eval(self, z: torch.Tensor, t: int, tokens: torch.Tensor):
        t_frac = torch.tensor([t / self.schedule.T])
        eps, taps = self.unet(z[None], t_frac, tokens.mean(dim=0, keepdim=True))
        return eps[0], {l: v[0] for l, v in taps.items()}


def train_toy_backbone(
    images: torch.Tensor,
    labels: torch.Tensor,
    class_names: list[str] | None = None,
    seed: int = 0,
    vae_iters: int = 400,
    unet_iters: int = 4000,
    batch: int = 16,
    lr: float = 2e-3,
    progress: bool = False,
) -> ToyBackbone:
    """One-time offline training of the toy backbone on (N, 3, 32, 32) images.

    The conditional pathway is trained against a learned per-class embedding
    table (dropped to null 10% of the time).  When class_names are given the
    table is kept as the backbone's word vocabulary, so class-name prompts
    carry real class information; see ToyBackbone.token_embedding.
    """
    torch.manual_seed(seed)
    n = images.shape[0]
    k = int(labels.max()) + 1
    schedule = linear_schedule(T=100)

    vae = ToyVae()
    opt = torch.optim.Adam(vae.parameters(), lr=lr)
    g = torch.Generator().manual_seed(seed + 1)
    for it in range(vae_iters):
        idx = torch.randint(n, (32,), generator=g)
        x = images[idx]
        mu, logvar = vae.encode(x)
        z = mu + torch.exp(0.5 * logvar) * torch.randn(mu.shape, generator=g)
        recon = vae.decode(z)
        kl = -0.5 * (1 + logvar - mu.pow(2) - logvar.exp()).mean()
        loss = F.mse_loss(recon, x) + 1e-4 * kl
        opt.zero_grad()
        loss.backward()
        opt.step()
        if progress and it % 100 == 0:
            print(f"vae iter {it}: loss {loss.item():.5f}")

    vae.eval()
    with torch.no_grad():
        mu, _ = vae.encode(images)
        recon_err = F.mse_loss(vae.decode(mu), images, reduction="none")
        recon_err = recon_err.mean(dim=(1, 2, 3))
        latent_scale = float(1.0 / mu.std())
    recon_threshold = float(recon_err.mean() * 3 + 1e-3)

    unet = ToyUNet()
    class_table = nn.Embedding(k, D_TXT)
    opt = torch.optim.Adam(
        list(unet.parameters()) + list(class_table.parameters()), lr=lr
    )
    latents = (mu * latent_scale).detach()
    g = torch.Generator().manual_seed(seed + 2)
    for it in range(unet_iters):
        idx = torch.randint(n, (batch,), generator=g)
        ts = torch.randint(1, schedule.T + 1, (batch,), generator=g)
        eps = torch.randn((batch,) + tuple(latents.shape[1:]), generator=g)
        ab = torch.tensor(
            [schedule.alpha_bar(int(t)) for t in ts], dtype=torch.float32
        )[:, None, None, None]
        z_t = ab.sqrt() * latents[idx] + (1 - ab).sqrt() * eps
        cond = class_table(labels[idx])
        drop = torch.rand(batch, generator=g) < 0.1
        cond = torch.where(drop[:, None], torch.zeros_like(cond), cond)
        eps_pred, _ = unet(z_t, ts.float() / schedule.T, cond)
        loss = F.mse_loss(eps_pred, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if progress and it % 200 == 0:
            print(f"unet iter {it}: loss {loss.item():.5f}")

    word_vectors = None
    if class_names is not None:
        table = class_table.weight.detach()
        word_vectors = {name: table[c].clone() for c, name in enumerate(class_names)}
    return ToyBackbone(
        vae, unet, latent_scale, seed=seed, schedule=schedule,
        recon_threshold=recon_threshold, word_vectors=word_vectors,
    )
