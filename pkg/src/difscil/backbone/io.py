"""Backbone checkpoint container (header "DIFSCIL-BB-v1")."""
from __future__ import annotations

from pathlib import Path

import torch

from ..schedule import NoiseSchedule
from .mock import MockBackbone
from .toy import ToyBackbone, ToyUNet, ToyVae

HEADER = "DIFSCIL-BB-v1"


def save_backbone(backbone, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "header": HEADER,
        "tap_table": backbone.tap_table,
        "schedule": {"T": backbone.schedule.T, "betas": backbone.schedule.betas},
    }
    if isinstance(backbone, MockBackbone):
        payload["kind"] = "mock"
        payload["seed"] = backbone.seed
    elif isinstance(backbone, ToyBackbone):
        payload.update(
            kind="toy",
            seed=backbone.seed,
            vae=backbone.vae.state_dict(),
            unet=backbone.unet.state_dict(),
            latent_scale=backbone.latent_scale,
            recon_threshold=backbone.recon_threshold,
            word_vectors=backbone.word_vectors,
        )
    else:
        raise TypeError(f"cannot serialize backbone of type {type(backbone).__name__}")
    torch.save(payload, path)


def load_backbone(path: str | Path):
    payload = torch.load(Path(path), weights_only=False)
    if payload.get("header") != HEADER:
        raise ValueError(f"not a backbone checkpoint (header {payload.get('header')!r})")
    schedule = NoiseSchedule(T=payload["schedule"]["T"], betas=payload["schedule"]["betas"])
    if payload["kind"] == "mock":
        return MockBackbone(seed=payload["seed"], schedule=schedule)
    vae = ToyVae()
    vae.load_state_dict(payload["vae"])
    unet = ToyUNet()
    unet.load_state_dict(payload["unet"])
    return ToyBackbone(
        vae,
        unet,
        payload["latent_scale"],
        seed=payload["seed"],
        schedule=schedule,
        recon_threshold=payload["recon_threshold"],
        word_vectors=payload.get("word_vectors"),
    )
