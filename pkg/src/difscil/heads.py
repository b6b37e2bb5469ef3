"""Trainable necks, the fixed simplex-ETF classifier and the losses.

The prototype matrix is constructed once with K_total columns covering every
session and never receives gradients.  Losses:

  dot-regression   L = 1/2 (w_y^T h - 1)^2          on unit-norm features
  distillation     L = 1 - cos(teacher(F), student(F)),  student grads only
"""
from __future__ import annotations

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from .aggregate import AggregatedFeature


class ConvNeck(nn.Module):
    """conv -> BatchNorm -> SiLU -> 1x1 bottleneck -> global average pool."""

    def __init__(self, c_in: int = 128, c_mid: int = 128, d_neck: int = 128):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_mid, 3, padding=1)
        self.norm = nn.BatchNorm2d(c_mid)
        self.bottleneck = nn.Conv2d(c_mid, d_neck, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.bottleneck(F.silu(self.norm(self.conv(x))))
        return h.mean(dim=(-2, -1))


class MlpHead(nn.Module):
    """Two linear+GroupNorm+SiLU blocks with a residual sum, then L2 norm."""

    def __init__(self, d_in: int = 128, d_cls: int = 64, groups: int = 8):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_cls)
        self.gn1 = nn.GroupNorm(groups, d_cls)
        self.fc2 = nn.Linear(d_cls, d_cls)
        self.gn2 = nn.GroupNorm(groups, d_cls)

    def pre_norm(self, v: torch.Tensor) -> torch.Tensor:
        y = F.silu(self.gn1(self.fc1(v)))
        z = F.silu(self.gn2(self.fc2(y)))
        return y + z

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        h = self.pre_norm(v)
        return h / h.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def etf_prototypes(K: int, d: int, seed: int = 0) -> torch.Tensor:
    """Fixed simplex-ETF matrix W of shape (d, K).

    W = sqrt(K/(K-1)) * U (I - 11^T/K) realized through an orthonormal basis
    of the rank-(K-1) simplex subspace, then a seeded orthonormal embedding
    into d dimensions; valid for any d >= K - 1.
    """
    if d < K - 1:
        raise ValueError(f"need d >= K - 1, got d={d}, K={K}")
    m = torch.eye(K, dtype=torch.float64) - torch.full((K, K), 1.0 / K, dtype=torch.float64)
    m = m * (K / (K - 1)) ** 0.5
    # orthonormal basis of the simplex subspace (drop the null direction)
    basis, _, _ = torch.linalg.svd(m)
    coords = basis[:, : K - 1].T @ m  # (K-1, K)
    g = torch.Generator().manual_seed(seed)
    q, _ = torch.linalg.qr(torch.randn(d, K - 1, generator=g, dtype=torch.float64))
    return (q @ coords).to(torch.float32)


def dr_loss(h: torch.Tensor, y: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
    """Mean dot-regression loss over a batch of unit-norm features."""
    h = torch.atleast_2d(h)
    y = torch.atleast_1d(y)
    if (y < 0).any() or (y >= W.shape[1]).any():
        raise ValueError("class id out of prototype range")
    dots = (h * W[:, y].T).sum(dim=-1)
    return 0.5 * ((dots - 1.0) ** 2).mean()


def classify(h: torch.Tensor, W: torch.Tensor, allowed) -> int:
    """Nearest-prototype decision over the allowed class set.

    Ties break toward the smallest class id (argmax over ascending ids).
    """
    allowed = sorted(allowed)
    if not allowed:
        raise ValueError("allowed class set is empty")
    scores = W[:, allowed].T @ h
    return allowed[int(torch.argmax(scores))]


class TeacherSnapshot:
    """Frozen copy of (neck, head) taken at a session boundary."""

    def __init__(self, neck: ConvNeck, head: MlpHead):
        self.neck = copy.deepcopy(neck).eval()
        self.head = copy.deepcopy(head).eval()
        for p in self.neck.parameters():
            p.requires_grad_(False)
        for p in self.head.parameters():
            p.requires_grad_(False)

    def __call__(self, feature: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.head(self.neck(feature))


def distill_loss(
    feature: AggregatedFeature | torch.Tensor,
    teacher: TeacherSnapshot,
    student: tuple[ConvNeck, MlpHead],
    head_only: bool = False,
) -> torch.Tensor:
    """1 - cosine similarity between teacher and student outputs, in [0, 2]."""
    x = feature.data if isinstance(feature, AggregatedFeature) else feature
    x = x[None] if x.dim() == 3 else x
    neck, head = student
    if head_only:
        with torch.no_grad():
            v = neck(x)
        t_out = teacher.head(teacher.neck(x))
        s_out = head(v)
    else:
        t_out = teacher(x)
        s_out = head(neck(x))
    cos = F.cosine_similarity(t_out, s_out, dim=-1)
    return (1.0 - cos).mean()
