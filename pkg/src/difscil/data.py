"""Bundled synthetic shape/color dataset and base-session augmentation.

14 classes = 7 shapes x 2 colors, rendered deterministically with seeded
jitter in position, size and brightness.  Class names are single words so no
label-map entry is needed; the label map file exists for datasets whose raw
labels are multi-word.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

SHAPES = ["square", "circle", "triangle", "cross", "ring", "hbar", "vbar"]
COLORS = {"red": (1.0, 0.15, 0.15), "blue": (0.15, 0.3, 1.0)}
TOY_CLASS_NAMES = [f"{c}{s}" for s in SHAPES for c in COLORS]  # 14 names


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> torch.Tensor:
    ys, xs = torch.meshgrid(
        torch.arange(size, dtype=torch.float32),
        torch.arange(size, dtype=torch.float32),
        indexing="ij",
    )
    dx, dy = xs - cx, ys - cy
    if shape == "square":
        return ((dx.abs() <= r) & (dy.abs() <= r)).float()
    if shape == "circle":
        return ((dx**2 + dy**2) <= r**2).float()
    if shape == "triangle":
        return ((dy >= -r) & (dy <= r) & (dx.abs() <= (dy + r) / 2)).float()
    if shape == "cross":
        w = max(1.0, r / 2)
        return (((dx.abs() <= w) & (dy.abs() <= r)) | ((dy.abs() <= w) & (dx.abs() <= r))).float()
    if shape == "ring":
        d2 = dx**2 + dy**2
        return ((d2 <= r**2) & (d2 >= (0.55 * r) ** 2)).float()
    if shape == "hbar":
        return ((dy.abs() <= r / 2.5) & (dx.abs() <= r * 1.3)).float()
    if shape == "vbar":
        return ((dx.abs() <= r / 2.5) & (dy.abs() <= r * 1.3)).float()
    raise ValueError(f"unknown shape {shape!r}")


def render_toy_image(class_id: int, sample_seed: int, size: int = 32) -> torch.Tensor:
    """One (3, size, size) image of the class, deterministic in sample_seed."""
    name = TOY_CLASS_NAMES[class_id]
    color_name = "red" if name.startswith("red") else "blue"
    shape = name[len(color_name):]
    g = torch.Generator().manual_seed(sample_seed * 14 + class_id)
    jit = torch.rand(4, generator=g)
    c = size / 2
    cx = c + (jit[0] - 0.5) * size * 0.25
    cy = c + (jit[1] - 0.5) * size * 0.25
    r = size * (0.18 + 0.10 * jit[2])
    brightness = 0.7 + 0.3 * jit[3]
    mask = _shape_mask(shape, size, float(cx), float(cy), float(r))
    rgb = torch.tensor(COLORS[color_name])
    img = torch.full((3, size, size), 0.08)
    img += mask[None] * rgb[:, None, None] * brightness
    img += torch.randn(3, size, size, generator=g) * 0.01
    return img.clamp(0.0, 1.0)


@dataclass(frozen=True)
class SampleRef:
    """Stable reference to one dataset sample."""

    class_id: int
    index: int  # per-class sample index (doubles as the render seed)
    split: str = "train"

    @property
    def sample_id(self) -> int:
        offset = 0 if self.split == "train" else 100000
        return offset + self.class_id * 1000 + self.index


class ToyShapesDataset:
    """Deterministic image provider keyed by SampleRef."""

    num_classes = len(TOY_CLASS_NAMES)
    class_names = TOY_CLASS_NAMES

    def __init__(self, size: int = 32, train_per_class: int = 20, test_per_class: int = 10):
        self.size = size
        self.train_per_class = train_per_class
        self.test_per_class = test_per_class

    def train_refs(self, class_id: int, shots: int | None = None) -> list[SampleRef]:
        n = shots if shots is not None else self.train_per_class
        return [SampleRef(class_id, i, "train") for i in range(n)]

    def test_refs(self, class_id: int) -> list[SampleRef]:
        return [SampleRef(class_id, i, "test") for i in range(self.test_per_class)]

    def image(self, ref: SampleRef) -> torch.Tensor:
        return render_toy_image(ref.class_id, ref.sample_id, self.size)

    def all_train_tensors(self) -> tuple[torch.Tensor, torch.Tensor]:
        images, labels = [], []
        for c in range(self.num_classes):
            for ref in self.train_refs(c):
                images.append(self.image(ref))
                labels.append(c)
        return torch.stack(images), torch.tensor(labels)


def augment_image(image: torch.Tensor, seed: int) -> torch.Tensor:
    """Base-session augmentation: flip, 90-degree rotation, integer
    translation and brightness jitter (deterministic per seed)."""
    g = torch.Generator().manual_seed(seed)
    r = torch.rand(4, generator=g)
    out = image
    if r[0] < 0.5:
        out = out.flip(-1)
    out = torch.rot90(out, int(r[1] * 4) % 4, dims=(-2, -1))
    shift = int((r[2] - 0.5) * 5)
    out = torch.roll(out, shifts=(shift, -shift), dims=(-2, -1))
    out = (out * (0.85 + 0.3 * r[3])).clamp(0.0, 1.0)
    return out
