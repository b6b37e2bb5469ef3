"""Class prompts: label normalization, templates, learnable embeddings.

A class-specific prompt is a small set of learnable token vectors initialized
from the class-name embedding and optimized with the frozen backbone's
noise-prediction loss; only the prompt vectors ever receive gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .backbone import (
    CLASS_NAME_KIND,
    CLASS_SPECIFIC_KIND,
    DiffusionBackbone,
    PromptEmbedding,
)

TEMPLATES = [
    "a photo of a {}", "a rendering of a {}", "a cropped photo of the {}",
    "the photo of a {}", "a photo of a clean {}", "a photo of a dirty {}",
    "a dark photo of the {}", "a photo of my {}", "a photo of the cool {}",
    "a close-up photo of a {}", "a bright photo of the {}",
    "a cropped photo of a {}", "a photo of the {}", "a good photo of the {}",
    "a photo of one {}", "a close-up photo of the {}", "a rendition of the {}",
    "a photo of the clean {}", "a rendition of a {}", "a photo of a nice {}",
    "a good photo of a {}", "a photo of the nice {}", "a photo of the small {}",
    "a photo of the weird {}", "a photo of the large {}", "a photo of a cool {}",
    "a photo of a small {}",
]

PROMPT_STORE_HEADER = "DIFSCIL-PE-v1"


class LabelMapError(ValueError):
    pass


def normalize_label(raw: str, label_map: dict[str, str] | None = None) -> str:
    """Map a raw dataset label to its single-word form."""
    if label_map and raw in label_map:
        word = label_map[raw]
        if any(ch.isspace() for ch in word):
            raise LabelMapError(f"mapped label {word!r} still contains whitespace")
        return word
    if any(ch.isspace() for ch in raw) or "," in raw:
        raise LabelMapError(f"multi-word label {raw!r} has no single-word mapping")
    return raw


def validate_templates(templates: list[str]) -> list[str]:
    if not templates:
        raise ValueError("template set is empty")
    for t in templates:
        if t.count("{}") != 1:
            raise ValueError(f"template {t!r} must contain exactly one placeholder")
    return templates


@dataclass
class ClassPromptEmbedding:
    class_id: int
    label: str
    vectors: torch.Tensor  # (n_vec, d_txt), the learnable tokens
    frozen: bool = False
    step: int = field(default=0)

    def clone(self) -> "ClassPromptEmbedding":
        return ClassPromptEmbedding(
            self.class_id, self.label, self.vectors.detach().clone(),
            frozen=self.frozen, step=self.step,
        )


def render_prompt(
    template: str,
    label: str,
    backbone: DiffusionBackbone,
    embedding: ClassPromptEmbedding | None = None,
) -> PromptEmbedding:
    """Tokenize a filled template into embedding vectors.

    Tokenization is whitespace-based over the backbone's word embeddings.
    When a learnable embedding is given, the label's single token position is
    replaced by its n_vec vectors and the prompt kind becomes class-specific.
    """
    if template.count("{}") != 1:
        raise ValueError(f"template {template!r} must contain exactly one placeholder")
    words = template.format(label).split()
    rows = []
    for w in words:
        if w == label and embedding is not None:
            rows.append(embedding.vectors)
        else:
            rows.append(backbone.token_embedding(w)[None])
    tokens = torch.cat(rows, dim=0)
    kind = CLASS_SPECIFIC_KIND if embedding is not None else CLASS_NAME_KIND
    return PromptEmbedding(tokens, kind=kind)


def init_embedding(
    label: str, n_vec: int, backbone: DiffusionBackbone, class_id: int = -1
) -> ClassPromptEmbedding:
    """All n_vec vectors start as the class-name token embedding."""
    if any(ch.isspace() for ch in label):
        raise ValueError(f"label {label!r} must be a single word")
    base = backbone.token_embedding(label)
    return ClassPromptEmbedding(class_id, label, base[None].repeat(n_vec, 1))


def optimize_embedding(
    emb: ClassPromptEmbedding,
    class_images: list[torch.Tensor],
    backbone: DiffusionBackbone,
    templates: list[str] | None = None,
    lr: float = 1e-4,
    warmup_iters: int = 200,
    iters: int = 2000,
    batch: int = 1,
    seed: int = 0,
) -> ClassPromptEmbedding:
    """Textual-inversion optimization of one class prompt.

    Each iteration samples an image, a template, a uniform timestep in
    [1, T] and a noise draw, and minimizes the noise-prediction error of the
    frozen backbone with the rendered class-specific prompt.  The learning
    rate ramps linearly over ``warmup_iters`` then stays constant.  The
    per-iteration loss trace is attached as ``loss_trace``.
    """
    if not class_images:
        raise ValueError(f"no images provided for class {emb.label!r}")
    templates = validate_templates(templates or TEMPLATES)
    result = emb.clone()
    if iters == 0:
        result.loss_trace = []
        return result
    vectors = result.vectors.requires_grad_(True)
    opt = torch.optim.Adam([vectors], lr=lr)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda it: min(1.0, (it + 1) / max(1, warmup_iters))
    )
    g = torch.Generator().manual_seed(seed)
    latents = [backbone.encode_image(img).data for img in class_images]
    trace = []
    for it in range(iters):
        opt.zero_grad()
        loss = 0.0
        for _ in range(batch):
            i = int(torch.randint(len(latents), (1,), generator=g))
            tpl = templates[int(torch.randint(len(templates), (1,), generator=g))]
            t = int(torch.randint(1, backbone.schedule.T + 1, (1,), generator=g))
            eps = torch.randn(latents[i].shape, generator=g)
            ab = backbone.schedule.alpha_bar(t)
            z_t = math.sqrt(ab) * latents[i] + math.sqrt(1 - ab) * eps
            prompt = render_prompt(tpl, emb.label, backbone, result)
            eps_pred, _ = backbone._unet_eval(z_t, t, prompt.tokens)
            loss = loss + ((eps - eps_pred) ** 2).mean()
        loss = loss / batch
        loss.backward()
        opt.step()
        sched.step()
        trace.append(float(loss.detach()))
    result.vectors = vectors.detach()
    result.frozen = True
    result.step = iters
    result.loss_trace = trace
    return result


class PromptStore:
    """Per-class optimized embeddings, serializable as one container."""

    def __init__(self):
        self._store: dict[int, ClassPromptEmbedding] = {}

    def add(self, emb: ClassPromptEmbedding):
        if emb.class_id in self._store:
            raise ValueError(f"class {emb.class_id} already has a prompt")
        self._store[emb.class_id] = emb

    def get(self, class_id: int) -> ClassPromptEmbedding:
        return self._store[class_id]

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._store

    def class_ids(self) -> list[int]:
        return sorted(self._store)

    def state_dict(self) -> dict:
        return {
            "header": PROMPT_STORE_HEADER,
            "records": [
                {
                    "class_id": e.class_id,
                    "label": e.label,
                    "n_vec": e.vectors.shape[0],
                    "vectors": e.vectors,
                }
                for e in self._store.values()
            ],
        }

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "PromptStore":
        payload = torch.load(Path(path), weights_only=False)
        if payload.get("header") != PROMPT_STORE_HEADER:
            raise ValueError("not a prompt store container")
        store = cls()
        for rec in payload["records"]:
            store.add(
                ClassPromptEmbedding(
                    rec["class_id"], rec["label"], rec["vectors"], frozen=True
                )
            )
        return store
