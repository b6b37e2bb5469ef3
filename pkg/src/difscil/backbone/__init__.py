from .base import (
    CLASS_NAME_KIND,
    CLASS_SPECIFIC_KIND,
    NULL_KIND,
    DiffusionBackbone,
    LatentTensor,
    MultiScaleTaps,
    PromptEmbedding,
    tensor_checksum,
    word_seed,
)
from .io import load_backbone, save_backbone
from .mock import MockBackbone
from .toy import ToyBackbone, train_toy_backbone

__all__ = [
    "CLASS_NAME_KIND",
    "CLASS_SPECIFIC_KIND",
    "NULL_KIND",
    "DiffusionBackbone",
    "LatentTensor",
    "MultiScaleTaps",
    "PromptEmbedding",
    "MockBackbone",
    "ToyBackbone",
    "train_toy_backbone",
    "load_backbone",
    "save_backbone",
    "tensor_checksum",
    "word_seed",
]
