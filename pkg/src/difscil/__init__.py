"""difscil: few-shot class-incremental learning on a frozen diffusion backbone."""

from .aggregate import AggregatedFeature, LayerAggregator
from .backbone import (
    DiffusionBackbone,
    LatentTensor,
    MockBackbone,
    MultiScaleTaps,
    PromptEmbedding,
    ToyBackbone,
)
from .config import RunConfig, load_config, preset_config, toy_run_config
from .features import FeatureCache, FeatureExtractor, TimestepGrid
from .heads import ConvNeck, MlpHead, classify, distill_loss, dr_loss, etf_prototypes
from .protocol import DiffusionFscil, DistillSchedule, beta_schedule, build_sessions
from .runner import prepare_backbone, run_experiment

__version__ = "0.1.0"
