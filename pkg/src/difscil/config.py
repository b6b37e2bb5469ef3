"""Run configuration: YAML key/value tree with validation and presets."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid configuration; carries field-level diagnostics."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class FeatureToggles:
    inv: bool = True
    syn: bool = True
    aug: bool = True
    gen: bool = True


@dataclass
class PromptConfig:
    lr: float = 1e-4
    warmup_iters: int = 200
    iters: int = 2000
    batch: int = 1
    n_vec: int = 7  # 5 for CUB-style fine-grained runs


@dataclass
class EfficiencyConfig:
    generation_steps: int = 25  # S_full
    max_iters: int = 0  # 0 = no cap on per-session iterations


@dataclass
class RunConfig:
    dataset: str = "toy"
    backbone: str = "toy"  # mock | toy | path to a backbone checkpoint
    seed: int = 0
    features: FeatureToggles = field(default_factory=FeatureToggles)
    m: int = 4
    single_t: float | None = None  # fraction of T; overrides the m-grid
    beta_init: float = 0.1
    no_distill: bool = False  # the "beta^s = 0" ablation
    distill_head_only: bool = False
    inference_prompt: str | None = None
    # optimizer settings
    lr_mlp: float = 3e-3
    lr_agg: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    base_epochs: int = 10
    aug_epoch_frac: float = 0.2
    inc_iters: int = 30
    replay_per_step: int = 4
    # architecture
    c_agg: int = 128
    d_neck: int = 128
    d_cls: int = 64
    prompt: PromptConfig = field(default_factory=PromptConfig)
    efficiency: EfficiencyConfig = field(default_factory=EfficiencyConfig)
    out_dir: str = "runs/out"

    def validate(self) -> "RunConfig":
        problems = []
        if not self.features.inv:
            problems.append("features.inv: the inversion feature cannot be disabled")
        if self.single_t is None and self.m <= 1:
            problems.append(f"m: timestep grid needs m > 1, got m={self.m}")
        if self.single_t is not None and not 0.0 < self.single_t <= 1.0:
            problems.append(f"single_t: must lie in (0, 1], got {self.single_t}")
        if not 0.0 <= self.beta_init <= 1.0:
            problems.append(f"beta_init: must lie in [0, 1], got {self.beta_init}")
        if self.efficiency.generation_steps < 1:
            problems.append("efficiency.generation_steps: must be >= 1")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _merge(cfg: RunConfig, tree: dict) -> RunConfig:
    for key, value in tree.items():
        if not hasattr(cfg, key):
            raise ConfigError([f"{key}: unknown configuration key"])
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _merge(current, value)
        else:
            setattr(cfg, key, value)
    return cfg


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        tree = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(tree, dict):
            raise ConfigError(["config root must be a key/value mapping"])
        _merge(cfg, tree)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def toy_run_config(**kw) -> RunConfig:
    """Desk-scale defaults calibrated for the bundled toy benchmark."""
    cfg = RunConfig(
        prompt=PromptConfig(lr=2e-2, warmup_iters=50, iters=200, batch=4),
        efficiency=EfficiencyConfig(generation_steps=6),
        base_epochs=18,
        inc_iters=100,
    )
    _merge(cfg, kw)
    return cfg.validate()


PRESETS: dict[str, dict] = {
    # component ablation rows (a)-(d)
    "ablation_a": {"features": {"syn": False, "aug": False, "gen": False}},
    "ablation_b": {"features": {"aug": False, "gen": False}},
    "ablation_c": {"features": {"aug": False}},
    "ablation_d": {},
    # distillation schedule ablation
    "beta_zero": {"no_distill": True},
    "beta_init_0.1": {"beta_init": 0.1},
    "beta_init_0.5": {"beta_init": 0.5},
    "beta_init_0.7": {"beta_init": 0.7},
    # noise-interval variants
    "m2": {"m": 2},
    "m4": {"m": 4},
    "m6": {"m": 6},
    "single_t_03": {"single_t": 0.3},
    "single_t_05": {"single_t": 0.5},
    "single_t_07": {"single_t": 0.7},
    # streamlined variant
    "eff": {"efficiency": {"generation_steps": 4, "max_iters": 15}},
}


def preset_config(name: str, base: RunConfig | None = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r}"])
    cfg = base if base is not None else toy_run_config()
    return _merge(cfg, PRESETS[name]).validate()
