"""End-to-end experiment driver shared by the CLI and the test suite."""
from __future__ import annotations

from pathlib import Path

import torch
import yaml

from .backbone import MockBackbone, load_backbone, save_backbone
from .backbone.toy import train_toy_backbone
from .config import RunConfig
from .data import ToyShapesDataset
from .evaluation import RunSummary, evaluate_session, summarize
from .protocol import DiffusionFscil, build_sessions


def prepare_backbone(kind: str, seed: int = 0, path: str | Path | None = None,
                     progress: bool = False):
    """Construct (mock) or train (toy) a backbone, optionally saving it."""
    if kind == "mock":
        backbone = MockBackbone(seed=seed)
    elif kind == "toy":
        ds = ToyShapesDataset(size=32)
        images, labels = ds.all_train_tensors()
        backbone = train_toy_backbone(
            images, labels, class_names=ds.class_names, seed=seed, progress=progress
        )
    else:
        backbone = load_backbone(kind)
    if path is not None:
        save_backbone(backbone, path)
    return backbone


def resolve_backbone(cfg: RunConfig, backbone=None):
    if backbone is not None:
        return backbone
    return prepare_backbone(cfg.backbone, seed=cfg.seed)


def build_trainer(cfg: RunConfig, backbone=None) -> DiffusionFscil:
    backbone = resolve_backbone(cfg, backbone)
    dataset = ToyShapesDataset(size=backbone.input_shape[-1])
    sessions = build_sessions(cfg.dataset, dataset)
    return DiffusionFscil(backbone, sessions, dataset, cfg)


def session_test_data(trainer: DiffusionFscil, upto: int):
    data = []
    for spec in trainer.sessions[: upto + 1]:
        for c in spec.class_ids:
            for ref in trainer.dataset.test_refs(c):
                data.append((trainer.dataset.image(ref), c))
    return data


def run_experiment(
    cfg: RunConfig,
    backbone=None,
    run_id: str = "run",
    baseline_final: float | None = None,
) -> tuple[RunSummary, DiffusionFscil]:
    """Full protocol: base session, incrementals, per-session evaluation."""
    torch.manual_seed(cfg.seed)
    trainer = build_trainer(cfg, backbone)
    trainer.backbone.unet_calls = 0
    results = []
    trainer.fit_base(trainer.sessions[0])
    results.append(evaluate_session(trainer, 0, session_test_data(trainer, 0)))
    for spec in trainer.sessions[1:]:
        trainer.fit_session(spec)
        results.append(
            evaluate_session(trainer, spec.index, session_test_data(trainer, spec.index))
        )
    summary = summarize(
        results,
        trainer.sessions[0].class_ids,
        baseline_final=baseline_final,
        run_id=run_id,
        seed=cfg.seed,
    )
    return summary, trainer


def echo_resolved_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
