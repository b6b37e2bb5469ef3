"""Shared fixtures; the trained toy backbone is cached on disk across runs."""
from pathlib import Path

import pytest

from difscil.backbone import load_backbone, save_backbone
from difscil.backbone.toy import train_toy_backbone
from difscil.data import ToyShapesDataset

CACHE_DIR = Path(__file__).parent / ".cache"


def _toy_backbone(seed: int):
    path = CACHE_DIR / f"toy_backbone_seed{seed}.pt"
    if path.exists():
        return load_backbone(path)
    ds = ToyShapesDataset(size=32)
    images, labels = ds.all_train_tensors()
    backbone = train_toy_backbone(images, labels, class_names=ds.class_names, seed=seed)
    save_backbone(backbone, path)
    return backbone


@pytest.fixture(scope="session")
def toy_backbone():
    return _toy_backbone(seed=0)


def pytest_terminal_summary(terminalreporter):
    """One visible pass/fail line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in rep.nodeid or rep.when != "call":
                continue
            name = rep.nodeid.rsplit("::", 1)[-1]
            if not name.startswith("test_criterion_"):
                continue
            rest = name[len("test_criterion_"):]
            num, _, desc = rest.partition("_")
            status = "PASS" if rep.outcome == "passed" else "FAIL"
            lines[int(num)] = f"criterion {int(num):2d} {status} - {desc.replace('_', ' ')}"
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
