"""Session metrics (accuracy, AA, Base./Inc., FI) and result emission."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class SessionResult:
    session: int
    counts: dict[int, tuple[int, int]]  # class id -> (correct, total)

    @property
    def accuracy(self) -> float:
        correct = sum(c for c, _ in self.counts.values())
        total = sum(t for _, t in self.counts.values())
        return 100.0 * correct / total if total else 0.0

    @property
    def num_classes(self) -> int:
        return len(self.counts)


@dataclass
class RunSummary:
    results: list[SessionResult]
    aa: float = field(init=False)
    acc: float = field(init=False)
    base_acc: float = field(init=False)
    inc_acc: float = field(init=False)
    fi: float | None = None
    base_classes: list[int] = field(default_factory=list)
    run_id: str = "run"
    seed: int = 0


def evaluate_session(model, session_index: int, test_data) -> SessionResult:
    """Top-1 tally of ``model.predict`` over (image, class id) pairs.

    ``test_data`` must cover only classes encountered up to session_index.
    """
    seen = set(model.seen_classes())
    counts: dict[int, list[int]] = {}
    for image, label in test_data:
        if label not in seen:
            raise ValueError(f"test label {label} was never trained")
        c = counts.setdefault(label, [0, 0])
        c[1] += 1
        if model.predict(image) == label:
            c[0] += 1
    return SessionResult(session_index, {k: tuple(v) for k, v in sorted(counts.items())})


def _split_accuracy(result: SessionResult, classes) -> float:
    classes = set(classes)
    correct = sum(c for k, (c, _) in result.counts.items() if k in classes)
    total = sum(t for k, (_, t) in result.counts.items() if k in classes)
    return 100.0 * correct / total if total else 0.0


def summarize(
    results: list[SessionResult],
    base_classes: list[int],
    baseline_final: float | None = None,
    run_id: str = "run",
    seed: int = 0,
) -> RunSummary:
    if not results:
        raise ValueError("need at least one session result")
    summary = RunSummary(results, base_classes=list(base_classes), run_id=run_id, seed=seed)
    summary.aa = sum(r.accuracy for r in results) / len(results)
    final = results[-1]
    summary.acc = final.accuracy
    summary.base_acc = _split_accuracy(final, base_classes)
    inc_classes = [c for c in final.counts if c not in set(base_classes)]
    summary.inc_acc = _split_accuracy(final, inc_classes)
    if baseline_final is not None:
        summary.fi = summary.acc - baseline_final
    return summary


def emit(summary: RunSummary, out_dir: str | Path) -> dict[str, Path]:
    """Write results.jsonl, summary.csv and curve.svg; byte-deterministic."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    jsonl = out / "results.jsonl"
    with jsonl.open("w", newline="\n") as fh:
        for r in summary.results:
            rec = {
                "run_id": summary.run_id,
                "seed": summary.seed,
                "session": r.session,
                "num_classes": r.num_classes,
                "acc": r.accuracy,
                "per_class": [
                    {"class_id": k, "correct": c, "total": t}
                    for k, (c, t) in r.counts.items()
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    files["results"] = jsonl

    csv_path = out / "summary.csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run_id", "session", "acc", "aa", "base", "inc", "fi"])
    writer.writerow(
        [
            summary.run_id,
            summary.results[-1].session,
            f"{summary.acc:.1f}",
            f"{summary.aa:.1f}",
            f"{summary.base_acc:.1f}",
            f"{summary.inc_acc:.1f}",
            "" if summary.fi is None else f"{summary.fi:+.1f}",
        ]
    )
    csv_path.write_text(buf.getvalue())
    files["summary"] = csv_path

    files["curve"] = _write_curve(summary, out / "curve.svg")
    return files


def _write_curve(summary: RunSummary, path: Path) -> Path:
    """Minimal hand-rolled SVG line chart of session accuracy."""
    w, h, pad = 480, 300, 40
    n = len(summary.results)
    xs = [pad + (w - 2 * pad) * (i / max(1, n - 1)) for i in range(n)]
    ys = [h - pad - (h - 2 * pad) * (r.accuracy / 100.0) for r in summary.results]
    points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<polyline points="{points}" fill="none" stroke="#1f6fb2" stroke-width="2"/>',
    ]
    for i, (x, y) in enumerate(zip(xs, ys)):
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="#1f6fb2"/>')
        parts.append(
            f'<text x="{x:.1f}" y="{h - pad + 16}" font-size="10" text-anchor="middle">{i}</text>'
        )
    parts.append(
        f'<text x="{w / 2}" y="{h - 8}" font-size="11" text-anchor="middle">session</text>'
    )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path
