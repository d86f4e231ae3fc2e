"""Evaluation report rendering: text table, delimited files, figures.

The eval run writes an aligned metrics table, TSV files (metrics plus
per-probe outcomes), and PNG figures (metric bars and sample retention
curves) into one output directory.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .engine import MemoryBankEngine
from .evalharness import EvalRun, MetricsReport, ProbeRecord

METRIC_COLUMNS = ("Retrieval Acc.", "Correctness", "Coherence", "Ranking")


def _fmt(value: float | None) -> str:
    return f"{value:.3f}" if value is not None else "-"


def metrics_table(report: MetricsReport) -> str:
    """Aligned text table: one row per model, the four metric columns."""
    header = ["Language", "Model", *METRIC_COLUMNS, "N"]
    rows = [
        [
            report.language,
            row.model,
            _fmt(row.retrieval),
            _fmt(row.correctness),
            _fmt(row.coherence),
            _fmt(row.ranking),
            str(row.probes),
        ]
        for row in report.rows
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(header), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def write_metrics_tsv(report: MetricsReport, path: Path) -> Path:
    lines = ["language\tmodel\tretrieval\tcorrectness\tcoherence\tranking\tprobes"]
    for row in report.rows:
        lines.append(
            "\t".join(
                [
                    report.language,
                    row.model,
                    _fmt(row.retrieval),
                    _fmt(row.correctness),
                    _fmt(row.coherence),
                    _fmt(row.ranking),
                    str(row.probes),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_probes_tsv(probes: Sequence[ProbeRecord], path: Path, model: str) -> Path:
    lines = ["probe_id\tuser_id\tasked_on\tnegative_control\tretrieval\tcorrectness\tcoherence\trank"]
    for p in sorted(probes, key=lambda p: p.probe_id):
        labels = p.labels_for(model)
        lines.append(
            "\t".join(
                [
                    p.probe_id,
                    p.user_id,
                    p.asked_on.isoformat(),
                    "1" if p.negative_control else "0",
                    "-" if labels.retrieval is None else str(labels.retrieval),
                    "-" if labels.correctness is None else f"{labels.correctness:g}",
                    "-" if labels.coherence is None else f"{labels.coherence:g}",
                    "-" if labels.rank is None else str(labels.rank),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def plot_metric_bars(report: MetricsReport, path: Path) -> Path:
    """Grouped bars: the four metric means for every model."""
    fig, ax = plt.subplots(figsize=(7, 4))
    metrics = [
        ("retrieval", "Retrieval Acc."),
        ("correctness", "Correctness"),
        ("coherence", "Coherence"),
        ("ranking", "Ranking"),
    ]
    n_models = max(len(report.rows), 1)
    width = 0.8 / n_models
    for m_idx, row in enumerate(report.rows):
        values = [getattr(row, attr) or 0.0 for attr, _ in metrics]
        positions = [i + m_idx * width for i in range(len(metrics))]
        ax.bar(positions, values, width=width, label=row.model)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(metrics))])
    ax.set_xticklabels([label for _, label in metrics])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean")
    ax.set_title(f"Evaluation metrics ({report.language})")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_retention_curves(
    engine: MemoryBankEngine,
    user_id: str,
    path: Path,
    now: dt.datetime | None = None,
    max_pieces: int = 4,
    points: int = 120,
) -> Path:
    """Retention-versus-time curves for a few of the user's pieces.

    Reinforcements appear as vertical reset markers.
    """
    pieces = engine.enumerate_pieces(user_id)
    # Prefer reinforced pieces: their curves show reset markers.
    pieces.sort(key=lambda p: (-p.forgetting.strength, p.piece_id))
    chosen = pieces[:max_pieces]
    fig, ax = plt.subplots(figsize=(7, 4))
    for piece in chosen:
        series = engine.curve(user_id, piece.piece_id, now, points)
        start = series.samples[0][0]
        xs = [(t - start).total_seconds() / 86400.0 for t, _ in series.samples]
        ys = [r for _, r in series.samples]
        (line,) = ax.plot(xs, ys, label=f"{piece.piece_id} (S={piece.forgetting.strength})")
        for reset in series.resets:
            ax.axvline(
                (reset - start).total_seconds() / 86400.0,
                color=line.get_color(),
                linestyle=":",
                alpha=0.5,
            )
    ax.set_xlabel("days since creation")
    ax.set_ylabel("retention")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"Forgetting curves: {user_id}")
    if chosen:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_eval_outputs(
    run: EvalRun, out_dir: Path | str, model: str = "scripted", figures: bool = True
) -> dict[str, Path]:
    """Write the full report bundle; returns the paths by artifact name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics_txt": out / "metrics.txt",
        "metrics_tsv": out / "metrics.tsv",
        "probes_tsv": out / "probes.tsv",
    }
    paths["metrics_txt"].write_text(metrics_table(run.report), encoding="utf-8")
    write_metrics_tsv(run.report, paths["metrics_tsv"])
    write_probes_tsv(run.probes, paths["probes_tsv"], model)
    if figures:
        paths["metrics_png"] = plot_metric_bars(run.report, out / "metrics.png")
        first_user = run.engine.user_ids()[0]
        last_day = max(p.asked_on for p in run.probes)
        now = dt.datetime(last_day.year, last_day.month, last_day.day, 23, 0, tzinfo=dt.timezone.utc)
        paths["retention_png"] = plot_retention_curves(
            run.engine, first_user, out / "retention.png", now
        )
    return paths
