"""Result tables (one row per evaluation point) and progression figures."""

from __future__ import annotations

import csv
from pathlib import Path

COLUMNS = (
    ("name", "Data", "{}"),
    ("wer", "WER(%)", "{:.2f}"),
    ("cer", "CER(%)", "{:.2f}"),
    ("tts_l2", "L2-norm^2", "{:.3f}"),
    ("bleu1", "BLEU1", "{:.2f}"),
    ("r1", "R@1", "{:.1f}"),
    ("r5", "R@5", "{:.1f}"),
    ("r10", "R@10", "{:.1f}"),
    ("median_rank", "med r", "{:g}"),
)


def _row(record: dict) -> dict:
    r = dict(record)
    for k in ("1", "5", "10"):
        r[f"r{k}"] = record.get("recall_at", {}).get(k, float("nan"))
    return r


def table_rows(history: list[dict]) -> list[list[str]]:
    return [[fmt.format(_row(rec)[key]) for key, _, fmt in COLUMNS] for rec in history]


def format_table(history: list[dict]) -> str:
    """Aligned plain-text table: a header, a rule, one row per record."""
    header = [title for _, title, _ in COLUMNS]
    rows = table_rows(history)
    widths = [max(len(v) for v in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w)
                               for i, (v, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)


def write_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block"] + [key for key, _, _ in COLUMNS])
        for rec, row in zip(history, table_rows(history)):
            w.writerow([rec["block"]] + row)


def plot_progression(history: list[dict], path, title: str = "") -> None:
    """Four panels (WER, L2, BLEU1, median rank) against evaluation point."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [r["name"] for r in history]
    xs = list(range(len(history)))
    panels = (("wer", "WER (%)"), ("tts_l2", "TTS L2-norm^2"), ("bleu1", "BLEU1"), ("median_rank", "median rank"))
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.2))
    for ax, (key, label) in zip(axes, panels):
        ax.plot(xs, [r[key] for r in history], marker="o")
        ax.set_xticks(xs)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(label, fontsize=10)
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(history: list[dict], out_dir, title: str = "") -> dict[str, Path]:
    """Write ``report.txt``, ``report.csv`` and ``progression.png`` into ``out_dir``."""
    out = Path(out_dir)
    paths = {"table": out / "report.txt", "csv": out / "report.csv", "figure": out / "progression.png"}
    paths["table"].write_text(format_table(history) + "\n")
    write_csv(history, paths["csv"])
    plot_progression(history, paths["figure"], title)
    return paths
