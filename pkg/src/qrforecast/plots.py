"""Render report figures from the delimited outputs.

Figures land in <out_dir>/figures next to the CSV/JSON bundle: the
threshold-accuracy curve, the precision-recall curve with the QRM
reference point, and per-bin precision bars by moneyness.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _maybe_float(s):
    return None if s == "NA" else float(s)


def render_threshold_curve(out_dir) -> str:
    rows = _read_rows(os.path.join(out_dir, "threshold_curve.csv"))
    numeric = [r for r in rows if r["c"] != "QRM"]
    c = [float(r["c"]) for r in numeric]
    acc = [_maybe_float(r["accuracy"]) for r in numeric]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(c, acc, lw=1.5)
    qrm = next((r for r in rows if r["c"] == "QRM"), None)
    if qrm and qrm["accuracy"] != "NA":
        ax.axhline(float(qrm["accuracy"]), ls="--", color="gray", label="QRM accuracy")
        ax.legend()
    ax.set_xlabel("threshold c")
    ax.set_ylabel("accuracy")
    ax.set_title("Accuracy vs decision threshold (validation)")
    ax.grid(alpha=0.3)
    return _save(fig, out_dir, "threshold_curve.png")


def render_pr_curve(out_dir) -> str:
    rows = _read_rows(os.path.join(out_dir, "pr_curve.csv"))
    pts = [
        (_maybe_float(r["recall"]), _maybe_float(r["precision"]))
        for r in rows
        if r["c"] != "QRM"
    ]
    pts = [(x, y) for x, y in pts if x is not None and y is not None]
    fig, ax = plt.subplots(figsize=(6, 5))
    if pts:
        ax.plot(*zip(*pts), lw=1.5, label="classifier")
    qrm = next((r for r in rows if r["c"] == "QRM"), None)
    if qrm and qrm["recall"] != "NA" and qrm["precision"] != "NA":
        ax.plot(float(qrm["recall"]), float(qrm["precision"]), "D", ms=9,
                color="crimson", label="QRM")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title("Precision vs recall (validation)")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, out_dir, "pr_curve.png")


def render_moneyness_bins(out_dir) -> str:
    rows = _read_rows(os.path.join(out_dir, "moneyness_bins.csv"))
    labels = [f"[{r['moneyness_low']}, {r['moneyness_high']})" for r in rows]
    idx = range(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(7, 1.2 * len(rows)), 4.5))
    for offset, (col, name) in enumerate(
        [("precision_qrm", "QRM"), ("precision_classifier", "classifier"),
         ("precision_regressor", "regressor")]
    ):
        vals = [_maybe_float(r[col]) for r in rows]
        xs = [i + (offset - 1) * width for i in idx]
        ax.bar(xs, [v if v is not None else 0.0 for v in vals], width, label=name)
    ax.set_xticks(list(idx))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("precision")
    ax.set_title("Per-bin precision by moneyness (test)")
    ax.legend()
    return _save(fig, out_dir, "moneyness_bins.png")


def render_instability(out_dir, rows) -> str:
    """Norm growth vs time for the backward-heat demonstration."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    by_n: dict[int, list] = {}
    for r in rows:
        by_n.setdefault(r["N"], []).append((r["T"], r["growth_ratio"]))
    for n, pts in sorted(by_n.items()):
        pts.sort()
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"n = {n}")
    ax.set_xlabel("T")
    ax.set_ylabel("norm growth ratio")
    ax.set_title("Backward-heat mode amplification")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    return _save(fig, out_dir, "instability.png")


def render_all(out_dir) -> list[str]:
    return [
        render_threshold_curve(out_dir),
        render_pr_curve(out_dir),
        render_moneyness_bins(out_dir),
    ]


def _save(fig, out_dir, name) -> str:
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    path = os.path.join(fig_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
