"""Turn run directories into a summary CSV and an accuracy-vs-round SVG."""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f")


def collect_runs(root):
    """Find run directories (root itself or its children) and load metrics.

    Returns (runs, warnings); each run is a dict with algorithm, seed and
    the parsed metric records.
    """
    candidates = []
    if os.path.isfile(os.path.join(root, "metrics.jsonl")):
        candidates.append(root)
    elif os.path.isdir(root):
        for name in sorted(os.listdir(root)):
            sub = os.path.join(root, name)
            if os.path.isdir(sub):
                candidates.append(sub)
    runs, warnings = [], []
    for d in candidates:
        metrics = os.path.join(d, "metrics.jsonl")
        if not os.path.isfile(metrics):
            warnings.append(f"{d}: no metrics.jsonl, skipped")
            continue
        algorithm, seed = os.path.basename(d), None
        cfg_path = os.path.join(d, "config.json")
        if os.path.isfile(cfg_path):
            with open(cfg_path) as f:
                cfg = json.load(f)
            algorithm = cfg.get("algorithm", algorithm)
            seed = cfg.get("seed")
        else:
            warnings.append(f"{d}: no config.json, using directory name")
        records = []
        with open(metrics) as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        if not records:
            warnings.append(f"{d}: metrics.jsonl is empty")
        runs.append({"dir": d, "algorithm": algorithm, "seed": seed,
                     "records": records})
    return runs, warnings


def write_summary_csv(runs, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["algorithm", "seed", "round",
                    "mean_test_acc", "mean_train_loss"])
        for run in runs:
            for rec in run["records"]:
                w.writerow([run["algorithm"], run["seed"], rec["round"],
                            rec.get("mean_test_acc"),
                            rec.get("mean_train_loss")])


def _mean_curves(runs):
    """Per algorithm: mean test accuracy across seeds at each round."""
    by_algo = defaultdict(lambda: defaultdict(list))
    for run in runs:
        for rec in run["records"]:
            acc = rec.get("mean_test_acc")
            if acc is not None:
                by_algo[run["algorithm"]][rec["round"]].append(acc)
    curves = {}
    for algo, rounds in by_algo.items():
        pts = sorted((r, sum(v) / len(v)) for r, v in rounds.items())
        curves[algo] = pts
    return curves


def write_accuracy_svg(runs, path, width: int = 640, height: int = 400) -> None:
    curves = _mean_curves(runs)
    pad = 48
    max_round = max((p[-1][0] for p in curves.values() if p), default=1) or 1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">round</text>',
        f'<text x="16" y="{height // 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {height // 2})">mean test accuracy</text>',
    ]

    def sx(r):
        return pad + (width - 2 * pad) * r / max_round

    def sy(a):
        return height - pad - (height - 2 * pad) * a

    for i, (algo, pts) in enumerate(sorted(curves.items())):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(r):.1f},{sy(a):.1f}" for r, a in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" '
                     f'stroke-width="1.5" points="{coords}"/>')
        ty = pad + 16 * (i + 1)
        parts.append(f'<text x="{width - pad - 8}" y="{ty}" text-anchor="end" '
                     f'font-size="12" fill="{color}">{algo}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def emit_report(root):
    """Write summary.csv and accuracy.svg under root; returns the paths."""
    runs, warnings = collect_runs(root)
    csv_path = os.path.join(root, "summary.csv")
    svg_path = os.path.join(root, "accuracy.svg")
    write_summary_csv(runs, csv_path)
    write_accuracy_svg(runs, svg_path)
    return csv_path, svg_path, warnings
