#!/usr/bin/env python3
"""Recompute a sweep summary from the raw per-run metrics and compare.

usage: recompute_summary.py OUT_DIR [--tol 1e-12]
"""

import argparse
import csv
import json
import math
import statistics
import sys
from pathlib import Path


def load_runs(root):
    runs = {}
    for manifest in sorted((root / "runs").glob("*/manifest.json")):
        m = json.loads(manifest.read_text())
        with open(manifest.parent / "metrics.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        key = (m["mode"], float(m["noise"]), float(m["imbalance"]), int(m["seed"]))
        runs[key] = rows
    return runs


def pick(rows, selector):
    if selector == "final":
        return rows[-1]
    best = rows[0]
    for r in rows[1:]:
        if float(r["mean_acc"]) > float(best["mean_acc"]):
            best = r
    return best


def stats(xs):
    if not xs:
        return None, None
    mean = statistics.fmean(xs)
    std = statistics.stdev(xs) if len(xs) > 1 else None
    return mean, std


def close(a, b, tol):
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= tol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--tol", type=float, default=1e-12)
    args = ap.parse_args()

    summary = json.loads((args.out_dir / "summary" / "summary.json").read_text())
    runs = load_runs(args.out_dir)
    selector = summary["selector"]
    failed = {f["cell"] for f in summary["failures"]}
    problems = []
    worst = 0.0
    chosen = {}

    for cell in summary["cells"]:
        mode, noise, imb = cell["mode"], float(cell["noise"]), float(cell["imbalance"])
        seeds = sorted(s for (m, n, i, s) in runs if (m, n, i) == (mode, noise, imb))
        seeds = [s for s in cell["completed_seeds"] if s in seeds] if failed else seeds
        if seeds != sorted(cell["completed_seeds"]):
            problems.append(f"{mode} n={noise} i={imb}: seeds {seeds} vs {cell['completed_seeds']}")
            continue
        picked = [pick(runs[(mode, noise, imb, s)], selector) for s in seeds]
        for s, row in zip(seeds, picked):
            chosen[(mode, noise, imb, s)] = row
        overall = [float(r["overall_acc"]) for r in picked]
        mean_acc = [float(r["mean_acc"]) for r in picked]
        for name, xs in (("overall", overall), ("mean_acc", mean_acc)):
            m, sd = stats(xs)
            for label, mine, theirs in ((f"{name}_mean", m, cell[f"{name}_mean"]),
                                        (f"{name}_std", sd, cell[f"{name}_std"])):
                if not close(mine, theirs, args.tol):
                    problems.append(f"{mode} n={noise} i={imb} {label}: {mine} vs {theirs}")
                elif mine is not None:
                    worst = max(worst, abs(mine - theirs))
        k = len(cell["per_class_mean"])
        for c in range(k):
            m, _ = stats([float(r[f"acc_{c}"]) for r in picked])
            if not close(m, cell["per_class_mean"][c], args.tol):
                problems.append(f"{mode} n={noise} i={imb} class {c}: {m} vs {cell['per_class_mean'][c]}")

    for d in summary["deltas"]:
        noise, imb = float(d["noise"]), float(d["imbalance"])
        seeds = [s for (m, n, i, s) in chosen if (m, n, i) == (d["a"], noise, imb)
                 and (d["b"], noise, imb, s) in chosen]
        for metric, col in (("overall_delta", "overall_acc"), ("mean_acc_delta", "mean_acc")):
            diffs = [float(chosen[(d["b"], noise, imb, s)][col]) - float(chosen[(d["a"], noise, imb, s)][col])
                     for s in seeds]
            m, _ = stats(diffs)
            if len(seeds) != d["paired"] or not close(m, d[metric], args.tol):
                problems.append(f"delta {d['a']}->{d['b']} n={noise} i={imb} {metric}: {m} vs {d[metric]}")

    with open(args.out_dir / "summary" / "summary.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    if len(rows) != len(summary["cells"]):
        problems.append("summary.csv and summary.json disagree on the cell count")
    for row, cell in zip(rows, summary["cells"]):
        for col in ("overall_mean", "overall_std", "mean_acc_mean", "mean_acc_std"):
            v = float(row[col]) if row[col] else None
            if not close(v, cell[col], 0.0):
                problems.append(f"summary.csv {col} differs from summary.json")

    for p in problems:
        print("MISMATCH", p)
    print(f"{len(summary['cells'])} cells, {len(runs)} runs, max deviation {worst:.3g}",
          "OK" if not problems else "FAILED")
    return 1 if problems else 0


if __name__ == "__main__":
    sys.exit(main())
