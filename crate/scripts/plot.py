#!/usr/bin/env python3
"""Plot hinsr outputs.

    plot.py metrics runs/x/metrics.csv      accuracy and loss per epoch
    plot.py episodes runs/x/episodes.csv    test scores against episodes
    plot.py lengths buckets.csv             accuracy per length bucket

Needs matplotlib. Writes a PNG next to the input.
"""
import csv
import sys
from pathlib import Path


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def num(v):
    return float(v) if v not in ("", "NA") else None


def metrics(ax, data):
    for split in ("train", "val"):
        pts = [(i, num(r["accuracy"])) for i, r in enumerate(r for r in data if r["split"] == split)]
        pts = [(i, a) for i, a in pts if a is not None]
        if pts:
            ax.plot(*zip(*pts), label=f"{split} accuracy")
    ax.set_xlabel("epoch (all episodes)")
    ax.legend()


def episodes(ax, data):
    e = [int(r["episodes"]) for r in data]
    for key in ("accuracy", "macro_f1"):
        ax.plot(e, [num(r[key]) for r in data], marker="o", label=key)
    ax.set_xlabel("episodes")
    ax.legend()


def lengths(ax, data):
    labels = [f"({r['lower'] or '-inf'}, {r['upper'] or 'inf'}]" for r in data]
    ax.bar(labels, [num(r["accuracy"]) or 0.0 for r in data])
    ax.set_ylabel("accuracy")


def main():
    if len(sys.argv) != 3 or sys.argv[1] not in ("metrics", "episodes", "lengths"):
        sys.exit(__doc__)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kind, path = sys.argv[1], Path(sys.argv[2])
    fig, ax = plt.subplots(figsize=(7, 4))
    {"metrics": metrics, "episodes": episodes, "lengths": lengths}[kind](ax, rows(path))
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"))


if __name__ == "__main__":
    main()
