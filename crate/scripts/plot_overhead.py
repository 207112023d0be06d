#!/usr/bin/env python3
"""Plot craftkit-bench reports.

Overhead reports (from `craftkit-bench lanczos --out x.csv`) become one
stacked bar per file; phase reports (from `craftkit-bench barrier`) become one
bar per recovery phase.

    scripts/plot_overhead.py sync.csv async.csv node.csv -o overhead.png
"""

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

OVERHEAD = ["baseline", "oh_cp", "oh_res", "oh_rec", "oh_redo"]


def read(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_overheads(ax, files):
    # rank 0 (first row) of every report
    rows = [(path, read(path)[0]) for path in files]
    unit = rows[0][1]["unit"]
    bottoms = [0.0] * len(rows)
    for col in OVERHEAD:
        values = [float(r[col]) for _, r in rows]
        ax.bar(range(len(rows)), values, bottom=bottoms, label=col)
        bottoms = [b + v for b, v in zip(bottoms, values)]
    labels = [f"{r['mode']}\n{path}" for path, r in rows]
    ax.set_xticks(range(len(rows)), labels, fontsize=8)
    ax.set_ylabel(unit)
    ax.legend()


def plot_phases(ax, files):
    for path in files:
        rows = read(path)
        ax.bar([r["phase"] for r in rows], [float(r["duration"]) for r in rows], label=path)
    ax.set_ylabel(rows[0]["unit"] if rows else "")
    ax.tick_params(axis="x", labelrotation=30)
    ax.legend()


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("reports", nargs="+")
    p.add_argument("-o", "--output", default="overhead.png")
    args = p.parse_args()

    header = read(args.reports[0])
    if not header:
        sys.exit(f"{args.reports[0]} has no rows")
    fig, ax = plt.subplots(figsize=(7, 4))
    if "phase" in header[0]:
        plot_phases(ax, args.reports)
    else:
        plot_overheads(ax, args.reports)
    fig.tight_layout()
    fig.savefig(args.output)
    print(args.output)


if __name__ == "__main__":
    main()
