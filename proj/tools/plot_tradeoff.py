#!/usr/bin/env python3
"""Utility/risk plots from rplsyn risk.json and utility.json reports.

Each --run is LABEL=DIR where DIR holds risk.json and, optionally,
utility.json (the layout written by `rplsyn run`).
"""

import argparse
import json
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def load_run(spec):
    label, _, path = spec.partition("=")
    if not path:
        raise SystemExit(f"--run expects LABEL=DIR, got {spec!r}")
    d = pathlib.Path(path)
    rows = pd.DataFrame(json.loads((d / "risk.json").read_text())["rows"])
    rows["run"] = label
    util = d / "utility.json"
    u = json.loads(util.read_text())["U"] if util.exists() else None
    return rows, u


def cmap_by_m(df, out, uniques):
    col, base = ("cmap_uniques", "cmap_base_uniques") if uniques else ("cmap_syn", "cmap_base")
    counts = sorted(df.known_count.unique())
    fig, axes = plt.subplots(1, len(counts), figsize=(4 * len(counts), 3.5), sharey=True, squeeze=False)
    for ax, k in zip(axes[0], counts):
        sub = df[df.known_count == k]
        for (run, eps), g in sub.groupby(["run", "epsilon"]):
            g = g.sort_values("m")
            ax.plot(g.m, g[col], marker="o", label=f"{run}, eps={eps}")
        for eps, g in sub.groupby("epsilon"):
            ax.axhline(g[base].iloc[0], ls=":", lw=0.8, color="grey")
        ax.set_title(f"{k} known column(s)")
        ax.set_xlabel("m")
    axes[0][0].set_ylabel("CMAP (uniques)" if uniques else "CMAP")
    axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def tradeoff(df, utils, out, m, known_count, epsilon):
    sel = df[(df.m == m) & (df.known_count == known_count) & (df.epsilon == epsilon)]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for run, g in sel.groupby("run"):
        if utils.get(run) is None:
            continue
        ax.scatter(g.risk_reduction.iloc[0], utils[run])
        ax.annotate(run, (g.risk_reduction.iloc[0], utils[run]), fontsize=8)
    ax.set_xlabel(f"risk reduction (m={m}, |K|={known_count}, eps={epsilon})")
    ax.set_ylabel("aggregated utility U")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", action="append", required=True, help="LABEL=DIR, repeatable")
    ap.add_argument("--out-dir", default=".")
    ap.add_argument("--m", type=int, help="release size for the trade-off panel (default: largest)")
    ap.add_argument("--known-count", type=int, help="known prefix length (default: largest)")
    ap.add_argument("--epsilon", type=int, default=0)
    args = ap.parse_args()

    frames, utils = [], {}
    for spec in args.run:
        rows, u = load_run(spec)
        frames.append(rows)
        utils[rows.run.iloc[0]] = u
    df = pd.concat(frames, ignore_index=True)
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cmap_by_m(df, out / "cmap_by_m.png", uniques=False)
    cmap_by_m(df, out / "cmap_uniques_by_m.png", uniques=True)
    if any(u is not None for u in utils.values()):
        m = args.m if args.m is not None else int(df.m.max())
        k = args.known_count if args.known_count is not None else int(df.known_count.max())
        tradeoff(df, utils, out / "utility_vs_risk.png", m, k, args.epsilon)
    df.to_csv(out / "risk_rows.csv", index=False)


if __name__ == "__main__":
    main()
