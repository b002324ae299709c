# %% [markdown]
# # Debiasing ablation
#
# Imbalanced classes with one old class pulled towards a new one.  We train
# twice per seed: with every loss term, and with the adversarial,
# confusion-weighted and cluster terms switched off.  The Old-class accuracy
# curve is written out as SVG for both runs.

# %%
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from gface.data import generate_synthetic
from gface.report import line_plot
from gface.train import TrainConfig, train

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 2)
out = Path("ablation_out")
out.mkdir(exist_ok=True)

summary = {"full": [], "baseline": []}
for seed in seeds:
    ds = generate_synthetic(7, 4, 16, [300, 200, 120, 80, 150, 100, 60], class_separation=4.0,
                            overlap_pairs=((3, 4, 0.9),), seed=seed)
    cfg = TrainConfig(epochs=60, warmup=20, seed=seed)
    curves = {}
    for name, c in (("full", cfg), ("baseline", cfg.ablated())):
        _, hist = train(ds, c)
        old = hist.column("acc_old")
        curves[name] = old
        summary[name].append((old[-1], old.max() - old[-1]))
    (out / f"old_acc_seed{seed}.svg").write_text(
        line_plot(np.arange(cfg.epochs), curves, f"Old ACC, seed {seed}", ylabel="Old ACC"))

# %%
for name, rows in summary.items():
    final, drop = np.mean(rows, axis=0)
    print(f"{name:8s}  final Old ACC {final:.4f}  peak-to-final drop {drop:.4f}")
print(f"plots in {out.resolve()}")
