# %% [markdown]
# # Training and evaluation
#
# Train on a well-separated instance, then score the unlabeled pool with one
# global Hungarian matching of clusters to classes.

# %%
from __future__ import annotations

from gface.data import generate_synthetic
from gface.evaluation import evaluate_kmeans, evaluate_model
from gface.train import TrainConfig, train

ds = generate_synthetic(7, 4, 16, [100] * 7, class_separation=12.0, seed=0)
cfg = TrainConfig(epochs=40, warmup=15, seed=0)
params, history = train(ds, cfg)

for row in history.rows[::10] + history.rows[-1:]:
    print(f"epoch {row['epoch']:3d}  loss {row['loss_total']:.3f}  "
          f"All {row['acc_all']:.3f}  Old {row['acc_old']:.3f}  New {row['acc_new']:.3f}")

# %%
print(evaluate_model(params, ds).to_text("model"))
x_u, _ = ds.unlabeled_truth()
print(evaluate_kmeans(x_u, ds).to_text("kmeans on raw features"))
