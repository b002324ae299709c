# %% [markdown]
# # Checking the new-class discrepancy bound
#
# On synthetic data every unlabeled sample has a known class, so both sides
# of the bound can be computed.  The hypothesis family is the trained model,
# a fully supervised reference model and a few weight-perturbed copies.

# %%
from __future__ import annotations

from gface.data import generate_synthetic
from gface.theory import bound_check, metric_properties_test, squared_distance
from gface.train import TrainConfig, train

ds = generate_synthetic(4, 2, 16, [100] * 4, class_separation=4.0, seed=0)
cfg = TrainConfig(epochs=20, warmup=10, seed=0)
params, _ = train(ds, cfg, evaluate=False)
report = bound_check(params, ds, cfg, alpha=2.0, n_perturb=8, reference_epochs=20)
print(report.to_text())

# %% [markdown]
# With `alpha` below `theta` the coefficient on the labeled term turns
# negative and the inequality is no longer asserted.

# %%
print(bound_check(params, ds, cfg, alpha=0.2, n_perturb=2, reference_epochs=5).to_text())

# %% [markdown]
# The pointwise discrepancy is a metric; squared distance is not.

# %%
print(metric_properties_test(seed=0, trials=5000))
print(metric_properties_test(seed=0, trials=5000, metric=squared_distance))
