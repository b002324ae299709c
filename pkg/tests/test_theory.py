from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import stochastic_rows
from gface.data import generate_synthetic
from gface.theory import (BoundViolation, Hypothesis, decompose_check, f_discrepancy,
                          new_class_bound, metric_properties_test, perturbed_family,
                          squared_distance, xi_dataset, xi_pointwise, xi_rows)
from gface.model import init_model


def table(probs: np.ndarray, id: str) -> Hypothesis:
    """Hypothesis that looks up a fixed probability row by the integer in column 0."""
    return Hypothesis(lambda x: probs[x[:, 0].astype(int)], id)


def oracle(labels, K, id="F") -> Hypothesis:
    return table(np.eye(K)[np.asarray(labels)], id)


# ---------------------------------------------------------------- pointwise and dataset discrepancy

def test_xi_pointwise_examples():
    assert xi_pointwise([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert xi_pointwise([1, 0], [0, 1]) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_xi_pointwise_rejects_non_distributions():
    with pytest.raises(ValueError):
        xi_pointwise([0.5, 0.6], [1, 0])
    with pytest.raises(ValueError):
        xi_pointwise([1.5, -0.5], [1, 0])


def test_xi_symmetric_on_random_pairs(rng):
    P, Q = stochastic_rows(rng, 1000, 5), stochastic_rows(rng, 1000, 5)
    assert np.array_equal(xi_rows(P, Q), xi_rows(Q, P))


def test_xi_dataset_identities(rng):
    x = np.arange(10, dtype=float)[:, None]
    probs = stochastic_rows(rng, 10, 3)
    A = table(probs, "A")
    assert xi_dataset(A, table(probs.copy(), "B"), x) == 0.0
    labels = rng.integers(0, 3, size=10)
    assert xi_dataset(oracle(labels, 3), labels, x) == 0.0


def test_xi_dataset_is_mean_of_distances(rng):
    x = np.arange(10, dtype=float)[:, None]
    pa, pb = stochastic_rows(rng, 10, 4), stochastic_rows(rng, 10, 4)
    want = sum(math.dist(a, b) for a, b in zip(pa, pb)) / 10
    assert xi_dataset(table(pa, "A"), table(pb, "B"), x) == pytest.approx(want, abs=1e-12)


def test_xi_dataset_rejects_empty():
    with pytest.raises(ValueError):
        xi_dataset(oracle([0], 2), [0], np.zeros((0, 1)))


def test_hypothesis_output_must_be_stochastic():
    bad = Hypothesis(lambda x: np.ones((len(x), 2)), "bad")
    with pytest.raises(ValueError, match="bad"):
        bad(np.zeros((3, 1)))


def test_column_alignment_relabels_outputs():
    p = init_model(3, 4, 2, 4, 3, seed=0)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assignment = np.array([2, 0, 1])  # cluster c is class assignment[c]
    raw = Hypothesis.from_params(p)(x)
    aligned = Hypothesis.from_params(p, assignment=assignment)(x)
    for c, k in enumerate(assignment):
        assert np.array_equal(aligned[:, k], raw[:, c])


# ---------------------------------------------------------------- decomposition

def test_decomposition_residual_random_trials():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, K = int(rng.integers(2, 40)), int(rng.integers(2, 7))
        H = table(stochastic_rows(rng, n, K), "H")
        labels = rng.integers(0, K, size=n)
        is_old = rng.random(n) < rng.random()
        worst = max(worst, decompose_check(H, labels, np.arange(n)[:, None], is_old).residual)
    assert worst <= 1e-12


def test_decomposition_all_old(rng):
    H = table(stochastic_rows(rng, 6, 3), "H")
    d = decompose_check(H, rng.integers(0, 3, size=6), np.arange(6)[:, None], np.ones(6, bool))
    assert d.theta == 1.0 and d.xi_u == pytest.approx(d.xi_old, abs=1e-15)


# ---------------------------------------------------------------- F-discrepancy

def _brute_delta(family, x_l, x_u, alpha):
    vals = []
    for a in family:
        for b in family:
            vals.append(abs(xi_dataset(a, b, x_u) - alpha * xi_dataset(a, b, x_l)))
    return max(vals)


def test_singleton_family_has_zero_discrepancy(rng):
    H = table(stochastic_rows(rng, 8, 3), "H")
    x = np.arange(8, dtype=float)[:, None]
    assert f_discrepancy([H], x[:3], x[3:], 2.0) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_pair_family_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    fam = [table(stochastic_rows(rng, 12, 4), f"h{i}") for i in range(2)]
    x = np.arange(12, dtype=float)[:, None]
    got = f_discrepancy(fam, x[:5], x[5:], 2.0)
    assert got == pytest.approx(_brute_delta(fam, x[:5], x[5:], 2.0), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_discrepancy_monotone_in_family(seed, n):
    rng = np.random.default_rng(seed)
    fam = [table(stochastic_rows(rng, 10, 3), f"h{i}") for i in range(n + 1)]
    x = np.arange(10, dtype=float)[:, None]
    assert f_discrepancy(fam[:n], x[:4], x[4:], 1.5) <= f_discrepancy(fam, x[:4], x[4:], 1.5)


# ---------------------------------------------------------------- bound

def _lookup_dataset(K=4, N=2, per=10, seed=0):
    """A dataset whose single feature is the row index, for table hypotheses."""
    ds = generate_synthetic(K, N, 2, [per] * K, seed=seed)
    from gface.data import SplitDataset

    n = len(ds)
    feats = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    return SplitDataset(ds.ids, feats, ds.classes, ds.labeled, ds.old_classes, ds.new_classes)


def test_perfect_predictor_gives_zero_lhs():
    ds = _lookup_dataset()
    F = oracle(ds.classes, ds.K)
    rep = new_class_bound(F, F, [F], ds, alpha=2.0)
    assert rep.lhs == 0.0 and rep.lambda_const == 0.0 and rep.delta == 0.0
    assert rep.rhs == pytest.approx(rep.delta / (1 - rep.theta)) and rep.holds


def test_rhs_recomputed_by_hand(rng):
    ds = _lookup_dataset(seed=1)
    n = len(ds)
    H = table(stochastic_rows(rng, n, ds.K), "H")
    S = table(stochastic_rows(rng, n, ds.K), "H*")
    rep = new_class_bound(H, S, [H, S], ds, alpha=2.0, strict=False)

    xl = ds.features[ds.labeled]
    xu, yu = ds.unlabeled_truth()
    yl = ds.classes[ds.labeled]
    old = np.isin(yu, ds.old_classes)
    theta = old.mean()
    delta = _brute_delta([H, S], xl, xu, 2.0)
    lam = 2.0 * xi_dataset(S, yl, xl) + xi_dataset(S, yu, xu)
    rhs = ((2.0 - theta) * xi_dataset(H, yl, xl) + delta + lam) / (1 - theta)
    assert rep.rhs == pytest.approx(rhs, abs=1e-12)
    assert rep.lhs == pytest.approx(xi_dataset(H, yu[~old], xu[~old]), abs=1e-12)
    assert rep.margin == pytest.approx(rep.rhs - rep.lhs)


def test_family_must_contain_both_models(rng):
    ds = _lookup_dataset()
    H = table(stochastic_rows(rng, len(ds), ds.K), "H")
    with pytest.raises(ValueError):
        new_class_bound(H, H, [oracle(ds.classes, ds.K)], ds, 2.0)


def test_small_alpha_is_flagged_not_asserted(rng):
    ds = _lookup_dataset()
    H = table(stochastic_rows(rng, len(ds), ds.K), "H")
    rep = new_class_bound(H, H, [H], ds, alpha=0.1)
    assert not rep.coefficient_positive and not rep.checked
    assert "coefficient nonpositive" in rep.to_text()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 4.0))
def test_bound_holds_whenever_assumption_holds(seed, alpha):
    rng = np.random.default_rng(seed)
    ds = _lookup_dataset(per=8, seed=seed % 7)
    n = len(ds)
    truth = np.eye(ds.K)[ds.classes]
    # blends of truth and noise give varied accuracy across hypotheses
    fam = [table((1 - w) * truth + w * stochastic_rows(rng, n, ds.K), f"h{i}")
           for i, w in enumerate(rng.random(4))]
    rep = new_class_bound(fam[0], fam[1], fam, ds, alpha, strict=False)
    if rep.checked:
        assert rep.holds, rep.to_text()


def test_strict_mode_raises_on_violation(monkeypatch, rng):
    import gface.theory as T

    ds = _lookup_dataset()
    probs = stochastic_rows(rng, len(ds), ds.K)
    probs[ds.labeled] = np.eye(ds.K)[ds.classes[ds.labeled]]  # exact on labeled rows
    H = table(probs, "H")
    # sabotage the discrepancy term so the right-hand side is too small
    monkeypatch.setattr(T, "f_discrepancy", lambda *a, **k: -1e6)
    with pytest.raises(BoundViolation):
        T.new_class_bound(H, H, [H], ds, 2.0)


def test_report_serializations(rng):
    ds = _lookup_dataset()
    H = table(stochastic_rows(rng, len(ds), ds.K), "H")
    rep = new_class_bound(H, H, [H], ds, 2.0, strict=False)
    head, row = rep.to_csv().splitlines()
    assert head.split(",")[:2] == ["xi_L", "xi_U"] and len(row.split(",")) == len(head.split(","))
    assert "bound:" in rep.to_text()


def test_perturbed_family_is_seeded_and_distinct():
    p = init_model(3, 4, 2, 4, 3, seed=0)
    x = np.random.default_rng(1).normal(size=(4, 3))
    a = [h(x) for h in perturbed_family(p, 3, seed=2)]
    b = [h(x) for h in perturbed_family(p, 3, seed=2)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], a[1])
    assert perturbed_family(p, 0) == []


# ---------------------------------------------------------------- metric axioms

def test_metric_sweep_has_no_violations():
    rep = metric_properties_test(seed=0, trials=2000)
    assert rep.violations == 0


def test_degenerate_triple_is_tight():
    p = np.array([0.2, 0.8])
    rep = metric_properties_test(0, 1, metric=lambda a, b: xi_pointwise(p, p))
    assert rep.violations == 0 and rep.max_triangle_excess == 0.0


def test_squared_distance_fails_triangle_inequality():
    rep = metric_properties_test(seed=0, trials=2000, metric=squared_distance)
    assert rep.triangle_violations > 0
