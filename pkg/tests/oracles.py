"""Independent reference implementations and seeded instances used by the tests.

The oracles are deliberately naive: explicit loops over samples and classes,
plain numpy arithmetic, no shared code with the library's loss functions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from gface import losses as L
from gface import numcore as nc
from gface.data import Batch, augment_two_views
from gface.losses import ClassStats, LossWeights
from gface.model import aux_logits, extract, init_model, main_logits, project
from gface.train import TrainConfig, compute_losses


def _lse(v):
    m = max(v)
    return m + math.log(sum(math.exp(x - m) for x in v))


def rep_self(z1, z2, tau):
    n = len(z1)
    total = 0.0
    for i in range(n):
        s = [float(np.dot(z2[i], z1[k])) / tau for k in range(n)]
        total += -(s[i] - _lse(s))
    return total / n


def rep_sup(z1, z2, labels, tau):
    pool = list(z1) + list(z2)
    lab = list(labels) + list(labels)
    m = len(pool)
    total = 0.0
    for a in range(m):
        others = [k for k in range(m) if k != a]
        lse = _lse([float(np.dot(pool[a], pool[k])) / tau for k in others])
        pos = [p for p in others if lab[p] == lab[a]]
        total += sum(-(float(np.dot(pool[a], pool[p])) / tau - lse) for p in pos) / len(pos)
    return total / m


def entropy(p):
    return -sum(x * math.log(max(x, 1e-12)) for x in p)


def ce(p, q):
    """Cross-entropy of prediction ``p`` against target ``q``."""
    return -sum(qi * math.log(max(pi, 1e-12)) for pi, qi in zip(p, q))


def cls(ps, pt, labels, labeled, lam, eps):
    n, K = ps.shape
    l_u = sum(ce(ps[i], pt[i]) for i in range(n)) / n
    p_bar = [sum((ps[i, k] + pt[i, k]) / 2 for i in range(n)) / n for k in range(K)]
    l_u -= eps * entropy(p_bar)
    idx = [i for i in range(n) if labeled[i]]
    l_s = sum(-math.log(max(ps[i, labels[i]], 1e-12)) for i in idx) / len(idx) if idx else 0.0
    return (1 - lam) * l_u + lam * l_s


def ad(aux_l, main_l, aux_u, pseudo_u, alpha):
    out = 0.0
    if len(aux_l):
        out += alpha * sum(ce(a, m) for a, m in zip(aux_l, main_l)) / len(aux_l)
    if len(aux_u):
        out -= sum(ce(a, q) for a, q in zip(aux_u, pseudo_u)) / len(aux_u)
    return out


def bal(probs, labels, correct, total, e_t, eps):
    out = 0.0
    for p, y in zip(probs, labels):
        a = correct[y] / total[y] if total[y] else 1.0
        out += ((1 - e_t) + e_t / (a + eps)) * -math.log(max(p[y], 1e-12))
    return out / len(labels)


def cluster(feats, labels, beta, eps_wb):
    classes = sorted(set(int(c) for c in labels))
    g = np.mean(feats, axis=0)
    within = between = mm = 0.0
    for c in classes:
        members = [f for f, y in zip(feats, labels) if y == c]
        mu = np.mean(members, axis=0)
        d = [float(np.sum((f - mu) ** 2)) for f in members]
        within += sum(d)
        between += len(members) * float(np.sum((mu - g) ** 2))
        mm += max(d) - min(d)
    return within / (between + eps_wb) + beta * mm / len(classes)


def brute_force_assignment(cost):
    """Minimum total cost over all permutations."""
    n = len(cost)
    return min(sum(cost[i][p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def brute_force_acc(pred, truth, K):
    best = 0
    for perm in itertools.permutations(range(K)):
        best = max(best, sum(perm[p] == t for p, t in zip(pred, truth)))
    return best / len(pred)


# ---------------------------------------------------------------- seeded gradient-check instances

@dataclass
class GradCase:
    """``fn`` is differenced numerically; ``analytic`` (if set) supplies the gradients
    to compare against, otherwise they come from backpropagating through ``fn``."""

    fn: Callable
    params: dict
    names: tuple[str, ...] | None = None
    analytic: dict | None = None

    def check(self):
        return nc.finite_diff_check(self.fn, self.params, analytic=self.analytic, names=self.names)


def instance(loss: str, seed: int) -> GradCase:
    """One seeded finite-difference instance of a loss."""
    rng = np.random.default_rng([seed, LOSSES.index(loss)])
    if loss == "rep_self":
        tau = rng.uniform(0.2, 1.0)
        p = {"a": rng.normal(size=(5, 4)), "b": rng.normal(size=(5, 4))}
        return GradCase(lambda q: L.loss_rep_self(nc.l2_normalize(q["a"]), nc.l2_normalize(q["b"]),
                                                  tau), p)
    if loss == "rep_sup":
        tau = rng.uniform(0.2, 1.0)
        labels = rng.integers(0, 3, size=5)
        p = {"a": rng.normal(size=(5, 4)), "b": rng.normal(size=(5, 4))}
        return GradCase(lambda q: L.loss_rep_sup(nc.l2_normalize(q["a"]), nc.l2_normalize(q["b"]),
                                                 labels, tau).loss, p)
    if loss == "cls":
        labels = rng.integers(0, 4, size=6)
        labeled = rng.random(6) < 0.5
        labeled[0] = True
        p = {"s": rng.normal(size=(6, 4)), "t": rng.normal(size=(6, 4))}
        # the teacher "t" is detached: only the student is differentiated
        return GradCase(lambda q: L.loss_cls(nc.softmax(q["s"], 0.5), nc.softmax(q["t"], 0.3),
                                             labels, labeled, 0.35, 1.0), p, names=("s",))
    if loss == "ad":
        alpha = rng.uniform(0.5, 3.0)
        pseudo = nc.one_hot(rng.integers(0, 4, size=3), 4)
        p = {"al": rng.normal(size=(4, 4)), "ml": rng.normal(size=(4, 4)),
             "au": rng.normal(size=(3, 4))}
        # main-head targets "ml" are detached
        return GradCase(lambda q: L.loss_ad(nc.softmax(q["al"]), nc.softmax(q["ml"]),
                                            nc.softmax(q["au"]), pseudo, alpha), p,
                        names=("al", "au"))
    if loss == "bal":
        labels = rng.integers(0, 4, size=6)
        total = rng.integers(0, 10, size=4)
        stats = ClassStats(rng.integers(0, total + 1), total)
        e_t = rng.uniform(0.0, 0.1)
        p = {"x": rng.normal(size=(6, 4))}
        return GradCase(lambda q: L.loss_bal(nc.softmax(q["x"]), labels, stats, e_t, 0.05), p)
    if loss == "cluster":
        labels = np.array([0, 0, 0, 1, 1, 1, 2, 2])
        p = {"f": rng.normal(size=(8, 3))}
        return GradCase(lambda q: L.loss_cluster(q["f"], labels, 0.2, 1e-6), p)
    if loss == "total":
        return _total_instance(rng)
    raise KeyError(loss)


def _total_instance(rng) -> GradCase:
    d, K = 4, 3
    params = init_model(d, 5, 3, 4, K, seed=int(rng.integers(1 << 30)))
    n = 8
    y = np.array([0, 1, 0, 1, -1, -1, -1, -1])
    batch = Batch(np.arange(n), rng.normal(size=(n, d)) * 2.0, y, y >= 0)
    cfg = TrainConfig(epochs=4, warmup=0, batch_size=n, d_f=5, d_b=3, d_h=4, mu=0.7,
                      weights=LossWeights(tau_u=0.5, tau_c=0.5, tau_s=0.5, tau_t=0.4))
    stats = ClassStats(np.array([1, 0, 0]), np.array([2, 1, 0]))
    seed = int(rng.integers(1 << 30))
    e_t, tau_t, epoch = 0.05, 0.4, 1

    def library(q):
        comps, _ = compute_losses(q, batch, cfg, stats, e_t, tau_t, epoch, seed)
        return L.loss_total(comps, cfg.weights, epoch, cfg.warmup)

    leaves = params.leaves()
    nc.backward(library(leaves))
    analytic = {k: t.grad for k, t in leaves.items()}
    surrogate = _total_surrogate(params, batch, cfg, stats, e_t, tau_t, epoch, seed)
    return GradCase(surrogate, dict(params.arrays), analytic=analytic)


def _total_surrogate(params, batch, cfg, stats, e_t, tau_t, epoch, seed):
    """An ordinary function whose true gradient at ``params`` is what backprop through
    the training objective should produce: detached quantities are frozen at the base
    point and the reversal layer becomes the linear map ``z0 - mu * (z - z0)``."""
    w = cfg.weights
    lab = np.asarray(batch.labeled)
    li, ui = np.flatnonzero(lab), np.flatnonzero(~lab)
    y_l = batch.y[lab]
    v1, v2 = augment_two_views(batch.x, cfg.augment, seed)
    base = params.leaves(requires_grad=False)
    z0 = extract(base, v1).data
    teacher0 = main_logits(base, extract(base, v2), tau_t).probs.data
    student0 = main_logits(base, z0, w.tau_s).probs.data

    def fn(q):
        z1, z2 = extract(q, v1), extract(q, v2)
        h1, h2 = project(q, z1), project(q, z2)
        rep = L.loss_rep(L.loss_rep_self(h1, h2, w.tau_u),
                         L.loss_rep_sup(nc.take(h1, li), nc.take(h2, li), y_l, w.tau_c).loss, w.lam)
        student = main_logits(q, z1, w.tau_s).probs
        cls = L.loss_cls(student, teacher0, batch.y, lab, w.lam, w.eps_ent)
        z_rev = nc.add(z0, nc.scale(nc.sub(z1, z0), -cfg.mu))
        aux = aux_logits(q, z_rev, training=True, seed=seed + 1, dropout=cfg.dropout,
                         reverse=False).probs
        ad = L.loss_ad(nc.take(aux, li), student0[li], nc.take(aux, ui),
                       nc.one_hot(np.argmax(student0[ui], axis=1), student0.shape[1]), w.alpha)
        bal = L.loss_bal(nc.take(student, li), y_l, stats, e_t, w.eps_bal)
        feats = nc.l2_normalize(extract(q, batch.x[li]))
        clu = L.loss_cluster(feats, y_l, w.beta, w.eps_wb)
        comps = {"rep": rep, "cls": cls, "ad": ad, "bal": bal, "cluster": clu}
        return L.loss_total(comps, w, epoch, cfg.warmup)

    return fn


LOSSES = ("rep_self", "rep_sup", "cls", "ad", "bal", "cluster", "total")
