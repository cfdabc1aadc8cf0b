"""Finite-difference verification of every analytic gradient.

Central differences (h = 1e-6) against the episode objective. The
reported error for a term is

    max_i |analytic_i - numeric_i| / max(scale, 1e-8)

where scale is the largest gradient entry (analytic or numeric) over
all parameter blocks of that term. Blocks whose true gradient is
exactly zero (the matching loss is translation invariant, so the last
bias has none) would otherwise amplify finite-difference round-off
into spurious failures.
"""

from dataclasses import dataclass

import numpy as np

from .embedder import all_params, default_net_and_classifier
from .losses import LossConfig, episode_loss
from .numeric import make_rng
from .prototypes import SupportSet

TERMS = ("match", "kl", "align", "total")
TERM_WEIGHTS = {
    "match": (1.0, 0.0, 0.0),
    "kl": (0.0, 1.0, 0.0),
    "align": (0.0, 0.0, 1.0),
    "total": None,  # cfg weights
}


@dataclass
class GradCheckInstance:
    net: object
    clf: object
    support: SupportSet
    bg_features: np.ndarray
    query_features: np.ndarray
    query_labels: np.ndarray
    cfg: LossConfig


def random_instance(seed, d=8, hidden=10, e=6, n_classes=3, shots=3,
                    n_queries=12, n_bg=4, depth=2, cfg=None):
    """Small random episode for gradient checking."""
    rng = make_rng(seed)
    net, clf = default_net_and_classifier(seed, d, hidden, e, n_classes, depth)
    support = SupportSet({c: rng.normal(size=(shots, d))
                          for c in range(1, n_classes + 1)})
    bg = rng.normal(size=(n_bg, d))
    X = rng.normal(size=(n_queries, d))
    labels = rng.integers(0, n_classes + 1, size=n_queries)
    if cfg is None:
        cfg = LossConfig.for_stage(2, 1.0, 1.0, tau=10.0)
    return GradCheckInstance(net, clf, support, bg, X, labels, cfg)


def _term_value(bundle, term):
    return {"match": bundle.l_match, "kl": bundle.l_kl,
            "align": bundle.l_align, "total": bundle.l_total}[term]


def check_term(inst, term, h=1e-6, corrupt=False):
    """Max per-block relative error between analytic and numeric grads.

    `corrupt` perturbs one analytic entry before comparison; the
    harness must then report a failure (sanity check of the check).
    """
    bundle = episode_loss(inst.net, inst.clf, inst.support,
                          inst.query_features, inst.query_labels, inst.cfg,
                          bg_features=inst.bg_features,
                          grad_weights=TERM_WEIGHTS[term])
    analytic = bundle.grads.flat()
    if corrupt:
        analytic[0].flat[0] += 1.0
    params = all_params(inst.net, inst.clf)

    def value():
        b = episode_loss(inst.net, inst.clf, inst.support,
                         inst.query_features, inst.query_labels, inst.cfg,
                         bg_features=inst.bg_features)
        return _term_value(b, term)

    numeric = []
    for p in params:
        g_n = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            f_plus = value()
            p[idx] = orig - h
            f_minus = value()
            p[idx] = orig
            g_n[idx] = (f_plus - f_minus) / (2.0 * h)
            it.iternext()
        numeric.append(g_n)

    scale = max(max(float(np.max(np.abs(g))) for g in analytic),
                max(float(np.max(np.abs(g))) for g in numeric), 1e-8)
    return max(float(np.max(np.abs(g_a - g_n))) / scale
               for g_a, g_n in zip(analytic, numeric))


def run_suite(seeds=range(20), terms=TERMS, instance_kwargs=None,
              corrupt=False):
    """Gradient-check every loss term over seeded random instances.

    Returns {term: max error over all seeds and parameter blocks}.
    """
    instance_kwargs = instance_kwargs or {}
    results = {t: 0.0 for t in terms}
    for seed in seeds:
        inst = random_instance(seed, **instance_kwargs)
        for t in terms:
            results[t] = max(results[t], check_term(inst, t, corrupt=corrupt))
    return results
