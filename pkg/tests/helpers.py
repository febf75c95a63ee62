"""Shared test utilities: random surrogate trees and reference attack search."""

import itertools

import numpy as np

from cvtsc.attack import dissimilarity
from cvtsc.surrogate import DecisionTree, Leaf, Split, SurrogateModel


def random_tree(rng, n_features, depth, leaf_low, leaf_high,
                thr_low=0.0, thr_high=120.0):
    def build(d):
        if d == 0 or rng.random() < 0.3:
            return Leaf(float(rng.uniform(leaf_low, leaf_high)), 1)
        return Split(int(rng.integers(0, n_features)),
                     float(rng.uniform(thr_low, thr_high)),
                     build(d - 1), build(d - 1))

    tree = DecisionTree()
    tree.root = build(depth)
    tree.n_features = n_features
    return tree


def random_model(rng, depth=3):
    barrier = random_tree(rng, 8, depth, 10.0, 60.0)
    lead1 = random_tree(rng, 4, depth, 5.0, 30.0)
    lead2 = random_tree(rng, 4, depth, 5.0, 30.0)
    return SurrogateModel(barrier, (lead1, lead2))


def random_xo(rng):
    etas = rng.uniform(0.0, 150.0, 4)
    navs = rng.integers(0, 25, 4).astype(float)
    return np.concatenate([etas, navs])


def reference_p2(x_o, model, t_lead, t_lag):
    """Independent exhaustive search over (role, injected estimate)."""
    f_o = model.predict_plan(x_o)
    best = None
    for role in range(4):
        for tau in sorted(t_lead if role < 2 else t_lag):
            x_a = np.array(x_o, dtype=float)
            x_a[role] += tau
            x_a[4 + role] += 1.0
            d = dissimilarity(f_o, model.predict_plan(x_a))
            if best is None or d > best[0]:
                best = (d, role, tau)
    return best


def reference_p3(x_o, model, budget):
    """Independent exhaustive search over count allocations."""
    f_o = model.predict_plan(x_o)
    allocs = sorted(
        (t for t in itertools.product(range(budget + 1), repeat=4)
         if sum(t) <= budget),
        key=lambda t: (sum(t), t),
    )
    best = None
    for deltas in allocs:
        x_a = np.array(x_o, dtype=float)
        x_a[4:] += np.array(deltas, dtype=float)
        d = dissimilarity(f_o, model.predict_plan(x_a))
        if best is None or d > best[0]:
            best = (d, deltas)
    return best
