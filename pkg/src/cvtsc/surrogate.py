"""Decision-tree surrogate of the signal controller, learned from logs.

Two regression trees reproduce the timing plan: one predicts the barrier's
total green (lead plus lag), one predicts a lead phase's green, and the lag
follows by subtraction.  Splitting maximizes the plain reduction in mean
squared error e_parent - e_left - e_right over every observed (feature,
value) cut; a sample-weighted variant is available behind a flag.
Classification trees share the split machinery and predict by majority
vote.  Greedy forward feature selection and Monte Carlo cross-validation
round out the attacker's toolkit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import InputError


def mse(labels) -> float:
    """Mean squared deviation from the set's own mean label."""
    arr = np.asarray(labels, dtype=float)
    if arr.size == 0:
        raise InputError("mse of an empty label set is undefined")
    mean = arr.mean()
    return float(np.mean((arr - mean) ** 2))


def delta_I(parent, child1, child2, weighted: bool = False) -> float:
    """Error reduction of one split: e_parent - e_child1 - e_child2.

    ``weighted=True`` switches to the sample-weighted impurity gain
    e_parent - (n1/n) e_child1 - (n2/n) e_child2.
    """
    p = np.asarray(parent, dtype=float)
    c1 = np.asarray(child1, dtype=float)
    c2 = np.asarray(child2, dtype=float)
    if c1.size == 0 or c2.size == 0:
        raise InputError("both children of a split must be nonempty")
    if c1.size + c2.size != p.size:
        raise InputError("children must partition the parent")
    if not np.array_equal(np.sort(np.concatenate((c1, c2))), np.sort(p)):
        raise InputError("children must partition the parent label multiset")
    if weighted:
        n = p.size
        return mse(p) - (c1.size / n) * mse(c1) - (c2.size / n) * mse(c2)
    return mse(p) - mse(c1) - mse(c2)


@dataclass
class Split:
    feature: int
    threshold: float
    left: "Split | Leaf"
    right: "Split | Leaf"


@dataclass
class Leaf:
    value: float
    count: int


class DecisionTree:
    """CART-style tree; observed feature values are the split candidates.

    Routing sends x left iff x[feature] <= threshold.  Regression leaves
    predict the mean label, classification leaves the majority label
    (smallest on ties).  Growth stops at max_depth, when a child would
    fall under min_samples_leaf, or when no candidate improves the error.
    """

    def __init__(self, max_depth: int = 8, min_samples_leaf: int = 5,
                 weighted_gain: bool = False, task: str = "regression"):
        if task not in ("regression", "classification"):
            raise InputError(f"unknown task {task!r}")
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.weighted_gain = weighted_gain
        self.task = task
        self.root: Split | Leaf | None = None
        self.n_features: int | None = None

    # -- fitting -------------------------------------------------------------

    def fit(self, X, y) -> "DecisionTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or len(y) != X.shape[0] or len(y) == 0:
            raise InputError("fit needs a nonempty (n, d) matrix and n labels")
        self.n_features = X.shape[1]
        self.root = self._build(X, y, 0)
        return self

    def _leaf(self, y: np.ndarray) -> Leaf:
        if self.task == "classification":
            values, counts = np.unique(y, return_counts=True)
            return Leaf(float(values[np.argmax(counts)]), len(y))
        return Leaf(float(y.mean()), len(y))

    def _build(self, X: np.ndarray, y: np.ndarray, depth: int) -> Split | Leaf:
        n = len(y)
        msl = self.min_samples_leaf
        if depth >= self.max_depth or n < 2 * msl:
            return self._leaf(y)
        yc = y - y.mean()
        e_parent = float(np.mean(yc * yc))
        best_gain = 0.0
        best: tuple[int, float] | None = None
        left_sizes = np.arange(msl, n - msl + 1)
        for f in range(X.shape[1]):
            order = np.argsort(X[:, f], kind="stable")
            xv = X[order, f]
            yv = yc[order]
            boundary = xv[left_sizes - 1] < xv[left_sizes]
            cuts = left_sizes[boundary]
            if cuts.size == 0:
                continue
            cum_s = np.cumsum(yv)
            cum_q = np.cumsum(yv * yv)
            tot_s = cum_s[-1]
            tot_q = cum_q[-1]
            nl = cuts.astype(float)
            nr = float(n) - nl
            sl = cum_s[cuts - 1]
            ql = cum_q[cuts - 1]
            e_left = np.maximum(ql / nl - (sl / nl) ** 2, 0.0)
            e_right = np.maximum((tot_q - ql) / nr - ((tot_s - sl) / nr) ** 2, 0.0)
            if self.weighted_gain:
                gains = e_parent - (nl / n) * e_left - (nr / n) * e_right
            else:
                gains = e_parent - e_left - e_right
            k = int(np.argmax(gains))       # first max: smallest threshold
            if gains[k] > best_gain:
                best_gain = float(gains[k])
                best = (f, float(xv[cuts[k] - 1]))
        if best is None:
            return self._leaf(y)
        f, thr = best
        mask = X[:, f] <= thr
        return Split(
            f, thr,
            self._build(X[mask], y[mask], depth + 1),
            self._build(X[~mask], y[~mask], depth + 1),
        )

    # -- prediction ------------------------------------------------------------

    def predict(self, X):
        if self.root is None:
            raise InputError("predict before fit")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            if self.n_features is not None and len(X) != self.n_features:
                raise InputError(
                    f"expected {self.n_features} features, got {len(X)}"
                )
            return self._route(X)
        return np.array([self.predict(row) for row in X])

    def _route(self, x: np.ndarray) -> float:
        node = self.root
        while isinstance(node, Split):
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    # -- serialization -----------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"tree-params task={self.task} max_depth={self.max_depth} "
            f"min_samples_leaf={self.min_samples_leaf} "
            f"weighted={int(self.weighted_gain)} features={self.n_features}"
        ]

        def emit(node):
            if isinstance(node, Leaf):
                lines.append(f"leaf {node.value!r} {node.count}")
            else:
                lines.append(f"node {node.feature} {node.threshold!r}")
                emit(node.left)
                emit(node.right)

        emit(self.root)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DecisionTree":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = dict(item.split("=", 1) for item in lines[0].split()[1:])
        tree = cls(
            max_depth=int(header["max_depth"]),
            min_samples_leaf=int(header["min_samples_leaf"]),
            weighted_gain=bool(int(header["weighted"])),
            task=header["task"],
        )
        tree.n_features = None if header["features"] == "None" else int(header["features"])
        it = iter(lines[1:])

        def parse():
            parts = next(it).split()
            if parts[0] == "leaf":
                return Leaf(float(parts[1]), int(parts[2]))
            return Split(int(parts[1]), float(parts[2]), parse(), parse())

        tree.root = parse()
        return tree


def predict_timing_plan(tree_barrier: DecisionTree,
                        lead_trees: DecisionTree | tuple[DecisionTree, DecisionTree],
                        x, g_min: float = 5.0, g_max: float = 30.0) -> np.ndarray:
    """Plan prediction [g_d1, g_d2, g_g1, g_g2] from the 8-feature vector.

    The barrier tree yields lead + lag green; each ring's lead tree yields
    that lead green from [eta_lead, eta_lag, nav_lead, nav_lag]; the lag is
    the clamped difference.  When the clamps leave the two rings with
    different totals, the shorter ring is stretched (lag first, then lead)
    so the result is always an executable plan.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (8,):
        raise InputError(f"expected an 8-feature vector, got shape {x.shape}")
    if isinstance(lead_trees, DecisionTree):
        t1 = t2 = lead_trees
    else:
        t1, t2 = lead_trees
    total = float(np.clip(tree_barrier.predict(x), 2 * g_min, 2 * g_max))
    gd1 = float(np.clip(t1.predict(x[[0, 2, 4, 6]]), g_min, g_max))
    gd2 = float(np.clip(t2.predict(x[[1, 3, 5, 7]]), g_min, g_max))
    gg1 = float(np.clip(total - gd1, g_min, g_max))
    gg2 = float(np.clip(total - gd2, g_min, g_max))
    target = max(gd1 + gg1, gd2 + gg2)
    gd1, gg1 = _stretch_ring(gd1, gg1, target, g_max)
    gd2, gg2 = _stretch_ring(gd2, gg2, target, g_max)
    return np.array([gd1, gd2, gg1, gg2])


def _stretch_ring(lead: float, lag: float, target: float, g_max: float):
    need = target - (lead + lag)
    if need > 0:
        grow = min(need, g_max - lag)
        lag += grow
        lead += need - grow
    return lead, lag


@dataclass
class SurrogateModel:
    """Trained plan predictor plus the attack priors learned alongside it.

    ``seq_trees`` are optional per-ring classifiers predicting whether the
    odd (left-turn) phase leads, from ring features ordered (odd, even).
    """

    tree_barrier: DecisionTree
    lead_trees: tuple[DecisionTree, DecisionTree] | DecisionTree
    g_min: float = 5.0
    g_max: float = 30.0
    feature_kinds: tuple[str, ...] = ("eta", "nav")
    t_lead: tuple[float, ...] = ()
    t_lag: tuple[float, ...] = ()
    seq_trees: tuple[DecisionTree, DecisionTree] | None = None

    @property
    def pooled(self) -> bool:
        return isinstance(self.lead_trees, DecisionTree)

    def predict_plan(self, x) -> np.ndarray:
        return predict_timing_plan(self.tree_barrier, self.lead_trees, x,
                                   self.g_min, self.g_max)

    def predict_odd_leads(self, ring: int, ring_phase_features) -> bool:
        """Whether the odd phase should lead the given ring (True without
        trained sequence classifiers)."""
        if self.seq_trees is None:
            return True
        return float(self.seq_trees[ring - 1].predict(
            np.asarray(ring_phase_features, dtype=float))) >= 0.5

    def to_text(self) -> str:
        parts = [
            "cvtsc-model v1",
            f"g_min {self.g_min!r}",
            f"g_max {self.g_max!r}",
            f"kinds {','.join(self.feature_kinds)}",
            f"pooled {int(self.pooled)}",
            "t_lead " + " ".join(repr(v) for v in self.t_lead),
            "t_lag " + " ".join(repr(v) for v in self.t_lag),
        ]
        trees = [("barrier", self.tree_barrier)]
        if self.pooled:
            trees.append(("lead", self.lead_trees))
        else:
            trees.append(("lead1", self.lead_trees[0]))
            trees.append(("lead2", self.lead_trees[1]))
        if self.seq_trees is not None:
            trees.append(("seq1", self.seq_trees[0]))
            trees.append(("seq2", self.seq_trees[1]))
        for name, tree in trees:
            parts.append(f"begin-tree {name}")
            parts.append(tree.to_text().rstrip("\n"))
            parts.append("end-tree")
        return "\n".join(parts) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SurrogateModel":
        lines = text.splitlines()
        if not lines or lines[0] != "cvtsc-model v1":
            raise InputError("not a cvtsc model file")
        meta: dict[str, str] = {}
        trees: dict[str, DecisionTree] = {}
        i = 1
        while i < len(lines):
            line = lines[i]
            if line.startswith("begin-tree "):
                name = line.split(" ", 1)[1]
                j = lines.index("end-tree", i + 1)
                trees[name] = DecisionTree.from_text("\n".join(lines[i + 1:j]))
                i = j + 1
            else:
                if line.strip():
                    key, _, val = line.partition(" ")
                    meta[key] = val
                i += 1
        pooled = bool(int(meta["pooled"]))
        lead = trees["lead"] if pooled else (trees["lead1"], trees["lead2"])
        seq = (trees["seq1"], trees["seq2"]) if "seq1" in trees else None
        parse_set = lambda s: tuple(float(v) for v in s.split()) if s.strip() else ()
        return cls(
            tree_barrier=trees["barrier"],
            lead_trees=lead,
            g_min=float(meta["g_min"]),
            g_max=float(meta["g_max"]),
            feature_kinds=tuple(meta["kinds"].split(",")),
            t_lead=parse_set(meta.get("t_lead", "")),
            t_lag=parse_set(meta.get("t_lag", "")),
            seq_trees=seq,
        )


@dataclass(frozen=True)
class CvMetrics:
    mae: float
    mape: float      # percent, over labels >= 0.5 only
    rmse: float


def cross_validate(X, y, tree_params: dict | None = None, repeats: int = 10,
                   train_frac: float = 0.8, seed: int = 0) -> CvMetrics:
    """Monte Carlo cross-validation: repeated seeded 80/20 resampling.

    Repeat r shuffles with ``numpy.random.default_rng([seed, r])`` and
    takes the first round(train_frac * n) indices for training.  Returned
    metrics are means over repeats; MAPE skips labels below 0.5.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    n_train = int(round(train_frac * n))
    if n_train < 1 or n - n_train < 1:
        raise InputError(f"degenerate split: {n_train} train of {n} total")
    params = tree_params or {}
    maes, mapes, rmses = [], [], []
    for rep in range(repeats):
        rng = np.random.default_rng([seed, rep])
        perm = rng.permutation(n)
        train, val = perm[:n_train], perm[n_train:]
        tree = DecisionTree(**params).fit(X[train], y[train])
        pred = tree.predict(X[val])
        err = pred - y[val]
        maes.append(float(np.mean(np.abs(err))))
        rmses.append(float(np.sqrt(np.mean(err ** 2))))
        ok = np.abs(y[val]) >= 0.5
        if ok.any():
            mapes.append(float(np.mean(np.abs(err[ok] / y[val][ok]))) * 100.0)
    mape = float(np.mean(mapes)) if mapes else math.nan
    return CvMetrics(float(np.mean(maes)), mape, float(np.mean(rmses)))


@dataclass(frozen=True)
class SfsRound:
    index: int
    errors: dict[str, float]
    chosen: str | None
    accepted: bool


@dataclass(frozen=True)
class SfsResult:
    selected: tuple[str, ...]
    rounds: tuple[SfsRound, ...]
    final_error: float


def sfs(pool: Sequence[str], error_fn: Callable[[tuple[str, ...]], float]) -> SfsResult:
    """Greedy forward selection: grow the set while the error strictly drops.

    Each round evaluates every remaining feature joined to the accepted
    set, takes the argmin (first in pool order on ties), and stops as soon
    as the best candidate no longer improves on the incumbent error.
    """
    if not pool:
        raise InputError("feature pool must be nonempty")
    remaining = list(pool)
    selected: list[str] = []
    best_error = math.inf
    rounds: list[SfsRound] = []
    while remaining:
        errors = {s: float(error_fn(tuple(selected + [s]))) for s in remaining}
        star = min(remaining, key=lambda s: errors[s])
        if errors[star] < best_error:
            rounds.append(SfsRound(len(rounds) + 1, errors, star, True))
            best_error = errors[star]
            remaining.remove(star)
            selected.append(star)
        else:
            rounds.append(SfsRound(len(rounds) + 1, errors, None, False))
            break
    return SfsResult(tuple(selected), tuple(rounds), best_error)
