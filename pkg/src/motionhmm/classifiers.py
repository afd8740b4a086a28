"""Decision makers that turn per-model log-likelihood vectors into label vectors.

Rows of the input matrices are samples, columns are models. Outputs are
binary N x L matrices (or single L-vectors for the ``*_decision`` helpers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .rng import derive_seed, generator

LOSSES = ("logistic", "squared_hinge")
PENALTIES = ("l1", "l2")
CRITERIA = ("gini", "info_gain")


# ---------------------------------------------------------------------------
# fixed rules


def max_decision(likelihoods) -> np.ndarray:
    """One-hot vector at the largest likelihood; ties go to the lowest index."""
    v = np.asarray(likelihoods, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a non-empty likelihood vector")
    if np.all(v == -np.inf) or np.any(np.isnan(v)):
        raise ValueError("no model assigns the sample a finite likelihood")
    out = np.zeros(v.size, dtype=np.int8)
    out[int(np.argmax(v))] = 1
    return out


def threshold_decision(likelihoods, boundaries) -> np.ndarray:
    """Bit m is set iff likelihood m is at or above boundary m."""
    v = np.asarray(likelihoods, dtype=float)
    b = np.asarray(boundaries, dtype=float)
    if v.shape != b.shape:
        raise ValueError("likelihoods and boundaries differ in length")
    return (v >= b).astype(np.int8)


# ---------------------------------------------------------------------------
# linear models


def _check_choice(value: str, options: tuple, what: str) -> str:
    if value not in options:
        raise ValueError(f"unknown {what} {value!r}; expected one of {options}")
    return value


def _signs(y) -> np.ndarray:
    return np.where(np.asarray(y).astype(bool), 1.0, -1.0)


def _loss_terms(z: np.ndarray, loss: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample loss and its derivative with respect to the signed margin z."""
    if loss == "logistic":
        value = np.logaddexp(0.0, -z)
        deriv = -np.exp(-np.logaddexp(0.0, z))  # -sigmoid(-z)
    else:
        slack = np.maximum(0.0, 1.0 - z)
        value = slack * slack
        deriv = -2.0 * slack
    return value, deriv


def objective(w, b, X, y, C: float, loss: str = "logistic", penalty: str = "l2") -> float:
    """C * sum_i loss(yhat_i (w.x_i + b)) + penalty(w); the intercept is unpenalized."""
    w = np.asarray(w, dtype=float)
    s = _signs(y)
    value, _ = _loss_terms(s * (np.asarray(X, dtype=float) @ w + b), loss)
    reg = np.abs(w).sum() if penalty == "l1" else 0.5 * float(w @ w)
    return float(C * value.sum() + reg)


def smooth_gradient(w, b, X, y, C: float, loss: str = "logistic", penalty: str = "l2") -> tuple[np.ndarray, float]:
    """Gradient of the differentiable part (loss, plus the L2 term when present)."""
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    s = _signs(y)
    _, deriv = _loss_terms(s * (X @ w + b), loss)
    r = C * deriv * s
    gw = X.T @ r
    if penalty == "l2":
        gw = gw + w
    return gw, float(r.sum())


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    intercept: float
    loss: str = "logistic"
    penalty: str = "l1"
    C: float = 1.0
    fill: np.ndarray | None = None  # replaces -inf entries at prediction time
    history: tuple[float, ...] = field(default=(), repr=False)

    def decision_function(self, X) -> np.ndarray:
        X = _finite(np.atleast_2d(np.asarray(X, dtype=float)), self.fill)
        return X @ self.weights + self.intercept

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int8)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "loss": self.loss,
            "penalty": self.penalty,
            "C": self.C,
            "fill": None if self.fill is None else self.fill.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearModel":
        fill = d.get("fill")
        return cls(
            np.asarray(d["weights"], dtype=float),
            float(d["intercept"]),
            d["loss"],
            d["penalty"],
            float(d["C"]),
            None if fill is None else np.asarray(fill, dtype=float),
        )


def _column_fill(X: np.ndarray) -> np.ndarray:
    """Per-column stand-in for -inf: well below the smallest finite value."""
    fill = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j][np.isfinite(X[:, j])]
        fill[j] = col.min() - max(1.0, np.ptp(col)) if col.size else -1.0
    return fill


def _finite(X: np.ndarray, fill: np.ndarray | None) -> np.ndarray:
    if fill is None or np.all(np.isfinite(X)):
        return X
    return np.where(np.isfinite(X), X, fill)


def predict_linear(model: LinearModel, x) -> int:
    return int(model.predict(np.asarray(x, dtype=float)[None, :])[0])


def fit_linear(
    X,
    y,
    loss: str = "logistic",
    penalty: str = "l1",
    C: float = 1.0,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> LinearModel:
    """Minimize C * loss + penalty by preconditioned proximal gradient.

    Columns are centered internally (an exact reparametrization, since the
    intercept is free) and a diagonal preconditioner from the loss curvature
    bound is used. Backtracking keeps the objective non-increasing; the
    per-iteration objective is stored in ``history``. Iteration stops once
    the scaled gradient mapping falls below ``tol`` relative to its size at
    the start. The solver is deterministic; ``seed`` is accepted for a
    uniform interface.
    """
    _check_choice(loss, LOSSES, "loss")
    _check_choice(penalty, PENALTIES, "penalty")
    if not C > 0:
        raise ValueError("C must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).astype(bool)
    N, M = X.shape
    if N < 1 or y.shape != (N,):
        raise ValueError("X and y disagree in sample count")
    fill = _column_fill(X)
    X = _finite(X, fill)
    if y.all() or not y.any():
        b = 1.0 if y.all() else -1.0
        w = np.zeros(M)
        return LinearModel(w, b, loss, penalty, C, fill, (objective(w, b, X, y, C, loss, penalty),))

    mean = X.mean(axis=0)
    Xc = X - mean
    s = _signs(y)
    curv = 0.25 if loss == "logistic" else 2.0
    Dw = C * curv * (Xc * Xc).sum(axis=0) + (1.0 if penalty == "l2" else 0.0)
    Dw = np.maximum(Dw, 1e-12)
    Db = max(C * curv * N, 1e-12)

    def smooth(w, b):
        z = s * (Xc @ w + b)
        value, deriv = _loss_terms(z, loss)
        r = C * deriv * s
        gw = Xc.T @ r
        f = C * value.sum()
        if penalty == "l2":
            f += 0.5 * float(w @ w)
            gw = gw + w
        return f, gw, float(r.sum())

    def nonsmooth(w):
        return float(np.abs(w).sum()) if penalty == "l1" else 0.0

    w = np.zeros(M)
    b = 0.0
    f, gw, gb = smooth(w, b)
    history = [f + nonsmooth(w)]
    step = 1.0
    ref = None
    for _ in range(max_iter):
        while True:
            w_new = w - step * gw / Dw
            if penalty == "l1":
                thr = step / Dw
                w_new = np.sign(w_new) * np.maximum(np.abs(w_new) - thr, 0.0)
            b_new = b - step * gb / Db
            dw = w_new - w
            db = b_new - b
            f_new, gw_new, gb_new = smooth(w_new, b_new)
            bound = f + gw @ dw + gb * db + (0.5 / step) * (Dw @ (dw * dw) + Db * db * db)
            if f_new <= bound + 1e-12 * max(1.0, abs(f)) or step < 1e-12:
                break
            step *= 0.5
        F_new = f_new + nonsmooth(w_new)
        if F_new > history[-1]:
            # rounding can defeat the sufficient-decrease test on a flat objective
            break
        # gradient mapping in preconditioner-scaled units
        gmap = math.sqrt(Dw @ (dw * dw) + Db * db * db) / step
        if ref is None:
            ref = max(gmap, 1e-300)
        w, b, f, gw, gb = w_new, b_new, f_new, gw_new, gb_new
        history.append(F_new)
        if gmap <= tol * max(1.0, ref):
            break
        step = min(step * 1.5, 1.0)
    w = np.where(np.abs(w) < 1e-300, 0.0, w)
    return LinearModel(w, float(b - mean @ w), loss, penalty, C, fill, tuple(history))


def fit_logistic(X, y, penalty: str = "l1", C: float = 1.0, seed: int = 0, **kw) -> LinearModel:
    return fit_linear(X, y, "logistic", penalty, C, seed, **kw)


def fit_linear_svm(X, y, penalty: str = "l1", C: float = 1.0, seed: int = 0, **kw) -> LinearModel:
    return fit_linear(X, y, "squared_hinge", penalty, C, seed, **kw)


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # per-node positive fractions, n_nodes x L
    depth: int

    def leaf_index(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.depth):
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                break
            go_left = X[np.arange(len(X)), np.where(active, f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(active, nxt, node)
        return node

    def predict_fraction(self, X) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def predict(self, X) -> np.ndarray:
        return (self.predict_fraction(X) >= 0.5).astype(np.int8)

    def structure(self) -> tuple:
        return (self.feature.tolist(), self.threshold.tolist(), self.left.tolist(), self.right.tolist())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1),
            int(d["depth"]),
        )


def _impurity(p: np.ndarray, criterion: str) -> np.ndarray:
    """Label-averaged binary impurity; p has positive fractions on its last axis."""
    if criterion == "gini":
        per = 2.0 * p * (1.0 - p)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            q = 1.0 - p
            per = -np.where(p > 0, p * np.log2(p), 0.0) - np.where(q > 0, q * np.log2(q), 0.0)
    return per.mean(axis=-1)


def _best_split(X, Y, features, criterion):
    n = len(X)
    best = (np.inf, -1, 0.0)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(Y[order], axis=0)
        total = cum[-1]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if valid.size == 0:
            continue
        nl = (valid + 1).astype(float)
        nr = n - nl
        pl = cum[valid] / nl[:, None]
        pr = (total - cum[valid]) / nr[:, None]
        score = (nl * _impurity(pl, criterion) + nr * _impurity(pr, criterion)) / n
        i = int(np.argmin(score))
        if score[i] < best[0]:
            v = valid[i]
            thr = 0.5 * (xs[v] + xs[v + 1])
            if not xs[v] <= thr < xs[v + 1]:
                thr = xs[v]
            best = (float(score[i]), int(f), float(thr))
    return best


def fit_tree(
    X,
    Y,
    criterion: str = "gini",
    max_depth: int | None = None,
    seed: int = 0,
    feature_subset: int | None = None,
) -> Tree:
    """Multi-label CART on the label-averaged impurity."""
    _check_choice(criterion, CRITERIA, "criterion")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X = _finite(X, _column_fill(X))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) < 1 or len(Y) != len(X):
        raise ValueError("X and Y disagree in sample count")
    M = X.shape[1]
    limit = np.inf if max_depth is None else int(max_depth)
    rng = generator(seed, "tree")
    feature, threshold, left, right, value = [], [], [], [], []
    max_seen = 0

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(Y[idx].mean(axis=0))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(X))), np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        max_seen = max(max_seen, depth)
        Yn = Y[idx]
        if depth >= limit or len(idx) < 2 or np.all(Yn == Yn[0]):
            continue
        if feature_subset is not None and feature_subset < M:
            cand = np.sort(rng.choice(M, size=feature_subset, replace=False))
        else:
            cand = np.arange(M)
        score, f, thr = _best_split(X[idx], Yn, cand, criterion)
        parent = float(_impurity(Yn.mean(axis=0), criterion))
        if f < 0 or not score < parent - 1e-12:
            continue
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # push right first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float).reshape(len(feature), Y.shape[1]),
        max_seen,
    )


def predict_tree(tree: Tree, x) -> np.ndarray:
    return tree.predict(np.asarray(x, dtype=float)[None, :])[0]


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    seeds: tuple[int, ...]

    def predict(self, X) -> np.ndarray:
        votes = np.mean([t.predict(X) for t in self.trees], axis=0)
        return (votes >= 0.5).astype(np.int8)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees], "seeds": list(self.seeds)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Forest":
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), tuple(d["seeds"]))


def fit_forest(
    X, Y, n_trees: int = 40, criterion: str = "info_gain", max_depth: int | None = 15, seed: int = 0
) -> Forest:
    """Bagged randomized trees with ceil(sqrt(M)) candidate features per node."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X = _finite(X, _column_fill(X))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, M = X.shape
    k = math.ceil(math.sqrt(M))
    trees, seeds = [], []
    for i in range(n_trees):
        s = derive_seed(seed, "tree", i)
        boot = generator(s, "bootstrap").integers(0, N, size=N)
        trees.append(fit_tree(X[boot], Y[boot], criterion, max_depth, s, k))
        seeds.append(s)
    return Forest(tuple(trees), tuple(seeds))


# ---------------------------------------------------------------------------
# decision makers (uniform fit/predict interface over likelihood matrices)


class DecisionMaker:
    kind = "abstract"

    def fit(self, X, Y) -> "DecisionMaker":
        return self

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def state(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params(), "state": self.state()}


class MaxDecisionMaker(DecisionMaker):
    kind = "max"

    def predict(self, X):
        return np.array([max_decision(row) for row in np.atleast_2d(X)], dtype=np.int8)


class ThresholdDecisionMaker(DecisionMaker):
    """Fixed per-model boundaries; a scalar boundary is broadcast (0 gives the zero rule)."""

    kind = "threshold"

    def __init__(self, boundary: float | list = 0.0):
        self.boundary = boundary

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        b = np.broadcast_to(np.asarray(self.boundary, dtype=float), X.shape[1:])
        return np.array([threshold_decision(row, b) for row in X], dtype=np.int8)

    def params(self):
        b = self.boundary
        return {"boundary": b.tolist() if isinstance(b, np.ndarray) else b}


class BinaryRelevance(DecisionMaker):
    """One independent linear model per label column, each seeing all likelihoods."""

    kind = "linear"

    def __init__(self, loss: str = "logistic", penalty: str = "l1", C: float = 1e-3, seed: int = 0):
        self.loss = _check_choice(loss, LOSSES, "loss")
        self.penalty = _check_choice(penalty, PENALTIES, "penalty")
        self.C = float(C)
        self.seed = seed
        self.models: list[LinearModel] = []

    def fit(self, X, Y):
        Y = np.asarray(Y)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.models = [
            fit_linear(X, Y[:, j], self.loss, self.penalty, self.C, derive_seed(self.seed, "label", j))
            for j in range(Y.shape[1])
        ]
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([m.predict(X) for m in self.models], axis=1).astype(np.int8)

    def params(self):
        return {"loss": self.loss, "penalty": self.penalty, "C": self.C, "seed": self.seed}

    def state(self):
        return {"models": [m.to_dict() for m in self.models]}


class TreeDecisionMaker(DecisionMaker):
    kind = "tree"

    def __init__(self, criterion: str = "gini", max_depth: int | None = None, seed: int = 0):
        self.criterion = _check_choice(criterion, CRITERIA, "criterion")
        self.max_depth = max_depth
        self.seed = seed
        self.tree: Tree | None = None
        self.fill = None

    def fit(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.fill = _column_fill(X)
        self.tree = fit_tree(X, Y, self.criterion, self.max_depth, self.seed)
        return self

    def predict(self, X):
        return self.tree.predict(_finite(np.atleast_2d(np.asarray(X, dtype=float)), self.fill))

    def params(self):
        return {"criterion": self.criterion, "max_depth": self.max_depth, "seed": self.seed}

    def state(self):
        return {"tree": self.tree.to_dict(), "fill": self.fill.tolist()}


class ForestDecisionMaker(DecisionMaker):
    kind = "forest"

    def __init__(self, n_trees: int = 40, criterion: str = "info_gain", max_depth: int | None = 15, seed: int = 0):
        self.n_trees = int(n_trees)
        self.criterion = _check_choice(criterion, CRITERIA, "criterion")
        self.max_depth = max_depth
        self.seed = seed
        self.forest: Forest | None = None
        self.fill = None

    def fit(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.fill = _column_fill(X)
        self.forest = fit_forest(X, Y, self.n_trees, self.criterion, self.max_depth, self.seed)
        return self

    def predict(self, X):
        return self.forest.predict(_finite(np.atleast_2d(np.asarray(X, dtype=float)), self.fill))

    def params(self):
        return {"n_trees": self.n_trees, "criterion": self.criterion, "max_depth": self.max_depth, "seed": self.seed}

    def state(self):
        return {"forest": self.forest.to_dict(), "fill": self.fill.tolist()}


_KINDS = {
    "max": MaxDecisionMaker,
    "threshold": ThresholdDecisionMaker,
    "linear": BinaryRelevance,
    "tree": TreeDecisionMaker,
    "forest": ForestDecisionMaker,
}


def make_decision_maker(kind: str, **params) -> DecisionMaker:
    """Build a decision maker by name.

    Aliases: ``zero`` (threshold at 0), ``logistic`` and ``svm`` (binary
    relevance with the matching loss).
    """
    if kind == "zero":
        return ThresholdDecisionMaker(0.0)
    if kind == "logistic":
        return BinaryRelevance(loss="logistic", **params)
    if kind == "svm":
        return BinaryRelevance(loss="squared_hinge", **params)
    if kind not in _KINDS:
        raise ValueError(f"unknown decision maker {kind!r}")
    return _KINDS[kind](**params)


def decision_maker_from_dict(d: Mapping) -> DecisionMaker:
    dm = _KINDS[d["kind"]](**d["params"])
    st = d.get("state", {})
    if isinstance(dm, BinaryRelevance):
        dm.models = [LinearModel.from_dict(m) for m in st["models"]]
    elif isinstance(dm, TreeDecisionMaker):
        dm.tree = Tree.from_dict(st["tree"])
        dm.fill = np.asarray(st["fill"], dtype=float)
    elif isinstance(dm, ForestDecisionMaker):
        dm.forest = Forest.from_dict(st["forest"])
        dm.fill = np.asarray(st["fill"], dtype=float)
    return dm
