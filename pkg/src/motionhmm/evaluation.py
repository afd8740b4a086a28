"""Classification metrics, multi-label stratified k-fold and a grid-search harness."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .rng import XorShift64Star


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """Per-label counts; each field is an L-vector of ints."""

    tp: np.ndarray
    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def n(self) -> np.ndarray:
        return self.tp + self.tn + self.fp + self.fn


def _binary_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} does not match truth shape {t.shape}")
    if p.ndim == 1:
        p, t = p[:, None], t[:, None]
    return p, t


def confusion(pred, truth) -> ConfusionCounts:
    p, t = _binary_pair(pred, truth)
    return ConfusionCounts(
        tp=(p & t).sum(axis=0),
        tn=(~p & ~t).sum(axis=0),
        fp=(p & ~t).sum(axis=0),
        fn=(~p & t).sum(axis=0),
    )


def _ratio(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def accuracy(c: ConfusionCounts) -> np.ndarray:
    return _ratio(c.tp + c.tn, c.n)


def precision(c: ConfusionCounts) -> np.ndarray:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> np.ndarray:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> np.ndarray:
    p, r = precision(c), recall(c)
    return _ratio(2 * p * r, p + r)


def macro_average(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("macro average of no labels")
    return float(v.mean())


def total_accuracy(pred, truth) -> float:
    """Fraction of samples whose whole label vector is predicted exactly."""
    p, t = _binary_pair(pred, truth)
    if len(p) == 0:
        return 0.0
    return float(np.all(p == t, axis=1).mean())


@dataclass(frozen=True)
class Summary:
    f1: float
    precision: float
    recall: float
    accuracy: float
    total_accuracy: float

    def as_dict(self) -> dict:
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "total_accuracy": self.total_accuracy,
        }


def summarize(pred, truth) -> Summary:
    """Macro-averaged per-label metrics plus total accuracy."""
    c = confusion(pred, truth)
    return Summary(
        f1=macro_average(f1(c)),
        precision=macro_average(precision(c)),
        recall=macro_average(recall(c)),
        accuracy=macro_average(accuracy(c)),
        total_accuracy=total_accuracy(pred, truth),
    )


# ---------------------------------------------------------------------------
# folds


def stratified_kfold(Y, k: int, seed: int = 0) -> np.ndarray:
    """Iterative multi-label stratification; returns a fold index per sample.

    The seed only fixes the order in which samples of a label are visited.
    """
    Y = np.asarray(Y).astype(bool)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, L = Y.shape
    if k < 2:
        raise ValueError("k must be >= 2")
    if N < k:
        raise ValueError(f"cannot split {N} samples into {k} folds")
    order = np.asarray(XorShift64Star(seed).permutation(N), dtype=np.int64)
    Y = Y[order]

    desired = np.tile(Y.sum(axis=0) / k, (k, 1)).astype(float)  # k x L
    capacity = np.full(k, N / k)
    fold = np.full(N, -1, dtype=np.int64)
    remaining = Y.copy()
    unassigned = np.ones(N, dtype=bool)

    def place(i: int, f: int) -> None:
        fold[i] = f
        unassigned[i] = False
        remaining[i] = False
        desired[f] -= Y[i]
        capacity[f] -= 1

    while remaining.any():
        counts = remaining.sum(axis=0)
        label = int(np.argmin(np.where(counts > 0, counts, N + 1)))
        for i in np.flatnonzero(remaining[:, label]):
            d = desired[:, label]
            cand = np.flatnonzero(d == d.max())
            if cand.size > 1:
                cap = capacity[cand]
                cand = cand[cap == cap.max()]
            place(int(i), int(cand[0]))
    for i in np.flatnonzero(unassigned):
        place(int(i), int(np.argmax(capacity)))

    sizes = np.bincount(fold, minlength=k)
    for f in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        i = int(np.flatnonzero(fold == donor)[-1])
        fold[i] = f
        sizes = np.bincount(fold, minlength=k)

    out = np.empty(N, dtype=np.int64)
    out[order] = fold
    return out


def fold_indices(folds: np.ndarray, f: int) -> tuple[np.ndarray, np.ndarray]:
    """(train, test) sample indices for fold ``f``."""
    folds = np.asarray(folds)
    return np.flatnonzero(folds != f), np.flatnonzero(folds == f)


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class GridResult:
    index: int
    params: dict
    score: float
    metrics: dict
    error: str | None = None


def grid_points(axes: Mapping[str, Sequence[Any]]) -> list[dict]:
    """Cartesian product of the axes, last axis varying fastest."""
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ValueError("grid needs at least one value on every axis")
    names = list(axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def grid_search(
    axes: Mapping[str, Sequence[Any]],
    scorer: Callable[[dict], float | tuple[float, dict]],
    workers: int = 1,
) -> list[GridResult]:
    """Evaluate every grid point and rank by descending score.

    ``scorer`` returns either a score or ``(score, metrics)``. Exceptions are
    recorded as NaN rows, which rank last. Ties keep grid order.
    """
    points = grid_points(axes)

    def run(item):
        i, params = item
        try:
            out = scorer(dict(params))
        except Exception as exc:  # failures become NaN rows
            return GridResult(i, params, math.nan, {}, f"{type(exc).__name__}: {exc}")
        score, metrics = out if isinstance(out, tuple) else (out, {})
        return GridResult(i, params, float(score), dict(metrics))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, enumerate(points)))
    else:
        results = [run(item) for item in enumerate(points)]
    return sorted(results, key=lambda r: (math.isnan(r.score), -r.score if not math.isnan(r.score) else 0.0, r.index))
