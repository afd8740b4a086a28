"""Backward-elimination feature selection.

A feature set is scored by how well each per-label model separates the
log-likelihoods of motions that carry the label from those that do not.
The separation per label is a Wasserstein-style distance between two
Gaussians fitted to those likelihoods; the set score is the median over
labels divided by the observation dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset
from .evaluation import fold_indices, stratified_kfold
from .features import FeatureSpec, build_observations, prepare
from .hmm import ModelConfig
from .rng import derive_seed
from .systems import model_log_likelihood, parallel_map, train_model


def wasserstein(mu_p: float, sigma_p: float, mu_n: float, sigma_n: float) -> float:
    """sqrt(|mu_p - mu_n| + sigma_p**2 + sigma_n**2 - 2 sqrt(sigma_p**2 sigma_n**2)).

    The mean difference enters un-squared.
    """
    if sigma_p < 0 or sigma_n < 0:
        raise ValueError("standard deviations must be non-negative")
    # sqrt(sigma_p**2 * sigma_n**2) is written as sigma_p * sigma_n (both are non-negative),
    # which cannot underflow to zero and keeps equal sigmas cancelling exactly
    inner = abs(mu_p - mu_n) + sigma_p**2 + sigma_n**2 - 2.0 * (sigma_p * sigma_n)
    return math.sqrt(max(inner, 0.0))


@dataclass(frozen=True)
class ClassLikelihoodStats:
    label: str
    mu_pos: float
    sigma_pos: float
    mu_neg: float
    sigma_neg: float
    n_pos: int
    n_neg: int

    @classmethod
    def from_values(cls, label: str, positives, negatives) -> "ClassLikelihoodStats":
        p = np.asarray(positives, dtype=float)
        n = np.asarray(negatives, dtype=float)
        return cls(label, float(p.mean()), float(p.std()), float(n.mean()), float(n.std()), p.size, n.size)

    @property
    def distance(self) -> float:
        return wasserstein(self.mu_pos, self.sigma_pos, self.mu_neg, self.sigma_neg)


def score_feature_set(stats: Sequence[ClassLikelihoodStats] | Sequence[float], D: int) -> float:
    """Median per-class distance divided by the observation dimension."""
    if D < 1:
        raise ValueError("dimension must be >= 1")
    values = [s.distance if isinstance(s, ClassLikelihoodStats) else float(s) for s in stats]
    if not values:
        raise ValueError("need at least one class")
    return float(np.median(values)) / D


def likelihood_stats(
    dataset: Dataset,
    spec: FeatureSpec,
    config: ModelConfig,
    folds: np.ndarray,
    seed: int = 0,
    workers: int = 1,
) -> tuple[list[ClassLikelihoodStats], int]:
    """Per-label positive/negative likelihood statistics pooled over folds.

    For every fold one model per label is trained on the training part; the
    held-out motions are scored by every label model. Labels lacking held-out
    positives or negatives are left out. Returns the stats and the dimension.
    """
    Y = dataset.label_matrix()
    labels = dataset.vocabulary.labels
    pos: list[list[float]] = [[] for _ in labels]
    neg: list[list[float]] = [[] for _ in labels]
    D = 0
    for f in range(int(folds.max()) + 1):
        train_idx, test_idx = fold_indices(folds, f)
        train_obs, scaler = prepare([dataset.records[i] for i in train_idx], spec)
        test_obs = build_observations([dataset.records[i] for i in test_idx], spec, scaler)
        D = train_obs[0].D
        Ytr = Y[train_idx]

        def job(j, train_obs=train_obs, test_obs=test_obs, Ytr=Ytr, f=f):
            members = [train_obs[i] for i in np.flatnonzero(Ytr[:, j])]
            if not members:
                return None
            model = train_model(members, config, derive_seed(seed, "fold", f, "label", j))
            return [model_log_likelihood(model, o) for o in test_obs]

        columns = parallel_map(job, list(range(len(labels))), workers)
        for j, ll in enumerate(columns):
            if ll is None:
                continue
            for i, v in zip(test_idx, ll):
                (pos if Y[i, j] else neg)[j].append(v)
    stats = [
        ClassLikelihoodStats.from_values(labels[j], pos[j], neg[j])
        for j in range(len(labels))
        if pos[j] and neg[j]
    ]
    return stats, D


@dataclass(frozen=True)
class EliminationRound:
    round: int
    score: float
    dimension: int
    dropped: str | None
    remaining: tuple[str, ...]


@dataclass(frozen=True)
class EliminationTrace:
    baseline: EliminationRound
    rounds: tuple[EliminationRound, ...]

    def rows(self) -> list[EliminationRound]:
        """Baseline first, then one row per dropped feature."""
        return [self.baseline, *self.rounds]

    @property
    def dropped(self) -> list[str]:
        return [r.dropped for r in self.rounds]

    def to_csv(self) -> str:
        lines = ["round,score,dimension,dropped_feature"]
        for r in self.rows():
            lines.append(f"{r.round},{r.score!r},{r.dimension},{r.dropped or ''}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        out = [f"{'round':>5}  {'score':>14}  {'dim':>5}  dropped"]
        for r in self.rows():
            out.append(f"{r.round:>5}  {r.score:>14.6g}  {r.dimension:>5}  {r.dropped or '-'}")
        return "\n".join(out) + "\n"


Evaluator = Callable[[tuple[str, ...]], tuple[float, int]]


def backward_eliminate(
    features: Sequence[str],
    evaluate: Evaluator,
    min_features: int = 1,
    workers: int = 1,
) -> EliminationTrace:
    """Greedy backward elimination.

    Each round scores every subset with one feature removed and permanently
    drops the feature whose removal gives the highest score. Ties drop the
    lexicographically first name. A subset whose evaluation fails or yields
    NaN is skipped; if every subset fails the round raises.
    """
    current = tuple(features)
    if len(current) < 2:
        raise ValueError("backward elimination needs at least two features")
    if len(set(current)) != len(current):
        raise ValueError("duplicate feature names")
    min_features = max(1, int(min_features))

    def safe(subset):
        try:
            score, dim = evaluate(subset)
            return float(score), int(dim)
        except Exception:
            return math.nan, -1

    score, dim = safe(current)
    baseline = EliminationRound(1, score, dim, None, current)
    rounds = []
    while len(current) > min_features:
        candidates = sorted(current)
        results = parallel_map(lambda f: safe(tuple(x for x in current if x != f)), candidates, workers)
        ok = [(s, d, f) for (s, d), f in zip(results, candidates) if not math.isnan(s)]
        if not ok:
            raise RuntimeError(f"every candidate subset failed in round {len(rounds) + 2}")
        best = max(s for s, _, _ in ok)
        s, d, f = next(t for t in ok if t[0] == best)
        current = tuple(x for x in current if x != f)
        rounds.append(EliminationRound(len(rounds) + 2, s, d, f, current))
    return EliminationTrace(baseline, tuple(rounds))


def dataset_evaluator(
    dataset: Dataset,
    base_spec: FeatureSpec,
    config: ModelConfig,
    k: int = 3,
    seed: int = 0,
    workers: int = 1,
) -> Evaluator:
    """Score feature subsets on ``dataset`` with fixed stratified folds."""
    folds = stratified_kfold(dataset.label_matrix(), k, seed)

    def evaluate(subset: tuple[str, ...]) -> tuple[float, int]:
        spec = base_spec.with_features(list(subset))
        stats, D = likelihood_stats(dataset, spec, config, folds, seed, workers)
        return score_feature_set(stats, D), D

    return evaluate
