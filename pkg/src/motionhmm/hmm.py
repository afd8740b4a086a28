"""Gaussian-emission hidden Markov models.

All probability arithmetic is carried out on natural-log values. A
probability of zero is represented by ``-inf`` (:data:`LOG_ZERO`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from numba import njit

from .rng import generator

LOG_ZERO = -np.inf
DEFAULT_VARIANCE_FLOOR = 1e-4


class TrainingError(RuntimeError):
    """Baum-Welch produced a non-finite statistic."""


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class Topology:
    kind: str = "left_to_right"
    delta: int | None = None

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        if kind in ("fully_connected", "full"):
            kind = "ergodic"
        if kind not in ("ergodic", "left_to_right"):
            raise ValueError(f"unknown topology {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.delta is not None:
            if kind != "left_to_right":
                raise ValueError("delta only applies to left-to-right topologies")
            if int(self.delta) < 1:
                raise ValueError("delta must be >= 1")
            object.__setattr__(self, "delta", int(self.delta))

    def transition_mask(self, K: int) -> np.ndarray:
        if self.kind == "ergodic":
            return np.ones((K, K), dtype=bool)
        i, j = np.indices((K, K))
        mask = j >= i
        if self.delta is not None:
            mask &= j <= i + self.delta
        return mask

    def start_mask(self, K: int) -> np.ndarray:
        if self.kind == "ergodic":
            return np.ones(K, dtype=bool)
        mask = np.zeros(K, dtype=bool)
        mask[0] = True
        return mask

    def label(self) -> str:
        if self.kind == "ergodic":
            return "fully connected"
        return "left-to-right" if self.delta is None else f"left-to-right delta={self.delta}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Topology":
        return cls(d["kind"], d.get("delta"))


@dataclass(frozen=True, eq=False)
class HmmParams:
    """Parameters of one Gaussian HMM.

    ``covariances`` holds per-state diagonal variances (K x D) or, only for
    untrained models initialized with full matrices, K x D x D covariances.
    """

    pi: np.ndarray
    A: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    mask: np.ndarray
    topology: Topology = field(default_factory=Topology)

    def __post_init__(self):
        for name in ("pi", "A", "means", "covariances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        K, D = self.means.shape
        if self.pi.shape != (K,) or self.A.shape != (K, K) or self.mask.shape != (K, K):
            raise ValueError("inconsistent HMM parameter shapes")
        if self.covariances.shape not in ((K, D), (K, D, D)):
            raise ValueError("covariances must be K x D or K x D x D")

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    @property
    def full_covariance(self) -> bool:
        return self.covariances.ndim == 3

    @property
    def variances(self) -> np.ndarray:
        """Per-state diagonal variances (the diagonal of full covariances)."""
        if self.full_covariance:
            return np.diagonal(self.covariances, axis1=1, axis2=2).copy()
        return self.covariances

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "D": self.D,
            "topology": self.topology.to_dict(),
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "mask": self.mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HmmParams":
        model = cls(
            pi=d["pi"],
            A=d["A"],
            means=d["means"],
            covariances=d["covariances"],
            mask=np.asarray(d["mask"], dtype=bool),
            topology=Topology.from_dict(d["topology"]),
        )
        if model.K != d["K"] or model.D != d["D"]:
            raise ValueError("serialized K/D do not match parameter shapes")
        return model


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 10
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.variance_floor > 0:
            raise ValueError("variance floor must be positive")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build and train one (F)HMM from data."""

    n_states: int = 5
    topology: Topology = field(default_factory=lambda: Topology("left_to_right", 1))
    transition_init: str = "uniform"  # or "randomized"
    emission_init: str = "kmeans"  # or "random"
    covariance: str = "diagonal"  # or "full" (initialization only)
    iterations: int = 10
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    model: str = "hmm"  # or "fhmm"
    chains: int = 1

    def __post_init__(self):
        if self.model not in ("hmm", "fhmm"):
            raise ValueError(f"unknown model type {self.model!r}")
        if self.model == "hmm" and self.chains != 1:
            raise ValueError("chains only apply to fhmm models")
        if self.chains < 1 or self.n_states < 1:
            raise ValueError("n_states and chains must be >= 1")
        if self.transition_init not in ("uniform", "randomized"):
            raise ValueError(f"unknown transition init {self.transition_init!r}")
        if self.emission_init not in ("kmeans", "random"):
            raise ValueError(f"unknown emission init {self.emission_init!r}")
        if self.covariance not in ("diagonal", "full"):
            raise ValueError(f"unknown covariance type {self.covariance!r}")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.iterations, self.variance_floor, seed)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "chains": self.chains,
            "n_states": self.n_states,
            "topology": self.topology.to_dict(),
            "transition_init": self.transition_init,
            "emission_init": self.emission_init,
            "covariance": self.covariance,
            "iterations": self.iterations,
            "variance_floor": self.variance_floor,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        d["topology"] = Topology.from_dict(d["topology"])
        return cls(**d)


# ---------------------------------------------------------------------------
# numba kernels (log domain)


@njit(cache=True, nogil=True)
def _logsumexp(v):
    m = -np.inf
    for x in v:
        if x > m:
            m = x
    if m == -np.inf:
        return -np.inf
    s = 0.0
    for x in v:
        s += math.exp(x - m)
    return m + math.log(s)


@njit(cache=True, nogil=True)
def _forward(log_pi, log_A, log_b):
    T, K = log_b.shape
    alpha = np.empty((T, K))
    tmp = np.empty(K)
    for k in range(K):
        alpha[0, k] = log_pi[k] + log_b[0, k]
    for t in range(1, T):
        for j in range(K):
            for i in range(K):
                tmp[i] = alpha[t - 1, i] + log_A[i, j]
            alpha[t, j] = _logsumexp(tmp) + log_b[t, j]
    return alpha


@njit(cache=True, nogil=True)
def _backward(log_A, log_b):
    T, K = log_b.shape
    beta = np.empty((T, K))
    tmp = np.empty(K)
    for k in range(K):
        beta[T - 1, k] = 0.0
    for t in range(T - 2, -1, -1):
        for i in range(K):
            for j in range(K):
                tmp[j] = log_A[i, j] + log_b[t + 1, j] + beta[t + 1, j]
            beta[t, i] = _logsumexp(tmp)
    return beta


@njit(cache=True, nogil=True)
def _xi_sum(alpha, beta, log_A, log_b, loglik):
    T, K = log_b.shape
    out = np.zeros((K, K))
    for t in range(T - 1):
        for i in range(K):
            a = alpha[t, i]
            if a == -np.inf:
                continue
            for j in range(K):
                v = a + log_A[i, j] + log_b[t + 1, j] + beta[t + 1, j] - loglik
                if v > -np.inf:
                    out[i, j] += math.exp(v)
    return out


@njit(cache=True, nogil=True)
def _viterbi(log_pi, log_A, log_b):
    T, K = log_b.shape
    delta = np.empty((T, K))
    psi = np.zeros((T, K), dtype=np.int64)
    for k in range(K):
        delta[0, k] = log_pi[k] + log_b[0, k]
    for t in range(1, T):
        for j in range(K):
            best = -np.inf
            arg = 0
            for i in range(K):
                v = delta[t - 1, i] + log_A[i, j]
                if v > best:  # strict: ties keep the lowest index
                    best = v
                    arg = i
            delta[t, j] = best + log_b[t, j]
            psi[t, j] = arg
    best = -np.inf
    last = 0
    for k in range(K):
        if delta[T - 1, k] > best:
            best = delta[T - 1, k]
            last = k
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return best, path


# ---------------------------------------------------------------------------
# densities


def _as_matrix(obs) -> np.ndarray:
    x = np.asarray(getattr(obs, "data", obs), dtype=float)
    if x.ndim != 2:
        raise ValueError("observations must be a T x D matrix")
    return x


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def gaussian_logpdf_diag(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Log density of diagonal Gaussians; x (T, D), mean/var (K, D) -> (T, K)."""
    x = np.asarray(x, dtype=float)
    D = x.shape[1]
    const = -0.5 * (D * np.log(2 * np.pi) + np.log(var).sum(axis=1))
    diff = x[:, None, :] - mean[None, :, :]
    # far-off frames may overflow to +inf, which is a log density of -inf
    with np.errstate(over="ignore"):
        quad = (diff * diff / var[None, :, :]).sum(axis=2)
    return const - 0.5 * quad


def gaussian_logpdf_full(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    T, D = x.shape
    out = np.empty((T, mean.shape[0]))
    for k in range(mean.shape[0]):
        try:
            L = np.linalg.cholesky(cov[k])
        except np.linalg.LinAlgError:
            out[:, k] = np.nan
            continue
        z = np.linalg.solve(L, (x - mean[k]).T)
        out[:, k] = -0.5 * (D * np.log(2 * np.pi) + (z * z).sum(axis=0)) - np.log(np.diag(L)).sum()
    return out


def emission_logprob(model: HmmParams, obs) -> np.ndarray:
    x = _as_matrix(obs)
    if x.shape[1] != model.D:
        raise ValueError(f"observation dimension {x.shape[1]} does not match model dimension {model.D}")
    if model.full_covariance:
        return gaussian_logpdf_full(x, model.means, model.covariances)
    return gaussian_logpdf_diag(x, model.means, model.covariances)


# ---------------------------------------------------------------------------
# initialization


def init_transition(
    K: int, topology: Topology, mode: str = "uniform", seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Start vector, transition matrix and mask for a topology.

    ``randomized`` multiplies every allowed entry (start and transition) by a
    fresh U[0, 1) draw and renormalizes; disallowed entries stay zero.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    mask = topology.transition_mask(K)
    start = topology.start_mask(K)
    A = mask.astype(float)
    pi = start.astype(float)
    if mode == "randomized":
        rng = generator(seed, "transition")
        A = A * rng.uniform(0.0, 1.0, size=(K, K))
        pi = pi * rng.uniform(0.0, 1.0, size=K)
    elif mode != "uniform":
        raise ValueError(f"unknown transition init {mode!r}")
    A = A / A.sum(axis=1, keepdims=True)
    pi = pi / pi.sum()
    return pi, A, mask


def kmeans(X: np.ndarray, K: int, seed: int, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm seeded with K distinct frames drawn without replacement.

    An empty cluster is re-seeded with the frame farthest from its current
    center. Returns ``(centers, labels)``.
    """
    X = np.asarray(X, dtype=float)
    distinct = np.unique(X, axis=0)
    if distinct.shape[0] < K:
        raise ValueError(f"k-means needs at least {K} distinct frames, found {distinct.shape[0]}")
    rng = generator(seed, "kmeans")
    centers = distinct[np.sort(rng.choice(distinct.shape[0], size=K, replace=False))].copy()
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        counts = np.bincount(new, minlength=K)
        for k in np.flatnonzero(counts == 0):
            far = int(d2[np.arange(len(X)), new].argmax())
            new[far] = k
            d2[far, :] = 0.0
            counts = np.bincount(new, minlength=K)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            centers[k] = X[labels == k].mean(axis=0)
    return centers, labels


def init_emission_kmeans(
    training: Sequence, K: int, seed: int = 0, floor: float = DEFAULT_VARIANCE_FLOOR
) -> tuple[np.ndarray, np.ndarray]:
    """State means from k-means centers of all stacked frames, floored per-cluster variances.

    Clusters are numbered by the mean relative time (t / (T - 1)) of their
    frames, so that in a left-to-right model state 0 starts near the
    beginning of the sequences. Ties keep the k-means order.
    """
    seqs = [_as_matrix(o) for o in training]
    X = np.vstack(seqs)
    if X.shape[0] < K:
        raise ValueError(f"{X.shape[0]} frames cannot initialize {K} states")
    rel_time = np.concatenate([np.arange(len(s)) / max(len(s) - 1, 1) for s in seqs])
    centers, labels = kmeans(X, K, seed)
    timing = np.array([rel_time[labels == k].mean() for k in range(K)])
    order = np.argsort(timing, kind="stable")
    centers = centers[order]
    labels = np.argsort(order)[labels]
    var = np.empty_like(centers)
    for k in range(K):
        var[k] = X[labels == k].var(axis=0)
    return centers, np.maximum(var, floor)


def init_emission_random(
    K: int, D: int, seed: int = 0, diagonal: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Means uniform in [-1, 1]; covariances R @ R.T for a uniform random R (or its diagonal)."""
    rng = generator(seed, "emission")
    means = rng.uniform(-1.0, 1.0, size=(K, D))
    R = rng.uniform(-1.0, 1.0, size=(K, D, D))
    cov = R @ np.swapaxes(R, 1, 2)
    if diagonal:
        cov = cov * np.eye(D)
    return means, cov


def initialize(training: Sequence, config: ModelConfig, seed: int) -> HmmParams:
    """Build an untrained HMM from data according to ``config``."""
    K = config.n_states
    pi, A, mask = init_transition(K, config.topology, config.transition_init, seed)
    D = _as_matrix(training[0]).shape[1]
    if config.emission_init == "kmeans":
        means, var = init_emission_kmeans(training, K, seed, config.variance_floor)
        cov = var if config.covariance == "diagonal" else _kmeans_full_cov(training, means, config.variance_floor)
    else:
        means, cov = init_emission_random(K, D, seed, diagonal=config.covariance == "diagonal")
        if config.covariance == "diagonal":
            cov = np.maximum(np.diagonal(cov, axis1=1, axis2=2), config.variance_floor)
    return HmmParams(pi, A, means, cov, mask, config.topology)


def _kmeans_full_cov(training: Sequence, means: np.ndarray, floor: float) -> np.ndarray:
    X = np.vstack([_as_matrix(o) for o in training])
    labels = ((X[:, None, :] - means[None]) ** 2).sum(axis=2).argmin(axis=1)
    K, D = means.shape
    cov = np.empty((K, D, D))
    for k in range(K):
        diff = X[labels == k] - means[k]
        cov[k] = diff.T @ diff / max(len(diff), 1)
        cov[k][np.diag_indices(D)] = np.maximum(np.diag(cov[k]), floor)
    return cov


# ---------------------------------------------------------------------------
# inference


def log_likelihood(model: HmmParams, obs) -> float:
    """log p(O | model) by the log-domain forward recursion (``-inf`` if impossible)."""
    log_b = emission_logprob(model, obs)
    alpha = _forward(_safe_log(model.pi), _safe_log(model.A), log_b)
    return float(_logsumexp(alpha[-1]))


def forward_backward(model: HmmParams, obs) -> tuple[float, np.ndarray, np.ndarray]:
    """Return ``(loglik, gamma, xi_sum)``.

    ``gamma`` is the T x K state posterior; ``xi_sum`` the K x K expected
    transition counts summed over time.
    """
    log_b = emission_logprob(model, obs)
    log_A = _safe_log(model.A)
    alpha = _forward(_safe_log(model.pi), log_A, log_b)
    beta = _backward(log_A, log_b)
    ll = float(_logsumexp(alpha[-1]))
    if not np.isfinite(ll):
        return ll, np.full(log_b.shape, np.nan), np.full((model.K, model.K), np.nan)
    gamma = np.exp(alpha + beta - ll)
    return ll, gamma, _xi_sum(alpha, beta, log_A, log_b, ll)


def posteriors(model: HmmParams, obs) -> np.ndarray:
    return forward_backward(model, obs)[1]


def viterbi(model: HmmParams, obs) -> tuple[np.ndarray, float]:
    """Most likely state path and its joint log-probability.

    An impossible sequence yields an empty path and ``-inf``.
    """
    log_b = emission_logprob(model, obs)
    score, path = _viterbi(_safe_log(model.pi), _safe_log(model.A), log_b)
    if not np.isfinite(score):
        return np.zeros(0, dtype=np.int64), LOG_ZERO
    return path, float(score)


def train(
    model: HmmParams,
    training: Sequence,
    config: TrainConfig,
    callback: Callable[[int, float, HmmParams], None] | None = None,
) -> HmmParams:
    """Batched Baum-Welch with diagonal covariance re-estimation.

    Sufficient statistics are accumulated over every sequence before each
    M-step. ``callback(iteration, total_loglik, new_model)`` is invoked after
    every M-step; ``total_loglik`` is the likelihood of the parameters that
    entered that iteration.
    """
    seqs = [_as_matrix(o) for o in training]
    if not seqs:
        raise ValueError("training needs at least one sequence")
    if any(s.shape[1] != model.D for s in seqs):
        raise ValueError("all training sequences must match the model dimension")
    floor = config.variance_floor
    K = model.K
    for it in range(1, config.iterations + 1):
        total = 0.0
        pi_acc = np.zeros(K)
        A_acc = np.zeros((K, K))
        w = np.zeros(K)
        s1 = np.zeros((K, model.D))
        s2 = np.zeros((K, model.D))
        for x in seqs:
            ll, gamma, xi = forward_backward(model, x)
            if not np.isfinite(ll):
                raise TrainingError(f"iteration {it}: sequence has zero likelihood under the current model")
            total += ll
            pi_acc += gamma[0]
            A_acc += xi
            w += gamma.sum(axis=0)
            s1 += gamma.T @ x
            s2 += gamma.T @ (x * x)
        if not (np.isfinite(total) and np.all(np.isfinite(A_acc)) and np.all(np.isfinite(s2))):
            raise TrainingError(f"iteration {it}: non-finite sufficient statistics")

        pi = pi_acc / pi_acc.sum()
        rows = A_acc.sum(axis=1, keepdims=True)
        A = np.where(rows > 0, A_acc / np.where(rows > 0, rows, 1.0), model.A)
        used = w > 1e-300
        safe_w = np.where(used, w, 1.0)[:, None]
        means = np.where(used[:, None], s1 / safe_w, model.means)
        old_var = model.variances
        var = np.where(used[:, None], s2 / safe_w - means * means, old_var)
        var = np.maximum(var, floor)
        # masked entries are zero in the accumulators already; enforce exactly
        A = np.where(model.mask, A, 0.0)
        model = replace(model, pi=pi, A=A, means=means, covariances=var)
        if callback is not None:
            callback(it, total, model)
    return model


def total_log_likelihood(model: HmmParams, training: Sequence) -> float:
    return float(sum(log_likelihood(model, o) for o in training))


def fit(training: Sequence, config: ModelConfig, seed: int) -> HmmParams:
    """Initialize from ``config`` and train with Baum-Welch."""
    model = initialize(training, config, seed)
    return train(model, training, config.train_config(seed))


def sample(model: HmmParams, T: int, seed: int = 0, return_states: bool = False):
    """Draw a length-T observation sequence (and optionally its state path)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = generator(seed, "sample")
    states = np.empty(T, dtype=np.int64)
    states[0] = rng.choice(model.K, p=model.pi)
    for t in range(1, T):
        states[t] = rng.choice(model.K, p=model.A[states[t - 1]])
    noise = rng.standard_normal((T, model.D))
    if model.full_covariance:
        L = np.linalg.cholesky(model.covariances)
        obs = model.means[states] + np.einsum("tij,tj->ti", L[states], noise)
    else:
        obs = model.means[states] + np.sqrt(model.covariances[states]) * noise
    return (obs, states) if return_states else obs
