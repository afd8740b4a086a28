"""Factorial HMMs: M independent Gaussian chains with additive emissions.

Chains are trained one after another, each on the residual left by the
chains before it. Likelihoods are exact over the K**M joint state space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import hmm
from .hmm import HmmParams, ModelConfig
from .rng import derive_seed

MAX_JOINT_STATES = 10**6


@dataclass(frozen=True, eq=False)
class FhmmParams:
    chains: tuple[HmmParams, ...]

    def __post_init__(self):
        chains = tuple(self.chains)
        if not chains:
            raise ValueError("an FHMM needs at least one chain")
        first = chains[0]
        for c in chains[1:]:
            if c.K != first.K or c.D != first.D or c.topology != first.topology:
                raise ValueError("all chains must share K, D and topology")
        object.__setattr__(self, "chains", chains)

    @property
    def M(self) -> int:
        return len(self.chains)

    @property
    def W(self) -> float:
        return 1.0 / self.M

    @property
    def K(self) -> int:
        return self.chains[0].K

    @property
    def D(self) -> int:
        return self.chains[0].D

    def to_dict(self) -> dict:
        return {"M": self.M, "W": self.W, "chains": [c.to_dict() for c in self.chains]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FhmmParams":
        model = cls(tuple(HmmParams.from_dict(c) for c in d["chains"]))
        if model.M != d["M"]:
            raise ValueError("serialized M does not match chain count")
        return model


def chain_contribution(chain: HmmParams, obs) -> np.ndarray:
    """Posterior-weighted state means, c_t = sum_k gamma_tk mu_k, from a fresh forward-backward pass."""
    gamma = hmm.posteriors(chain, obs)
    return gamma @ chain.means


def residual(obs, contributions: Sequence[np.ndarray], W: float) -> np.ndarray:
    """e_t = (1/W) * (o_t - sum_i W * c_t^(i))."""
    o = np.asarray(getattr(obs, "data", obs), dtype=float)
    acc = np.zeros_like(o)
    for c in contributions:
        acc = acc + W * np.asarray(c, dtype=float)
    return (1.0 / W) * (o - acc)


def sequential_train(
    training: Sequence, M: int, config: ModelConfig, seed: int
) -> FhmmParams:
    """Train M chains in order, chain m on the residual of chains 1..m-1.

    Chain 1 uses ``seed`` directly so that M=1 matches :func:`hmm.fit`
    exactly. Each chain's contribution is computed on the series it was
    trained on.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    W = 1.0 / M
    raw = [np.asarray(getattr(o, "data", o), dtype=float) for o in training]
    chains: list[HmmParams] = []
    contributions: list[list[np.ndarray]] = [[] for _ in raw]
    inputs = raw
    for m in range(1, M + 1):
        if m > 1:
            inputs = [residual(o, cs, W) for o, cs in zip(raw, contributions)]
        chain_seed = seed if m == 1 else derive_seed(seed, "chain", m)
        chain = hmm.fit(inputs, config, chain_seed)
        chains.append(chain)
        if m < M:
            for n, x in enumerate(inputs):
                contributions[n].append(chain_contribution(chain, x))
    return FhmmParams(tuple(chains))


def combined_emission(model: FhmmParams, joint_state: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Mean W * sum mu and diagonal covariance W**2 * sum sigma for one joint state."""
    if len(joint_state) != model.M:
        raise ValueError(f"joint state needs {model.M} indices")
    W = model.W
    mean = np.zeros(model.D)
    var = np.zeros(model.D)
    for chain, k in zip(model.chains, joint_state):
        if not 0 <= int(k) < chain.K:
            raise IndexError(f"state index {k} out of range for K={chain.K}")
        mean += chain.means[k]
        var += chain.variances[k]
    return W * mean, W * W * var


def joint_states(K: int, M: int) -> np.ndarray:
    """All joint states in mixed-radix order, chain 1 most significant (K**M x M)."""
    return np.array(np.unravel_index(np.arange(K**M), (K,) * M)).T


def _guard(model: FhmmParams) -> None:
    if model.K**model.M > MAX_JOINT_STATES:
        raise ValueError(f"joint state space K**M = {model.K}**{model.M} exceeds {MAX_JOINT_STATES}")


def combined_emissions(model: FhmmParams) -> tuple[np.ndarray, np.ndarray]:
    """Means and variances for every joint state, vectorized over the joint index."""
    _guard(model)
    W = model.W
    means = np.zeros((1, model.D))
    var = np.zeros((1, model.D))
    for chain in model.chains:
        means = (means[:, None, :] + chain.means[None, :, :]).reshape(-1, model.D)
        var = (var[:, None, :] + chain.variances[None, :, :]).reshape(-1, model.D)
    return W * means, W * W * var


def flatten(model: FhmmParams) -> HmmParams:
    """Equivalent single HMM over the K**M joint state space."""
    _guard(model)
    pi = np.ones(1)
    A = np.ones((1, 1))
    mask = np.ones((1, 1), dtype=bool)
    for chain in model.chains:
        pi = np.kron(pi, chain.pi)
        A = np.kron(A, chain.A)
        mask = np.kron(mask, chain.mask).astype(bool)
    means, var = combined_emissions(model)
    # the joint topology is not a plain left-to-right chain; keep the mask only
    return HmmParams(pi, A, means, var, mask, hmm.Topology("ergodic"))


def log_likelihood(model: FhmmParams, obs) -> float:
    """Exact log p(O | model) by a forward pass over factored joint states.

    The transition step applies each chain's matrix along its own axis of the
    joint alpha tensor, so the K**M x K**M joint matrix is never formed.
    """
    _guard(model)
    x = np.asarray(getattr(obs, "data", obs), dtype=float)
    if x.ndim != 2 or x.shape[1] != model.D:
        raise ValueError("observation dimension does not match model")
    K, M = model.K, model.M
    shape = (K,) * M
    means, var = combined_emissions(model)
    log_b = hmm.gaussian_logpdf_diag(x, means, var).reshape((len(x),) + shape)
    with np.errstate(divide="ignore"):
        log_pis = [np.log(c.pi) for c in model.chains]
        log_As = [np.log(c.A) for c in model.chains]
    log_pi = np.zeros(())
    for lp in log_pis:
        log_pi = np.add.outer(log_pi, lp)
    alpha = log_pi + log_b[0]
    for t in range(1, len(x)):
        for m, log_A in enumerate(log_As):
            # move chain m's axis last, contract it against A, move it back
            a = np.moveaxis(alpha, m, -1)
            a = logsumexp(a[..., :, None] + log_A, axis=-2)
            alpha = np.moveaxis(a, -1, m)
        alpha = alpha + log_b[t]
    return float(logsumexp(alpha))
