"""Synthetic motion datasets sampled from known left-to-right HMMs.

Every label owns a K x D template of state means. A label combination is
generated by an HMM whose state means are the sum of its labels' templates,
so combinations that share a label share structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from . import hmm
from .dataset import Dataset, LabelVocabulary, MotionRecord
from .hmm import HmmParams, Topology
from .rng import derive_seed, generator


@dataclass(frozen=True)
class SynthConfig:
    n_labels: int = 6
    n_combos: int = 8
    combos: tuple[tuple[str, ...], ...] | None = None  # explicit combos override n_labels/n_combos
    sequences: int = 20
    length: int = 80
    dim: int = 6
    states: int = 5
    stay: float = 0.9
    separation: float = 2.0
    noise: float = 0.5
    sample_rate_hz: float = 100.0
    channel: str = "joint_pos"

    def __post_init__(self):
        if self.sequences < 1 or self.length < 2 or self.dim < 1 or self.states < 1:
            raise ValueError("sequences, length, dim and states must be positive (length >= 2)")
        if not 0.0 < self.stay < 1.0 and self.states > 1:
            raise ValueError("stay probability must lie in (0, 1)")
        if self.combos is None:
            if self.n_labels < 1 or not 1 <= self.n_combos <= 2**self.n_labels - 1:
                raise ValueError("need 1 <= n_combos <= 2**n_labels - 1")


def label_names(n: int) -> list[str]:
    return [f"label{j}" for j in range(n)]


def default_combos(n_labels: int, n_combos: int, seed: int) -> list[tuple[str, ...]]:
    """Singletons first (so every label appears), then seeded distinct pairs and triples."""
    names = label_names(n_labels)
    combos = [(n,) for n in names[: min(n_labels, n_combos)]]
    rng = generator(seed, "combos")
    seen = set(combos)
    size = 2
    while len(combos) < n_combos:
        size = min(size, n_labels)
        pick = tuple(sorted(rng.choice(n_labels, size=size, replace=False)))
        combo = tuple(names[i] for i in pick)
        if combo not in seen:
            seen.add(combo)
            combos.append(combo)
        elif len(seen) >= _count_of_size(n_labels, size):
            size += 1
    return combos


def _count_of_size(n: int, k: int) -> int:
    return sum(comb(n, i) for i in range(1, k + 1))


def templates(labels: Sequence[str], config: SynthConfig, seed: int) -> dict[str, np.ndarray]:
    rng = generator(seed, "templates")
    return {
        label: rng.normal(0.0, config.separation, size=(config.states, config.dim))
        for label in labels
    }


def combo_model(combo: Sequence[str], tmpl: dict[str, np.ndarray], config: SynthConfig) -> HmmParams:
    K = config.states
    A = np.zeros((K, K))
    for i in range(K):
        if i + 1 < K:
            A[i, i], A[i, i + 1] = config.stay, 1.0 - config.stay
        else:
            A[i, i] = 1.0
    pi = np.zeros(K)
    pi[0] = 1.0
    means = sum(tmpl[l] for l in combo)
    var = np.full((K, config.dim), config.noise**2)
    topo = Topology("left_to_right", 1)
    return HmmParams(pi, A, means, var, topo.transition_mask(K), topo)


def generate(config: SynthConfig = SynthConfig(), seed: int = 0) -> tuple[Dataset, list[HmmParams]]:
    """Sample a dataset; returns it with the generating model of every combination."""
    combos = list(config.combos) if config.combos else default_combos(config.n_labels, config.n_combos, seed)
    labels = sorted({l for c in combos for l in c})
    vocab = LabelVocabulary.from_labels(labels)
    tmpl = templates(labels, config, seed)
    samples, models = [], []
    for c, combo in enumerate(combos):
        model = combo_model(combo, tmpl, config)
        models.append(model)
        bits = vocab.encode(combo)
        for s in range(config.sequences):
            obs = hmm.sample(model, config.length, derive_seed(seed, "combo", c, "seq", s))
            rec = MotionRecord(
                f"synth_c{c:02d}_s{s:03d}",
                config.sample_rate_hz,
                ((config.channel, config.dim),),
                obs,
            )
            samples.append((rec, bits))
    return Dataset(vocab, tuple(samples)), models


def selection_fixture(
    n_labels: int = 2,
    sequences: int = 40,
    length: int = 60,
    seed: int = 0,
    separation: float = 1.5,
    states: int = 3,
    return_generators: bool = False,
) -> Dataset | tuple[Dataset, list[HmmParams]]:
    """Single-label motions whose root, rotation, CoM and joint channels depend on the class
    while a single marker carries class-independent white noise.

    Every channel is 3 wide, so the features ``root_pos``, ``root_rot``,
    ``com_pos`` and ``joint_pos`` are informative and ``marker_pos``,
    ``marker_vel`` and ``marker_acc`` are pure noise. With
    ``return_generators`` the class HMMs (emitting the 12 informative
    columns) are returned as well.
    """
    informative = ("root_pos", "root_rot", "com_pos", "joint_pos")
    cfg = SynthConfig(
        combos=tuple((n,) for n in label_names(n_labels)),
        sequences=sequences,
        length=length,
        dim=3 * len(informative),
        states=states,
        separation=separation,
        noise=0.5,
    )
    base, models = generate(cfg, seed)
    rng = generator(seed, "marker-noise")
    channels = tuple((name, 3) for name in informative) + (("marker_pos", 3),)
    samples = []
    for rec, bits in base.samples:
        noise = rng.normal(0.0, 1.0, size=(rec.n_frames, 3))
        samples.append((MotionRecord(rec.id, rec.sample_rate_hz, channels, np.hstack([rec.frames, noise])), bits))
    data = Dataset(base.vocabulary, tuple(samples))
    return (data, models) if return_generators else data
