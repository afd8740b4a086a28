"""End-to-end recognizers built from per-class (F)HMM ensembles.

Two systems are provided. The power-set system trains one model per
observed label combination and predicts the combination of the most
likely model. The multi-label system trains one model per label and lets
a decision maker map the vector of log-likelihoods to a label vector.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import fhmm, hmm
from .classifiers import DecisionMaker, decision_maker_from_dict, make_decision_maker
from .dataset import Dataset, LabelVocabulary, MotionRecord
from .evaluation import Summary, fold_indices, stratified_kfold, summarize
from .features import FeatureSpec, ObservationSequence, ScalerParams, build_observations, prepare
from .fhmm import FhmmParams
from .hmm import HmmParams, ModelConfig
from .rng import derive_seed

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "motionhmm-bundle/1"


class SystemTrainingError(RuntimeError):
    """Training one of the ensemble's models failed."""


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map, threaded when ``workers > 1``."""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(min(workers, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# power-set codec


class PowerSetCodec:
    """Maps observed label combinations to substitute class ids in registration order."""

    def __init__(self, n_labels: int, combos: Sequence[Sequence[int]] = ()):
        self.n_labels = n_labels
        self.combos: list[tuple[int, ...]] = []
        self._index: dict[tuple[int, ...], int] = {}
        for c in combos:
            self.register(c)

    def _key(self, bits) -> tuple[int, ...]:
        key = tuple(int(b) for b in np.asarray(bits).astype(int))
        if len(key) != self.n_labels:
            raise ValueError(f"label vector has {len(key)} entries, codec expects {self.n_labels}")
        return key

    def register(self, bits) -> int:
        key = self._key(bits)
        if key not in self._index:
            self._index[key] = len(self.combos)
            self.combos.append(key)
        return self._index[key]

    def encode(self, bits, register: bool = True) -> int:
        key = self._key(bits)
        if key in self._index:
            return self._index[key]
        if not register:
            raise KeyError(f"label combination {key} is not registered")
        return self.register(key)

    def decode(self, class_id: int) -> np.ndarray:
        if not 0 <= int(class_id) < len(self.combos):
            raise ValueError(f"invalid substitute class id {class_id}")
        return np.array(self.combos[int(class_id)], dtype=np.int8)

    def __len__(self) -> int:
        return len(self.combos)

    def to_dict(self) -> dict:
        return {"n_labels": self.n_labels, "combos": [list(c) for c in self.combos]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PowerSetCodec":
        return cls(d["n_labels"], d["combos"])


# ---------------------------------------------------------------------------
# configuration and trained systems


@dataclass(frozen=True)
class SystemConfig:
    kind: str = "multilabel"  # or "powerset"
    model: ModelConfig = field(default_factory=ModelConfig)
    decision: Mapping = field(default_factory=lambda: {"kind": "logistic", "penalty": "l1", "C": 1e-3})

    def __post_init__(self):
        if self.kind not in ("powerset", "multilabel"):
            raise ValueError(f"unknown system {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "model": self.model.to_dict()}
        if self.kind == "multilabel":
            d["decision"] = dict(self.decision)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SystemConfig":
        return cls(d["kind"], ModelConfig.from_dict(d["model"]), d.get("decision", {"kind": "max"}))


Model = HmmParams | FhmmParams


def train_model(observations: Sequence, config: ModelConfig, seed: int) -> Model:
    if config.model == "fhmm":
        return fhmm.sequential_train(observations, config.chains, config, seed)
    return hmm.fit(observations, config, seed)


def model_log_likelihood(model: Model, obs) -> float:
    if isinstance(model, FhmmParams):
        return fhmm.log_likelihood(model, obs)
    return hmm.log_likelihood(model, obs)


def _model_to_dict(model: Model) -> dict:
    if isinstance(model, FhmmParams):
        return {"type": "fhmm", **model.to_dict()}
    return {"type": "hmm", **model.to_dict()}


def _model_from_dict(d: Mapping) -> Model:
    if d.get("type") == "fhmm":
        return FhmmParams.from_dict(d)
    return HmmParams.from_dict(d)


@dataclass(eq=False)
class TrainedSystem:
    kind: str
    config: SystemConfig
    spec: FeatureSpec
    scaler: ScalerParams | None
    vocabulary: LabelVocabulary
    models: list
    model_names: list[str]
    seed: int
    codec: PowerSetCodec | None = None
    decision: DecisionMaker | None = None
    sparse: list[str] = field(default_factory=list)

    def observations(self, records: Sequence[MotionRecord]) -> list[ObservationSequence]:
        return build_observations(records, self.spec, self.scaler)

    def likelihoods(self, observations: Sequence, workers: int = 1) -> np.ndarray:
        """N x n_models log-likelihood matrix."""
        cols = parallel_map(
            lambda m: [model_log_likelihood(m, o) for o in observations], self.models, workers
        )
        return np.array(cols, dtype=float).reshape(len(self.models), len(observations)).T

    def decide(self, likelihoods: np.ndarray) -> np.ndarray:
        """Label matrix (N x L) for a likelihood matrix."""
        X = np.atleast_2d(likelihoods)
        if self.kind == "powerset":
            ids = [int(np.argmax(row)) for row in X]  # ties -> lowest id
            if not ids:
                return np.zeros((0, len(self.vocabulary)), dtype=np.int8)
            return np.stack([self.codec.decode(i) for i in ids])
        return self.decision.predict(X)

    def predict(self, records: Sequence[MotionRecord], workers: int = 1) -> np.ndarray:
        return self.decide(self.likelihoods(self.observations(records), workers))

    # -- persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        (directory / "models").mkdir(parents=True, exist_ok=True)
        files = []
        for i, m in enumerate(self.models):
            name = f"models/model_{i:03d}.json"
            (directory / name).write_text(json.dumps(_model_to_dict(m), indent=1, sort_keys=True) + "\n")
            files.append(name)
        manifest = {
            "format": BUNDLE_FORMAT,
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "features": self.spec.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_list(),
            "labels": list(self.vocabulary.labels),
            "model_names": self.model_names,
            "model_files": files,
            "sparse": self.sparse,
        }
        if self.codec is not None:
            manifest["codec"] = self.codec.to_dict()
        if self.decision is not None:
            (directory / "decision.json").write_text(json.dumps(self.decision.to_dict(), indent=1, sort_keys=True) + "\n")
            manifest["decision_file"] = "decision.json"
        path = directory / "bundle.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainedSystem":
        path = Path(path)
        if path.is_dir():
            path = path / "bundle.json"
        root = path.parent
        d = json.loads(path.read_text())
        if d.get("format") != BUNDLE_FORMAT:
            raise ValueError(f"{path}: not a system bundle")
        models = [_model_from_dict(json.loads((root / f).read_text())) for f in d["model_files"]]
        decision = None
        if d.get("decision_file"):
            decision = decision_maker_from_dict(json.loads((root / d["decision_file"]).read_text()))
        return cls(
            kind=d["kind"],
            config=SystemConfig.from_dict(d["config"]),
            spec=FeatureSpec.from_dict(d["features"]),
            scaler=None if d["scaler"] is None else ScalerParams.from_list(d["scaler"]),
            vocabulary=LabelVocabulary(tuple(d["labels"])),
            models=models,
            model_names=list(d["model_names"]),
            seed=d["seed"],
            codec=PowerSetCodec.from_dict(d["codec"]) if "codec" in d else None,
            decision=decision,
            sparse=list(d.get("sparse", [])),
        )


def _train_ensemble(
    groups: list[list[int]], names: list[str], observations: list, config: ModelConfig, seed: int, workers: int
) -> list:
    def job(i):
        obs = [observations[j] for j in groups[i]]
        try:
            return train_model(obs, config, derive_seed(seed, "model", i))
        except Exception as exc:
            raise SystemTrainingError(f"training model for {names[i]!r} failed: {exc}") from exc

    return parallel_map(job, list(range(len(groups))), workers)


def combo_name(vocabulary: LabelVocabulary, bits) -> str:
    return "+".join(vocabulary.decode(bits))


def train_powerset(
    dataset: Dataset, spec: FeatureSpec, config: ModelConfig, seed: int = 0, workers: int = 1
) -> TrainedSystem:
    """One model per label combination observed in ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    observations, scaler = prepare(dataset.records, spec)
    Y = dataset.label_matrix()
    codec = PowerSetCodec(Y.shape[1])
    ids = [codec.encode(y) for y in Y]
    groups = [[i for i, c in enumerate(ids) if c == k] for k in range(len(codec))]
    names = [combo_name(dataset.vocabulary, c) for c in codec.combos]
    sparse = [n for n, g in zip(names, groups) if len(g) == 1]
    for n in sparse:
        log.warning("combination %s has a single training sample", n)
    models = _train_ensemble(groups, names, observations, config, seed, workers)
    return TrainedSystem(
        "powerset", SystemConfig("powerset", config), spec, scaler, dataset.vocabulary,
        models, names, seed, codec=codec, sparse=sparse,
    )


def train_multilabel(
    dataset: Dataset,
    spec: FeatureSpec,
    config: ModelConfig,
    decision: Mapping | None = None,
    seed: int = 0,
    workers: int = 1,
) -> TrainedSystem:
    """One model per label, then a decision maker fitted on training likelihoods."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    decision = dict(decision or {"kind": "logistic", "penalty": "l1", "C": 1e-3})
    observations, scaler = prepare(dataset.records, spec)
    Y = dataset.label_matrix()
    labels = list(dataset.vocabulary.labels)
    groups = [list(np.flatnonzero(Y[:, j])) for j in range(Y.shape[1])]
    empty = [labels[j] for j, g in enumerate(groups) if not g]
    if empty:
        raise ValueError(f"labels without positive training samples: {', '.join(empty)}")
    models = _train_ensemble(groups, labels, observations, config, seed, workers)
    system = TrainedSystem(
        "multilabel", SystemConfig("multilabel", config, decision), spec, scaler,
        dataset.vocabulary, models, labels, seed,
    )
    X = system.likelihoods(observations, workers)
    params = {k: v for k, v in decision.items() if k != "kind"}
    if decision["kind"] in ("logistic", "svm", "linear", "tree", "forest"):
        params.setdefault("seed", derive_seed(seed, "decision"))
    system.decision = make_decision_maker(decision["kind"], **params).fit(X, Y)
    return system


def train_system(dataset: Dataset, spec: FeatureSpec, config: SystemConfig, seed: int = 0, workers: int = 1) -> TrainedSystem:
    if config.kind == "powerset":
        return train_powerset(dataset, spec, config.model, seed, workers)
    return train_multilabel(dataset, spec, config.model, config.decision, seed, workers)


def classify_powerset(system: TrainedSystem, motion: MotionRecord) -> np.ndarray:
    return system.predict([motion])[0]


def classify_multilabel(system: TrainedSystem, motion: MotionRecord) -> np.ndarray:
    return system.predict([motion])[0]


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True, eq=False)
class CrossValidation:
    folds: np.ndarray
    truth: np.ndarray
    predictions: np.ndarray
    summary: Summary
    class_summary: Summary | None = None  # power-set: metrics over substitute classes

    @property
    def reported(self) -> Summary:
        """Per-substitute-class metrics for the power-set system, per-label otherwise."""
        return self.class_summary if self.class_summary is not None else self.summary


def _one_hot_classes(Y: np.ndarray, codec: PowerSetCodec) -> np.ndarray:
    out = np.zeros((len(Y), len(codec)), dtype=np.int8)
    for i, y in enumerate(Y):
        out[i, codec.encode(y)] = 1
    return out


def cross_validate(
    dataset: Dataset,
    spec: FeatureSpec,
    config: SystemConfig,
    k: int = 3,
    seed: int = 0,
    workers: int = 1,
    folds: np.ndarray | None = None,
) -> CrossValidation:
    """Stratified k-fold evaluation with predictions pooled over the held-out folds."""
    Y = dataset.label_matrix()
    if folds is None:
        folds = stratified_kfold(Y, k, seed)
    k = int(folds.max()) + 1
    pred = np.zeros_like(Y)
    for f in range(k):
        train_idx, test_idx = fold_indices(folds, f)
        system = train_system(dataset.subset(train_idx), spec, config, derive_seed(seed, "fold", f), workers)
        pred[test_idx] = system.predict([dataset.records[i] for i in test_idx], workers)
    class_summary = None
    if config.kind == "powerset":
        codec = PowerSetCodec(Y.shape[1])
        for y in Y:
            codec.register(y)
        for y in pred:
            codec.register(y)
        class_summary = summarize(_one_hot_classes(pred, codec), _one_hot_classes(Y, codec))
    return CrossValidation(folds, Y, pred, summarize(pred, Y), class_summary)
