"""Command-line interface.

Exit codes: 0 on success, 1 on IO or system failures, 2 on validation or
usage errors. Every CSV starts with ``#`` comment lines recording the
command, the seed and the full configuration. The worker count is left out
so outputs do not depend on parallelism.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import dataset as ds_mod
from .classifiers import make_decision_maker
from .dataset import DatasetError, LoadError, ValidationError
from .evaluation import confusion, f1, grid_search, precision, recall, accuracy, stratified_kfold
from .features import FeatureSpec
from .hmm import ModelConfig, Topology
from .systems import PowerSetCodec, SystemConfig, SystemTrainingError, TrainedSystem, cross_validate, train_system

EXIT_OK, EXIT_IO, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def default_threads() -> int:
    raw = os.environ.get("MOTIONHMM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MOTIONHMM_THREADS must be an integer, got {raw!r}") from None


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence], meta: dict) -> Path:
    """CSV with '#' metadata lines; floats use their shortest round-trip form."""
    buf = io.StringIO()
    for key, value in meta.items():
        text = json.dumps(value, sort_keys=True) if isinstance(value, (dict, list)) else str(value)
        buf.write(f"# {key}: {text}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def text_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(header)] + [
        [f"{v:.4f}" if isinstance(v, (float, np.floating)) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot write {path}: {exc.strerror or exc}") from None


def _load_dataset(path: str):
    return ds_mod.load(path)


def _parse_topology(text: str, delta: int | None = None) -> Topology:
    """``ergodic``, ``left_to_right`` or ``left_to_right:<delta>``."""
    kind, _, d = text.partition(":")
    if d:
        if delta is not None and delta != int(d):
            raise UsageError(f"--delta {delta} conflicts with topology {text!r}")
        delta = int(d)
    return Topology(kind, delta)


def _feature_spec(args) -> FeatureSpec:
    text = args.features
    if text.endswith(".json") or Path(text).is_file():
        try:
            return FeatureSpec.from_json(Path(text).read_text(encoding="utf-8"))
        except OSError as exc:
            raise LoadError(f"cannot read feature spec {text}: {exc.strerror or exc}") from None
    names = [n.strip() for n in text.split(",") if n.strip()]
    return FeatureSpec(
        names,
        normalized=not args.no_normalize,
        smoothed=not args.no_smooth,
        window=args.window,
        scaled=not args.no_scale,
    )


def _model_config(args) -> ModelConfig:
    if args.model == "hmm" and args.chains is not None:
        raise UsageError("--chains only applies to --model fhmm")
    chains = args.chains if args.chains is not None else (2 if args.model == "fhmm" else 1)
    return ModelConfig(
        n_states=args.states,
        topology=_parse_topology(args.topology, args.delta),
        transition_init=args.transition_init,
        emission_init=args.emission_init,
        covariance=args.covariance,
        iterations=args.iterations,
        model=args.model,
        chains=chains,
    )


def _decision(args) -> dict:
    d = {"kind": args.decision}
    if args.decision in ("logistic", "svm"):
        d.update(penalty=args.penalty, C=args.C)
    elif args.decision in ("tree", "forest"):
        d.update(criterion=args.criterion, max_depth=args.max_depth)
        if args.decision == "forest":
            d["n_trees"] = args.n_trees
    elif args.decision == "threshold":
        d["boundary"] = args.boundary
    make_decision_maker(**d)  # validate early
    return d


def _system_config(args, kind: str) -> SystemConfig:
    return SystemConfig(kind, _model_config(args), _decision(args))


def _meta(command: str, seed: int, config: dict) -> dict:
    return {"motionhmm": f"{__version__} {command}", "seed": seed, "config": config}


# ---------------------------------------------------------------------------
# commands


def cmd_dataset(args) -> int:
    dataset = _load_dataset(args.path)
    if args.action == "validate":
        print(f"ok: {len(dataset)} samples, {len(dataset.vocabulary)} labels")
        return EXIT_OK
    if args.action == "export":
        if not args.out:
            raise UsageError("dataset export needs --out")
        ds_mod.export(dataset, args.out)
        print(f"wrote {args.out}")
        return EXIT_OK
    rep = ds_mod.report(dataset)
    if not args.out:
        sys.stdout.write(rep.to_text())
        return EXIT_OK
    out = Path(args.out)
    meta = _meta("dataset report", 0, {"dataset": Path(args.path).name})
    write_table(out / "labels.csv", ["label", "samples"], rep.label_counts, meta)
    write_table(
        out / "combinations.csv",
        ["combination", "samples"],
        [("+".join(c), n) for c, n in rep.combination_counts],
        meta,
    )
    _write_text(out / "report.txt", rep.to_text())
    from . import plotting

    plotting.label_counts(rep.label_counts, out / "labels.png")
    print(f"wrote report to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = ds_mod.shuffle(_load_dataset(args.dataset), args.seed)
    spec = _feature_spec(args)
    config = _system_config(args, args.system)
    system = train_system(dataset, spec, config, args.seed, args.threads)
    path = system.save(args.out)
    for name in system.sparse:
        print(f"warning: combination {name} has a single training sample", file=sys.stderr)
    print(f"wrote {path} ({len(system.models)} models)")
    return EXIT_OK


def cmd_classify(args) -> int:
    try:
        system = TrainedSystem.load(args.bundle)
    except OSError as exc:
        raise LoadError(f"cannot read bundle {args.bundle}: {exc.strerror or exc}") from None
    motion = ds_mod.read_motion(args.motion)
    obs = system.observations([motion])
    ll = system.likelihoods(obs, args.threads)
    labels = system.vocabulary.decode(system.decide(ll)[0])
    if args.json:
        doc = {
            "motion": motion.id,
            "labels": list(labels),
            "loglikelihoods": {n: float(v) for n, v in zip(system.model_names, ll[0])},
        }
        print(json.dumps(doc, indent=1, sort_keys=True))
    else:
        print(", ".join(labels) if labels else "(no label)")
    return EXIT_OK


def _label_rows(names, pred, truth):
    c = confusion(pred, truth)
    p, r, f, a = precision(c), recall(c), f1(c), accuracy(c)
    return [
        (n, int(c.tp[j]), int(c.fp[j]), int(c.fn[j]), int(c.tn[j]), p[j], r[j], f[j], a[j])
        for j, n in enumerate(names)
    ]


LABEL_HEADER = ["label", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "accuracy"]
RESULT_HEADER = [
    "feature_set", "system", "model", "topology", "states", "chains", "decision",
    "f1", "precision", "recall", "total_accuracy",
]


def _result_row(spec: FeatureSpec, config: SystemConfig, summary) -> list:
    m = config.model
    return [
        "+".join(spec.features),
        config.kind,
        m.model,
        m.topology.label(),
        m.n_states,
        m.chains,
        config.decision["kind"] if config.kind == "multilabel" else "max",
        summary.f1,
        summary.precision,
        summary.recall,
        summary.total_accuracy,
    ]


def cmd_eval(args) -> int:
    dataset = _load_dataset(args.dataset)
    spec = _feature_spec(args)
    config = _system_config(args, args.system)
    cv = cross_validate(dataset, spec, config, args.k, args.seed, args.threads)
    meta = _meta("eval kfold", args.seed, {"k": args.k, "features": spec.to_dict(), "system": config.to_dict()})
    out = Path(args.out)
    row = _result_row(spec, config, cv.reported)
    write_table(out / "results.csv", RESULT_HEADER, [row], meta)
    labels = list(dataset.vocabulary.labels)
    label_rows = _label_rows(labels, cv.predictions, cv.truth)
    write_table(out / "per_label.csv", LABEL_HEADER, label_rows, meta)
    names, f1s = labels, [r[7] for r in label_rows]
    if config.kind == "powerset":
        codec = PowerSetCodec(cv.truth.shape[1])
        for y in cv.truth:
            codec.register(y)
        for y in cv.predictions:
            codec.register(y)
        onehot = lambda Y: np.eye(len(codec), dtype=np.int8)[[codec.encode(y) for y in Y]]  # noqa: E731
        names = ["+".join(dataset.vocabulary.decode(c)) or "(none)" for c in codec.combos]
        class_rows = _label_rows(names, onehot(cv.predictions), onehot(cv.truth))
        write_table(out / "per_class.csv", ["class"] + LABEL_HEADER[1:], class_rows, meta)
        f1s = [r[7] for r in class_rows]
    write_table(
        out / "folds.csv", ["motion", "fold"], list(zip(dataset.ids, cv.folds.tolist())), meta
    )
    _write_text(out / "results.txt", text_table(RESULT_HEADER, [row]))
    from . import plotting

    plotting.per_label_f1(names, f1s, out / "f1.png")
    s = cv.reported
    print(f"f1={s.f1:.4f} precision={s.precision:.4f} recall={s.recall:.4f} total_accuracy={s.total_accuracy:.4f}")
    return EXIT_OK


def cmd_select(args) -> int:
    from .selection import backward_eliminate, dataset_evaluator

    dataset = _load_dataset(args.dataset)
    spec = _feature_spec(args)
    config = _model_config(args)
    evaluator = dataset_evaluator(dataset, spec, config, args.k, args.seed, args.threads)
    trace = backward_eliminate(spec.features, evaluator, args.min_features, workers=1)
    meta = _meta(
        "select-features", args.seed, {"k": args.k, "features": spec.to_dict(), "model": config.to_dict()}
    )
    out = Path(args.out)
    write_table(
        out / "trace.csv",
        ["round", "score", "dimension", "dropped_feature"],
        [(r.round, r.score, r.dimension, r.dropped or "") for r in trace.rows()],
        meta,
    )
    _write_text(out / "trace.txt", trace.to_text())
    from . import plotting

    plotting.elimination_trace(trace.rows(), out / "trace.png")
    sys.stdout.write(trace.to_text())
    return EXIT_OK


# grid axes that configure the HMMs; everything else goes to the decision maker
_MODEL_AXES = {"n_states", "topology", "transition_init", "emission_init", "covariance", "iterations", "model", "chains"}
_DECISION_AXES = {"decision", "penalty", "C", "criterion", "max_depth", "n_trees", "boundary"}


def _grid_config(base: SystemConfig, params: dict) -> SystemConfig:
    unknown = set(params) - _MODEL_AXES - _DECISION_AXES
    if unknown:
        raise UsageError(f"unknown grid axes: {', '.join(sorted(unknown))}")
    model = base.model.to_dict()
    for k in _MODEL_AXES & set(params):
        model[k] = params[k]
    if isinstance(model["topology"], str):
        model["topology"] = _parse_topology(model["topology"]).to_dict()
    if model["model"] == "hmm":
        model["chains"] = 1
    decision = dict(base.decision)
    if "decision" in params:
        decision = {"kind": params["decision"]}
    for k in (_DECISION_AXES - {"decision"}) & set(params):
        decision[k] = params[k]
    return SystemConfig(base.kind, ModelConfig.from_dict(model), decision)


def cmd_grid(args) -> int:
    dataset = _load_dataset(args.dataset)
    try:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    except OSError as exc:
        raise LoadError(f"cannot read grid {args.grid}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.grid}: invalid JSON ({exc})") from None
    axes = grid.get("axes", grid) if isinstance(grid, dict) else None
    if not isinstance(axes, dict) or not axes:
        raise ValidationError(f"{args.grid}: expected an object of axis name -> list of values")
    metric = grid.get("metric", "f1") if "axes" in grid else "f1"
    spec = _feature_spec(args)
    base = _system_config(args, args.system)
    for point in [dict(zip(axes, vals)) for vals in [[v[0] for v in axes.values()]]]:
        _grid_config(base, point)  # reject unknown axes before training anything
    folds = stratified_kfold(dataset.label_matrix(), args.k, args.seed)

    def scorer(params):
        config = _grid_config(base, params)
        cv = cross_validate(dataset, spec, config, args.k, args.seed, 1, folds=folds)
        s = cv.reported
        return getattr(s, metric), s.as_dict()

    results = grid_search(axes, scorer, args.threads)
    names = list(axes)
    header = ["rank", "index"] + names + ["score", "f1", "precision", "recall", "total_accuracy", "error"]
    rows = []
    for rank, r in enumerate(results, 1):
        m = r.metrics
        rows.append(
            [rank, r.index]
            + [json.dumps(r.params[n]) if not isinstance(r.params[n], str) else r.params[n] for n in names]
            + [r.score] + [m.get(k, float("nan")) for k in ("f1", "precision", "recall", "total_accuracy")]
            + [r.error or ""]
        )
    meta = _meta(
        "grid-search", args.seed,
        {"k": args.k, "metric": metric, "axes": axes, "features": spec.to_dict(), "base": base.to_dict()},
    )
    out = Path(args.out)
    write_table(out / "grid.csv", header, rows, meta)
    _write_text(out / "grid.txt", text_table(header, rows))
    from . import plotting

    labels = [", ".join(f"{n}={r.params[n]}" for n in names) for r in results]
    plotting.grid_scores(labels, [r.score for r in results], out / "grid.png", metric)
    print(f"{len(results)} combinations; best {labels[0]} {metric}={results[0].score:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import SynthConfig, generate

    combos = None
    text = args.classes
    if text.isdigit():
        n_combos = int(text)
    else:
        try:
            raw = json.loads(Path(text).read_text(encoding="utf-8")) if Path(text).is_file() else json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"--classes must be a count, a JSON list of label lists, or such a file ({exc})") from None
        if not isinstance(raw, list) or not all(isinstance(c, list) and c for c in raw):
            raise ValidationError("--classes JSON must be a list of non-empty label lists")
        combos = tuple(tuple(sorted(str(l) for l in c)) for c in raw)
        n_combos = len(combos)
    cfg = SynthConfig(
        n_labels=args.labels,
        n_combos=n_combos,
        combos=combos,
        sequences=args.sequences,
        length=args.length,
        dim=args.dim,
        states=args.states,
        separation=args.separation,
        noise=args.noise,
    )
    dataset, _ = generate(cfg, args.seed)
    path = ds_mod.write_manifest(dataset, args.out)
    print(f"wrote {len(dataset)} motions and {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_feature_args(p, default: str | None = None):
    p.add_argument("--features", required=default is None, default=default,
                   help="comma-separated feature names or a feature-spec JSON file")
    p.add_argument("--no-normalize", action="store_true", help="skip root normalization")
    p.add_argument("--no-smooth", action="store_true", help="skip moving-average smoothing")
    p.add_argument("--window", type=int, default=3, help="smoothing window (default 3)")
    p.add_argument("--no-scale", action="store_true", help="skip min-max scaling to [-1, 1]")


def _add_model_args(p):
    p.add_argument("--model", choices=("hmm", "fhmm"), default="hmm")
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--topology", default="left_to_right:1",
                   help="ergodic, left_to_right or left_to_right:<delta> (default left_to_right:1)")
    p.add_argument("--delta", type=int, default=None, help="maximum forward skip for left_to_right")
    p.add_argument("--chains", type=int, default=None, help="FHMM chain count (default 2)")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--transition-init", choices=("uniform", "randomized"), default="uniform")
    p.add_argument("--emission-init", choices=("kmeans", "random"), default="kmeans")
    p.add_argument("--covariance", choices=("diagonal", "full"), default="diagonal")
    p.add_argument("--seed", type=int, default=0)


def _add_decision_args(p):
    p.add_argument("--decision", choices=("logistic", "svm", "tree", "forest", "max", "threshold", "zero"),
                   default="logistic")
    p.add_argument("--penalty", choices=("l1", "l2"), default="l1")
    p.add_argument("--C", type=float, default=1e-3)
    p.add_argument("--criterion", choices=("gini", "info_gain"), default="info_gain")
    p.add_argument("--max-depth", type=int, default=15)
    p.add_argument("--n-trees", type=int, default=40)
    p.add_argument("--boundary", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionhmm", description="HMM-based multi-label motion recognition")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $MOTIONHMM_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="validate, report on or export a dataset")
    p.add_argument("action", choices=("validate", "report", "export"))
    p.add_argument("path", help="manifest or exported archive")
    p.add_argument("--out", help="output directory (report) or archive path (export)")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a recognizer and write a bundle")
    p.add_argument("system", choices=("powerset", "multilabel"))
    p.add_argument("--dataset", required=True)
    _add_feature_args(p)
    _add_model_args(p)
    _add_decision_args(p)
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify one motion file")
    p.add_argument("--bundle", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--json", action="store_true", help="print labels and per-model log-likelihoods as JSON")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="cross-validated evaluation")
    p.add_argument("mode", choices=("kfold",))
    p.add_argument("--system", choices=("powerset", "multilabel"), default="multilabel")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=3)
    _add_feature_args(p)
    _add_model_args(p)
    _add_decision_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select-features", help="backward elimination feature selection")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--min-features", type=int, default=1)
    _add_feature_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("grid-search", help="evaluate a hyperparameter grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", required=True, help='JSON file: {"axes": {name: [values]}, "metric": "f1"}')
    p.add_argument("--system", choices=("powerset", "multilabel"), default="multilabel")
    p.add_argument("--k", type=int, default=3)
    _add_feature_args(p)
    _add_model_args(p)
    _add_decision_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="generate a synthetic dataset from known HMMs")
    p.add_argument("--classes", required=True,
                   help="number of label combinations, or a JSON list of label lists (inline or file)")
    p.add_argument("--labels", type=int, default=6, help="label count when --classes is a number")
    p.add_argument("--sequences", type=int, default=20)
    p.add_argument("--length", type=int, default=80)
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads is None:
            args.threads = default_threads()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"motionhmm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LoadError as exc:
        print(f"motionhmm: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, DatasetError, ValueError, KeyError) as exc:
        print(f"motionhmm: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SystemTrainingError, OSError, RuntimeError) as exc:
        print(f"motionhmm: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
