"""Feature extraction: raw motion channels to observation matrices.

Processing order is fixed: normalize (translation/yaw of the first frame),
derive (velocities, accelerations, norms), smooth, scale.

Raw channels consumed from a :class:`~motionhmm.dataset.MotionRecord`:

==================  =====  ==============================================
channel             width  content
==================  =====  ==============================================
``root_pos``        3      root position (m), world frame
``root_rot``        3      roll, pitch, yaw of the root (rad)
``joint_pos``       J      joint angles (rad)
``extremities_pos`` 12     left/right hand and foot positions (m)
``com_pos``         3      optional; otherwise computed from segments
``marker_pos``      3N     marker positions (m)
``segment:<name>``  19     see :mod:`motionhmm.dataset`
==================  =====  ==============================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import MotionRecord, SegmentTrack, ValidationError


class FeatureError(ValidationError):
    """A requested feature cannot be computed from the available channels."""


# name -> (dimension in the reference skeleton, description)
CATALOG: dict[str, tuple[int, str]] = {
    "joint_pos": (40, "angles of all 40 joints"),
    "joint_vel": (40, "velocities of each joint"),
    "joint_vel_norm": (1, "Euclidean norm of the joint velocities"),
    "joint_acc": (40, "acceleration of each joint"),
    "joint_acc_norm": (1, "combined Euclidean norm of the joint accelerations"),
    "root_pos": (3, "root position of the subject in Cartesian space"),
    "root_vel": (3, "directed root velocity"),
    "root_vel_norm": (1, "Euclidean norm of the root velocity"),
    "root_acc": (3, "directed root acceleration"),
    "root_acc_norm": (1, "Euclidean norm of the directed root acceleration"),
    "root_rot": (3, "roll, pitch and yaw angles of the subject's root"),
    "root_rot_norm": (1, "Euclidean norm of the root rotation"),
    "extremities_pos": (12, "position of the hands and feet in Cartesian space"),
    "extremities_vel": (12, "directed velocities of the hands and feet"),
    "extremities_vel_norm": (4, "Euclidean norm of the extremity velocities per hand/foot"),
    "extremities_acc": (12, "directed accelerations of the hands and feet"),
    "extremities_acc_norm": (4, "Euclidean norm of the extremity accelerations per hand/foot"),
    "com_pos": (3, "position of the center of mass in Cartesian space"),
    "com_vel": (3, "directed velocity of the center of mass"),
    "com_vel_norm": (1, "Euclidean norm of the CoM's velocity"),
    "com_acc": (3, "directed acceleration of the center of mass"),
    "com_acc_norm": (1, "Euclidean norm of the CoM's acceleration"),
    "angular_momentum": (3, "whole-body angular momentum in x, y and z direction"),
    "angular_momentum_norm": (1, "Euclidean norm of the whole-body angular momentum"),
    "marker_pos": (168, "position of all 56 markers in Cartesian space"),
    "marker_vel": (168, "directed velocities of all markers"),
    "marker_vel_norm": (1, "Euclidean norm of all markers' velocities"),
    "marker_acc": (168, "directed acceleration of all markers"),
    "marker_acc_norm": (1, "Euclidean norm of all markers' accelerations"),
}

# base stream, derivative order, norm grouping ("all", 3 or None)
_DERIVED: dict[str, tuple[str, int, object]] = {}
for _base in ("joint", "root", "extremities", "com", "marker"):
    _group = 3 if _base == "extremities" else "all"
    _DERIVED[f"{_base}_pos"] = (_base, 0, None)
    _DERIVED[f"{_base}_vel"] = (_base, 1, None)
    _DERIVED[f"{_base}_vel_norm"] = (_base, 1, _group)
    _DERIVED[f"{_base}_acc"] = (_base, 2, None)
    _DERIVED[f"{_base}_acc_norm"] = (_base, 2, _group)
_DERIVED["root_rot"] = ("root_rot", 0, None)
_DERIVED["root_rot_norm"] = ("root_rot", 0, "all")
_DERIVED["angular_momentum"] = ("angular_momentum", 0, None)
_DERIVED["angular_momentum_norm"] = ("angular_momentum", 0, "all")
assert set(_DERIVED) == set(CATALOG)


@dataclass(frozen=True)
class FeatureSpec:
    features: tuple[str, ...]
    normalized: bool = True
    smoothed: bool = True
    window: int = 3
    scaled: bool = True

    def __post_init__(self):
        feats = tuple(self.features)
        object.__setattr__(self, "features", feats)
        if not feats:
            raise ValidationError("feature spec selects no features")
        unknown = [f for f in feats if f not in CATALOG]
        if unknown:
            raise ValidationError(f"unknown features: {', '.join(unknown)}")
        if len(set(feats)) != len(feats):
            raise ValidationError("duplicate features in spec")
        if int(self.window) < 1:
            raise ValidationError("smoothing window must be >= 1")

    def with_features(self, features: Sequence[str]) -> "FeatureSpec":
        return FeatureSpec(tuple(features), self.normalized, self.smoothed, self.window, self.scaled)

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "normalized": self.normalized,
            "smoothed": self.smoothed,
            "window": self.window,
            "scaled": self.scaled,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSpec":
        try:
            return cls(
                tuple(d["features"]),
                bool(d.get("normalized", True)),
                bool(d.get("smoothed", True)),
                int(d.get("window", 3)),
                bool(d.get("scaled", True)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"invalid feature spec: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FeatureSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    data: np.ndarray
    dt: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ValidationError("observation sequence must be T x D with T >= 2")
        if not np.all(np.isfinite(data)):
            raise ValidationError("observation sequence contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class ScalerParams:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=float)
        maxs = np.asarray(self.maxs, dtype=float)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ValidationError("scaler bounds must be equal-length vectors")
        if np.any(mins > maxs):
            raise ValidationError("scaler min exceeds max")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def degenerate(self) -> np.ndarray:
        return self.mins == self.maxs

    def to_list(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.mins, self.maxs)]

    @classmethod
    def from_list(cls, pairs: Sequence[Sequence[float]]) -> "ScalerParams":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])


# ---------------------------------------------------------------------------
# primitives


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X (yaw, pitch, roll) rotation matrix, ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    ca, sa = np.cos(yaw), np.sin(yaw)
    cb, sb = np.cos(pitch), np.sin(pitch)
    cg, sg = np.cos(roll), np.sin(roll)
    return np.array([
        [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
        [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
        [-sb, cb * sg, cb * cg],
    ])


def unwrap_angles(series: np.ndarray) -> np.ndarray:
    """Remove 2*pi jumps so successive differences stay within [-pi, pi]."""
    series = np.asarray(series, dtype=float)
    return np.unwrap(series, axis=0)


def normalize_root(positions: np.ndarray, rotations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Express a root trajectory relative to its first pose.

    Positions are translated so frame 0 is the origin and rotated by the
    inverse of the frame-0 yaw rotation (roll and pitch of the reference are
    taken as zero). Rotations are unwrapped and the frame-0 angles
    subtracted.
    """
    positions = np.asarray(positions, dtype=float)
    rot = unwrap_angles(rotations)
    R = rotation_matrix(0.0, 0.0, rot[0, 2])
    pos = (positions - positions[0]) @ R  # row-vector form of R^T @ p
    return pos, rot - rot[0]


def derivative(series: np.ndarray, dt: float) -> np.ndarray:
    """Central differences inside, one-sided differences at both ends."""
    x = np.asarray(series, dtype=float)
    if x.shape[0] < 2:
        raise ValidationError("derivative needs at least 2 frames")
    out = np.empty_like(x)
    out[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    out[0] = (x[1] - x[0]) / dt
    out[-1] = (x[-1] - x[-2]) / dt
    return out


def euclidean_norm_feature(series: np.ndarray, group_width: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    T, D = x.shape
    if group_width <= 0 or D % group_width:
        raise ValidationError(f"width {D} is not divisible by group width {group_width}")
    return np.linalg.norm(x.reshape(T, D // group_width, group_width), axis=2)


def center_of_mass(segments: Mapping[str, SegmentTrack] | Sequence[SegmentTrack]) -> np.ndarray:
    segs = list(segments.values()) if isinstance(segments, Mapping) else list(segments)
    if not segs:
        raise FeatureError("center of mass needs segment data")
    mass = np.stack([s.mass for s in segs])  # (S, T)
    total = mass.sum(axis=0)
    if np.any(total <= 0):
        raise FeatureError("total segment mass must be positive")
    com = np.stack([s.com for s in segs])  # (S, T, 3)
    return (mass[..., None] * com).sum(axis=0) / total[:, None]


def _com_velocity(segs: Sequence[SegmentTrack]) -> np.ndarray:
    mass = np.stack([s.mass for s in segs])
    vel = np.stack([s.com_vel for s in segs])
    return (mass[..., None] * vel).sum(axis=0) / mass.sum(axis=0)[:, None]


def angular_momentum(
    segments: Mapping[str, SegmentTrack] | Sequence[SegmentTrack],
    com: np.ndarray,
    com_vel: np.ndarray,
) -> np.ndarray:
    """Whole-body angular momentum about the centre of mass, per frame."""
    segs = list(segments.values()) if isinstance(segments, Mapping) else list(segments)
    if not segs:
        raise FeatureError("angular momentum needs segment data")
    L = np.zeros_like(np.asarray(com, dtype=float))
    for s in segs:
        r = s.com - com
        v = s.com_vel - com_vel
        L += s.mass[:, None] * np.cross(r, v)
        L += np.einsum("tij,tj->ti", s.inertia, s.ang_vel)
    return L


def smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average over ``t - window//2 .. t + window//2``.

    Odd windows average ``window`` points, even windows ``window + 1``;
    near the ends the window is clipped and the mean uses the points that
    exist.
    """
    if window < 1:
        raise ValidationError("smoothing window must be >= 1")
    x = np.asarray(series, dtype=float)
    h = window // 2
    if h == 0:
        return x.copy()
    T = x.shape[0]
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    t = np.arange(T)
    lo = np.clip(t - h, 0, T)
    hi = np.clip(t + h + 1, 0, T)
    count = (hi - lo).reshape((T,) + (1,) * (x.ndim - 1))
    return (csum[hi] - csum[lo]) / count


def fit_scaler(training: Sequence[ObservationSequence | np.ndarray]) -> ScalerParams:
    mats = [np.asarray(s, dtype=float) for s in training]
    if not mats:
        raise ValidationError("scaler needs at least one training sequence")
    stacked = np.vstack(mats)
    return ScalerParams(stacked.min(axis=0), stacked.max(axis=0))


def apply_scaler(series: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Map training ``[min, max]`` onto ``[-1, 1]``; constant features map to 0."""
    x = np.asarray(series, dtype=float)
    if x.shape[-1] != params.mins.shape[0]:
        raise ValidationError(f"scaler expects {params.mins.shape[0]} features, got {x.shape[-1]}")
    span = params.maxs - params.mins
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (x - params.mins) / safe - 1.0
    return np.where(span > 0, out, 0.0)


# ---------------------------------------------------------------------------
# catalog evaluation


def _require(record: MotionRecord, name: str, feature: str) -> np.ndarray:
    if not record.has_channel(name):
        raise FeatureError(f"{record.id}: feature {feature!r} needs channel {name!r}")
    return record.channel(name)


class _Extractor:
    """Per-record cache of base streams so shared inputs are computed once."""

    def __init__(self, record: MotionRecord, normalized: bool):
        self.record = record
        self.normalized = normalized
        self.cache: dict[tuple[str, int], np.ndarray] = {}

    def _frame0_rotation(self, feature: str) -> tuple[np.ndarray, np.ndarray]:
        root = _require(self.record, "root_pos", feature)
        rot = unwrap_angles(_require(self.record, "root_rot", feature))
        return root[0], rotation_matrix(0.0, 0.0, rot[0, 2])

    def _spatial(self, points: np.ndarray, feature: str) -> np.ndarray:
        if not self.normalized:
            return points.copy()
        origin, R = self._frame0_rotation(feature)
        T, D = points.shape
        p = points.reshape(T, D // 3, 3) - origin
        return (p @ R).reshape(T, D)

    def _segments(self, feature: str) -> dict[str, SegmentTrack]:
        segs = self.record.segments
        if not segs:
            raise FeatureError(f"{self.record.id}: feature {feature!r} needs segment channels")
        return segs

    def base(self, stream: str, feature: str) -> np.ndarray:
        rec = self.record
        if stream == "joint":
            return _require(rec, "joint_pos", feature).copy()
        if stream == "root":
            return self._spatial(_require(rec, "root_pos", feature), feature)
        if stream == "root_rot":
            rot = unwrap_angles(_require(rec, "root_rot", feature))
            return rot - rot[0] if self.normalized else rot
        if stream == "extremities":
            return self._spatial(_require(rec, "extremities_pos", feature), feature)
        if stream == "marker":
            return self._spatial(_require(rec, "marker_pos", feature), feature)
        if stream == "com":
            if rec.has_channel("com_pos"):
                com = rec.channel("com_pos")
            else:
                com = center_of_mass(self._segments(feature))
            return self._spatial(com, feature)
        if stream == "angular_momentum":
            segs = list(self._segments(feature).values())
            com = center_of_mass(segs)
            L = angular_momentum(segs, com, _com_velocity(segs))
            if self.normalized:
                _, R = self._frame0_rotation(feature)
                L = L @ R
            return L
        raise KeyError(stream)

    def stream(self, stream: str, order: int, feature: str) -> np.ndarray:
        key = (stream, order)
        if key not in self.cache:
            if order == 0:
                self.cache[key] = self.base(stream, feature)
            else:
                self.cache[key] = derivative(self.stream(stream, order - 1, feature), self.record.dt)
        return self.cache[key]

    def feature(self, name: str) -> np.ndarray:
        stream, order, group = _DERIVED[name]
        x = self.stream(stream, order, name)
        if group == "all":
            return np.linalg.norm(x, axis=1, keepdims=True)
        if group is not None:
            return euclidean_norm_feature(x, group)
        return x


def feature_dimension(name: str, record: MotionRecord | None = None) -> int:
    """Width of a feature: the reference-skeleton width, or the actual width for ``record``."""
    if name not in CATALOG:
        raise ValidationError(f"unknown feature {name!r}")
    if record is None:
        return CATALOG[name][0]
    return _Extractor(record, normalized=False).feature(name).shape[1]


def extract(record: MotionRecord, spec: FeatureSpec) -> np.ndarray:
    """Normalized/derived/smoothed features, unscaled, as a T x D matrix."""
    ex = _Extractor(record, spec.normalized)
    cols = [ex.feature(name) for name in spec.features]
    data = np.hstack(cols)
    if spec.smoothed:
        data = smooth(data, spec.window)
    return data


def build_observation(
    record: MotionRecord, spec: FeatureSpec, scaler: ScalerParams | None = None
) -> ObservationSequence:
    data = extract(record, spec)
    if scaler is not None:
        data = apply_scaler(data, scaler)
    return ObservationSequence(data, record.dt)


def build_observations(
    records: Sequence[MotionRecord], spec: FeatureSpec, scaler: ScalerParams | None = None
) -> list[ObservationSequence]:
    return [build_observation(r, spec, scaler) for r in records]


def prepare(
    train_records: Sequence[MotionRecord],
    spec: FeatureSpec,
) -> tuple[list[ObservationSequence], ScalerParams | None]:
    """Build training observations, fitting a scaler on them when the spec asks for scaling."""
    raw = build_observations(train_records, spec)
    if not spec.scaled:
        return raw, None
    scaler = fit_scaler(raw)
    return [ObservationSequence(apply_scaler(o.data, scaler), o.dt) for o in raw], scaler
