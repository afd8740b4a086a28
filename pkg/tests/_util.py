"""Shared builders for test records and datasets."""

from __future__ import annotations

import numpy as np

from motionhmm.dataset import Dataset, LabelVocabulary, MotionRecord

SEG_W = 19


def segment_block(rng: np.random.Generator, T: int) -> np.ndarray:
    """Random but physically valid segment channel (positive mass, symmetric inertia)."""
    mass = rng.uniform(0.5, 5.0, size=(T, 1))
    com = rng.normal(size=(T, 3))
    vel = rng.normal(size=(T, 3))
    B = rng.normal(size=(T, 3, 3))
    inertia = (B @ np.swapaxes(B, 1, 2)).reshape(T, 9)
    omega = rng.normal(size=(T, 3))
    return np.hstack([mass, com, vel, inertia, omega])


def full_record(seed: int = 0, T: int = 12, n_segments: int = 2, rid: str = "m0") -> MotionRecord:
    """Record carrying every channel family the feature catalog can use."""
    rng = np.random.default_rng(seed)
    channels = [
        ("root_pos", 3),
        ("root_rot", 3),
        ("joint_pos", 4),
        ("extremities_pos", 12),
        ("marker_pos", 6),
    ]
    blocks = [
        np.cumsum(rng.normal(size=(T, 3)), axis=0),
        rng.uniform(-0.3, 0.3, size=(T, 3)) + np.array([0.0, 0.0, rng.uniform(-3, 3)]),
        rng.normal(size=(T, 4)),
        rng.normal(size=(T, 12)),
        rng.normal(size=(T, 6)),
    ]
    for s in range(n_segments):
        channels.append((f"segment:s{s}", SEG_W))
        blocks.append(segment_block(rng, T))
    return MotionRecord(rid, 100.0, tuple(channels), np.hstack(blocks))


def simple_record(rid: str, data: np.ndarray, channel: str = "joint_pos", rate: float = 100.0) -> MotionRecord:
    data = np.asarray(data, dtype=float)
    return MotionRecord(rid, rate, ((channel, data.shape[1]),), data)


def toy_dataset(Y, T: int = 5, D: int = 2, seed: int = 0, labels=None) -> Dataset:
    Y = np.asarray(Y, dtype=np.int8)
    labels = labels or tuple(f"l{j}" for j in range(Y.shape[1]))
    rng = np.random.default_rng(seed)
    samples = tuple(
        (simple_record(f"r{i:03d}", rng.normal(size=(T, D))), Y[i]) for i in range(len(Y))
    )
    return Dataset(LabelVocabulary(tuple(labels)), samples)


def rotz(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rigid_transform(record: MotionRecord, phi: float, shift: np.ndarray) -> MotionRecord:
    """Apply a world yaw rotation ``phi`` and translation ``shift`` to every spatial channel."""
    R = rotz(phi)
    out = []
    for name, _ in record.channels:
        x = record.channel(name).copy()
        T = x.shape[0]
        if name in ("root_pos", "extremities_pos", "marker_pos", "com_pos"):
            x = (x.reshape(T, -1, 3) @ R.T + shift).reshape(T, -1)
        elif name == "root_rot":
            x[:, 2] += phi
        elif name.startswith("segment:"):
            x[:, 1:4] = x[:, 1:4] @ R.T + shift
            x[:, 4:7] = x[:, 4:7] @ R.T
            inertia = x[:, 7:16].reshape(T, 3, 3)
            x[:, 7:16] = (R @ inertia @ R.T).reshape(T, 9)
            x[:, 16:19] = x[:, 16:19] @ R.T
        out.append(x)
    return MotionRecord(record.id, record.sample_rate_hz, record.channels, np.hstack(out))
