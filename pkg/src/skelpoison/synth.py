"""Synthetic skeleton sequences for desk-scale experiments.

Each sequence starts from a fixed 25-joint template (metres, y up, facing +z,
left side at +x), animates a handful of joints with smooth per-class
sinusoids plus a little angular jitter, then applies a random heading and
position. Every motion is a rotation of a joint's subtree about that joint, so
bone lengths are exactly those of the template.
"""
from __future__ import annotations

import numpy as np

from .kinematics import _axis_angle, _rotmat
from .skeleton import Dataset, SkeletonSequence, default_topology

FPS = 30.0

TEMPLATE = np.array(
    [
        [0.00, 0.95, 0.00],   # 1 spine base
        [0.00, 1.22, -0.01],  # 2 spine mid
        [0.00, 1.53, -0.01],  # 3 neck
        [0.00, 1.68, 0.00],   # 4 head
        [0.18, 1.42, -0.02],  # 5 shoulder L
        [0.21, 1.15, -0.04],  # 6 elbow L
        [0.22, 0.94, 0.09],   # 7 wrist L
        [0.22, 0.87, 0.12],   # 8 hand L
        [-0.18, 1.42, -0.02],  # 9 shoulder R
        [-0.21, 1.15, -0.04],  # 10 elbow R
        [-0.22, 0.94, 0.09],   # 11 wrist R
        [-0.22, 0.87, 0.12],   # 12 hand R
        [0.09, 0.93, 0.00],   # 13 hip L
        [0.10, 0.52, 0.02],   # 14 knee L
        [0.10, 0.10, 0.00],   # 15 ankle L
        [0.10, 0.04, 0.10],   # 16 foot L
        [-0.09, 0.93, 0.00],  # 17 hip R
        [-0.10, 0.52, 0.02],  # 18 knee R
        [-0.10, 0.10, 0.00],  # 19 ankle R
        [-0.10, 0.04, 0.10],  # 20 foot R
        [0.00, 1.45, -0.02],  # 21 spine shoulder
        [0.22, 0.80, 0.15],   # 22 hand tip L
        [0.19, 0.88, 0.15],   # 23 thumb L
        [-0.22, 0.80, 0.15],  # 24 hand tip R
        [-0.19, 0.88, 0.15],  # 25 thumb R
    ]
)

_X = np.array([1.0, 0.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])
_Y = np.array([0.0, 1.0, 0.0])

# (joint, axis) pairs that can be animated; a class picks a few of them.
CHANNELS = [
    (5, _X), (5, _Z), (6, _X),
    (9, _X), (9, _Z), (10, _X),
    (13, _X), (14, _X), (17, _X), (18, _X),
    (2, _X), (3, _X),
]


def class_table(classes: int, seed: int) -> list[list[tuple[int, float, float]]]:
    """Per class: list of (channel index, amplitude rad, frequency Hz)."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    table = []
    for _ in range(classes):
        k = int(rng.integers(2, 5, endpoint=True))
        picks = rng.choice(len(CHANNELS), size=k, replace=False)
        table.append([(int(c), float(rng.uniform(0.15, 0.7)), float(rng.uniform(0.3, 1.2))) for c in sorted(picks)])
    return table


def _rotate_subtree(pos, joint, axis, angle, desc):
    """Rotate the descendants of ``joint`` about it, per frame."""
    m = _rotmat(_axis_angle(np.broadcast_to(axis, angle.shape + (3,)), angle))
    centre = pos[:, joint - 1, None]
    idx = np.asarray(desc) - 1
    pos[:, idx] = centre + np.einsum("tab,tjb->tja", m, pos[:, idx] - centre)


def synth_sequence(label: int, frames: int, motion, rng: np.random.Generator) -> SkeletonSequence:
    topo = default_topology()
    t = np.arange(frames) / FPS
    pos = np.repeat(TEMPLATE[None], frames, axis=0).copy()
    for ch, amp, freq in motion:
        joint, axis = CHANNELS[ch]
        phase = rng.uniform(0, 2 * np.pi)
        jitter = np.cumsum(rng.normal(0.0, 0.004, frames))
        angle = amp * rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * freq * t + phase) + jitter
        _rotate_subtree(pos, joint, axis, angle, topo.descendants(joint))
    heading = rng.uniform(-0.6, 0.6)
    m = _rotmat(_axis_angle(_Y, np.array(heading)))
    offset = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.05, 0.05), 3.0 + rng.uniform(-0.5, 0.5)])
    pos = np.einsum("ab,tjb->tja", m, pos) + offset
    if label % 2 == 1:
        # walking-style classes drift forward
        fwd = m @ _Z
        pos = pos + (0.3 * t)[:, None, None] * fwd
    return SkeletonSequence(pos, label, {"source": "synth"})


def synth_dataset(n: int, frames: int, classes: int, seed: int) -> Dataset:
    """``n`` labelled sequences, class ``i % classes`` for the i-th; deterministic in ``seed``."""
    if n < 1:
        raise ValueError("need at least one sequence")
    if classes < 1:
        raise ValueError("need at least one class")
    if frames < 1:
        raise ValueError("need at least one frame")
    table = class_table(classes, seed)
    seqs = []
    for i in range(n):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, i])
        label = i % classes
        seqs.append(synth_sequence(label, frames, table[label], rng))
    return Dataset.from_sequences(seqs)
