"""Skeleton data model: the 25-joint body topology, sequences and datasets.

Joint ids are 1-based everywhere in the public API, matching the usual NTU RGB+D
numbering. Arrays are indexed 0-based, so ``positions[..., j - 1, :]`` is joint
``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import NotOnChainError, RootHasNoBoneError

JOINT_COUNT = 25
ROOT = 1

# Parent of each joint (1-based), standard NTU RGB+D / Kinect v2 hierarchy.
# Hand tips and thumbs (22-25) hang off the hand joints (8, 12).
NTU_PARENTS: dict[int, int | None] = {
    1: None,
    2: 1,
    21: 2,
    3: 21,
    4: 3,
    5: 21,
    6: 5,
    7: 6,
    8: 7,
    9: 21,
    10: 9,
    11: 10,
    12: 11,
    13: 1,
    14: 13,
    15: 14,
    16: 15,
    17: 1,
    18: 17,
    19: 18,
    20: 19,
    22: 8,
    23: 8,
    24: 12,
    25: 12,
}

NTU_NAMES: dict[int, str] = {
    1: "spine_base",
    2: "spine_mid",
    3: "neck",
    4: "head",
    5: "shoulder_left",
    6: "elbow_left",
    7: "wrist_left",
    8: "hand_left",
    9: "shoulder_right",
    10: "elbow_right",
    11: "wrist_right",
    12: "hand_right",
    13: "hip_left",
    14: "knee_left",
    15: "ankle_left",
    16: "foot_left",
    17: "hip_right",
    18: "knee_right",
    19: "ankle_right",
    20: "foot_right",
    21: "spine_shoulder",
    22: "handtip_left",
    23: "thumb_left",
    24: "handtip_right",
    25: "thumb_right",
}


@dataclass(frozen=True)
class SkeletonTopology:
    """Parent map of a tree-shaped skeleton with a single root."""

    joint_count: int
    parent: Mapping[int, int | None]
    names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = set(self.parent)
        if ids != set(range(1, self.joint_count + 1)):
            raise ValueError("parent map must cover joints 1..joint_count")
        roots = [j for j, p in self.parent.items() if p is None]
        if roots != [ROOT]:
            raise ValueError(f"topology must have exactly one root (joint {ROOT}), got {roots}")
        for j in ids:
            seen = 0
            k = j
            while self.parent[k] is not None:
                k = self.parent[k]
                if k not in ids:
                    raise ValueError(f"joint {j} has unknown ancestor {k}")
                seen += 1
                if seen >= self.joint_count:
                    raise ValueError(f"parent relation is cyclic at joint {j}")

    @cached_property
    def parent_index(self) -> np.ndarray:
        """0-based parent array, -1 for the root."""
        out = np.full(self.joint_count, -1, dtype=np.intp)
        for j, p in self.parent.items():
            if p is not None:
                out[j - 1] = p - 1
        return out

    @cached_property
    def children(self) -> dict[int, tuple[int, ...]]:
        kids: dict[int, list[int]] = {j: [] for j in self.parent}
        for j, p in sorted(self.parent.items()):
            if p is not None:
                kids[p].append(j)
        return {j: tuple(v) for j, v in kids.items()}

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Joints in breadth-first order from the root; parents precede children."""
        out = [ROOT]
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return tuple(out)

    @cached_property
    def bones(self) -> tuple[tuple[int, int], ...]:
        """(parent, child) pairs in parent-first order."""
        return tuple((self.parent[j], j) for j in self.order if self.parent[j] is not None)

    def descendants(self, joint: int) -> list[int]:
        """All joints strictly below ``joint``, parent-first."""
        out = list(self.children[joint])
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return out

    def is_ancestor(self, anc: int, joint: int) -> bool:
        k = self.parent[joint]
        while k is not None:
            if k == anc:
                return True
            k = self.parent[k]
        return False


def default_topology() -> SkeletonTopology:
    """The 25-joint Kinect v2 body model used by NTU RGB+D."""
    return SkeletonTopology(JOINT_COUNT, dict(NTU_PARENTS), dict(NTU_NAMES))


def chain(topology: SkeletonTopology, root: int, key: int) -> list[int]:
    """Joints from ``root`` down to ``key`` following parent links, root first."""
    _check_joint(topology, root)
    _check_joint(topology, key)
    path = [key]
    while path[-1] != root:
        p = topology.parent[path[-1]]
        if p is None:
            raise NotOnChainError(f"joint {key} is not a descendant of joint {root}")
        path.append(p)
    return path[::-1]


def _check_joint(topology: SkeletonTopology, joint: int) -> None:
    if not 1 <= joint <= topology.joint_count:
        raise ValueError(f"joint id {joint} outside 1..{topology.joint_count}")


def bone_vector(frame: np.ndarray, topology: SkeletonTopology, child: int) -> np.ndarray:
    """``p_child - p_parent`` for a single (J, 3) frame."""
    _check_joint(topology, child)
    parent = topology.parent[child]
    if parent is None:
        raise RootHasNoBoneError(f"joint {child} is the root and has no bone")
    return np.asarray(frame[child - 1], dtype=float) - np.asarray(frame[parent - 1], dtype=float)


def bone_lengths(positions: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Bone lengths for every non-root joint, shape (..., J - 1), ordered by ``topology.bones``."""
    pidx = np.array([p - 1 for p, _ in topology.bones])
    cidx = np.array([c - 1 for _, c in topology.bones])
    return np.linalg.norm(positions[..., cidx, :] - positions[..., pidx, :], axis=-1)


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """T frames of J joints in metres, with a class label.

    ``positions`` is stored as a read-only float64 array of shape (T, J, 3);
    a frame is simply ``positions[t]``.
    """

    positions: np.ndarray
    label: int
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[-1] != 3:
            raise ValueError(f"positions must have shape (T, J, 3), got {pos.shape}")
        if pos.shape[0] < 1:
            raise ValueError("a sequence needs at least one frame")
        if int(self.label) != self.label:
            raise ValueError(f"label must be an integer, got {self.label!r}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def frame_count(self) -> int:
        return self.positions.shape[0]

    @property
    def joint_count(self) -> int:
        return self.positions.shape[1]

    @property
    def frames(self) -> list[np.ndarray]:
        return list(self.positions)

    def with_positions(self, positions: np.ndarray) -> SkeletonSequence:
        return SkeletonSequence(positions, self.label, self.meta)

    def with_label(self, label: int) -> SkeletonSequence:
        return SkeletonSequence(self.positions, label, self.meta)

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.label == other.label
            and dict(self.meta) == dict(other.meta)
            and self.positions.shape == other.positions.shape
            and np.array_equal(self.positions, other.positions, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    label: int
    poisoned: bool = False
    trigger: str | None = None

    def __post_init__(self):
        if self.poisoned != (self.trigger is not None):
            raise ValueError(f"record {self.id}: poisoned flag must be set iff a trigger is named")


class LazySequences(Sequence):
    """Read-only sequence list whose items are produced on first access and cached.

    ``load(i)`` must return a sequence whose label matches manifest record ``i``.
    """

    def __init__(self, count: int, load: Callable[[int], SkeletonSequence]):
        self._load = load
        self._items: list[SkeletonSequence | None] = [None] * count

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        seq = self._items[i]
        if seq is None:
            seq = self._items[i] = self._load(range(len(self))[i])
        return seq

    def with_changes(self, changes: Mapping[int, SkeletonSequence]) -> LazySequences:
        """A view that returns ``changes[i]`` where given and defers to ``self`` elsewhere."""
        changes = dict(changes)
        return LazySequences(len(self), lambda i: changes[i] if i in changes else self[i])


@dataclass(frozen=True)
class Dataset:
    """Sequences plus one manifest record per sequence (same order).

    ``sequences`` may be a :class:`LazySequences`, in which case files are only
    read when a sequence is touched and label agreement is checked by the loader.
    """

    sequences: Sequence[SkeletonSequence]
    manifest: tuple[ManifestRecord, ...]

    def __post_init__(self):
        if not isinstance(self.sequences, LazySequences):
            object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "manifest", tuple(self.manifest))
        if len(self.sequences) != len(self.manifest):
            raise ValueError("manifest length must equal sequence count")
        if isinstance(self.sequences, LazySequences):
            return
        for seq, rec in zip(self.sequences, self.manifest):
            if seq.label != rec.label:
                raise ValueError(f"record {rec.id}: manifest label {rec.label} != sequence label {seq.label}")

    @property
    def is_lazy(self) -> bool:
        return isinstance(self.sequences, LazySequences)

    def with_changes(self, changes: Mapping[int, SkeletonSequence], manifest: Iterable[ManifestRecord]) -> Dataset:
        """Replace the sequences at the given indices without loading any others."""
        if self.is_lazy:
            return Dataset(self.sequences.with_changes(changes), manifest)
        seqs = list(self.sequences)
        for i, s in changes.items():
            seqs[i] = s
        return Dataset(seqs, manifest)

    @classmethod
    def from_sequences(cls, sequences: Iterable[SkeletonSequence], prefix: str = "seq") -> Dataset:
        seqs = tuple(sequences)
        width = max(6, len(str(len(seqs))))
        manifest = []
        for i, s in enumerate(seqs):
            sid = f"{prefix}{i:0{width}d}"
            manifest.append(ManifestRecord(sid, f"{sid}.skseq", s.label))
        return cls(seqs, tuple(manifest))

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def labels(self) -> list[int]:
        return [r.label for r in self.manifest]


def validate_sequence(seq: SkeletonSequence, topology: SkeletonTopology | None = None) -> list[str]:
    """Structural problems in ``seq``; an empty list means the sequence is valid."""
    topology = topology or default_topology()
    findings = []
    pos = seq.positions
    if pos.shape[1] != topology.joint_count:
        findings.append(
            f"joint-count mismatch: sequence has {pos.shape[1]} joints, topology has {topology.joint_count}"
        )
        return findings
    if seq.frame_count < 1:
        findings.append("frame-count mismatch: sequence has no frames")
    if seq.label < 0:
        findings.append(f"negative label {seq.label}")
    bad = np.argwhere(~np.isfinite(pos))
    for t, j, c in bad:
        findings.append(f"non-finite coordinate: frame {t} joint {j + 1} axis {'xyz'[c]}")
    lengths = bone_lengths(pos, topology)
    for t, b in np.argwhere(lengths == 0.0):
        parent, child = topology.bones[b]
        findings.append(f"zero-length bone: frame {t} joint {child} (parent {parent})")
    return findings
