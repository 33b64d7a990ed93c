"""Physical trigger actions and their injection into skeleton sequences.

Each action moves one or two kinematic chains (root joint fixed, key joint
driven to a target) and drags the joints hanging below the key joint along
rigidly. Per frame inside the trigger window the chain angles for the start
and end key positions are solved by IK and blended with a go-and-return
profile: 0 at the window start, 1 at the apex frame, back to 0 at the end.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateBoneError, SequenceTooShortError, SkelPoisonError
from .ik import IkConfig, solve_ik_batch
from .kinematics import _axis_angle, _rotmat, apply_chain, bone_axes
from .skeleton import SkeletonSequence, SkeletonTopology, chain, default_topology

log = logging.getLogger(__name__)

WORLD_UP = np.array([0.0, 1.0, 0.0])
SPINE_SHOULDER = 21
SHOULDER_LEFT = 5
SHOULDER_RIGHT = 9
HAND_GAP = 0.05
U64_MASK = (1 << 64) - 1


class UnknownTriggerError(SkelPoisonError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else "unknown trigger"


@dataclass(frozen=True)
class TriggerChain:
    root: int
    key: int
    ik_joints: tuple[int, ...]
    distant: tuple[int, ...] = ()


@dataclass(frozen=True)
class TriggerActionSpec:
    name: str
    chains: tuple[TriggerChain, ...]
    phi_range: tuple[float, float]
    duration_range: tuple[int, int]
    apex_fraction: float = 0.5

    def __post_init__(self):
        if self.name not in _KINDS:
            raise UnknownTriggerError(f"unknown trigger {self.name!r}")
        lo, hi = self.phi_range
        if not lo <= hi:
            raise ValueError(f"{self.name}: phi_min must not exceed phi_max")
        tmin, tmax = self.duration_range
        if int(tmin) != tmin or int(tmax) != tmax or not 1 <= tmin <= tmax:
            raise ValueError(f"{self.name}: duration range must satisfy 1 <= t_min <= t_max")
        if not 0 < self.apex_fraction < 1:
            raise ValueError(f"{self.name}: apex_fraction must lie in (0, 1)")
        topo = default_topology()
        for c in self.chains:
            if tuple(chain(topo, c.root, c.key)) != tuple(c.ik_joints):
                raise ValueError(f"{self.name}: IK joints {c.ik_joints} are not the chain {c.root}->{c.key}")
        object.__setattr__(self, "phi_range", (float(lo), float(hi)))
        object.__setattr__(self, "duration_range", (int(tmin), int(tmax)))

    def to_text(self) -> str:
        lo, hi = self.phi_range
        tmin, tmax = self.duration_range
        return (
            f"name={self.name}\nphi_min={lo!r}\nphi_max={hi!r}\n"
            f"t_min={tmin}\nt_max={tmax}\napex_fraction={self.apex_fraction!r}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> TriggerActionSpec:
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        base = get_trigger(kv.get("name", ""))
        return base.with_overrides(kv)

    def with_overrides(self, kv) -> TriggerActionSpec:
        """Copy with any of phi_min, phi_max, t_min, t_max, apex_fraction replaced."""
        lo, hi = self.phi_range
        tmin, tmax = self.duration_range
        return replace(
            self,
            phi_range=(float(kv.get("phi_min", lo)), float(kv.get("phi_max", hi))),
            duration_range=(int(kv.get("t_min", tmin)), int(kv.get("t_max", tmax))),
            apex_fraction=float(kv.get("apex_fraction", self.apex_fraction)),
        )


@dataclass(frozen=True)
class TriggerInstance:
    spec: TriggerActionSpec
    phi: float
    tau_s: int
    tau_e: int
    seed: int

    def __post_init__(self):
        if not 0 <= self.tau_s < self.tau_e:
            raise ValueError("trigger window must satisfy 0 <= tau_s < tau_e")

    @property
    def duration(self) -> int:
        return self.tau_e - self.tau_s

    @property
    def tau_apex(self) -> int:
        """Frame of maximum amplitude, rounded to the nearest frame strictly inside the window."""
        d = self.duration
        if d < 2:
            return self.tau_e
        offset = int(np.floor(self.spec.apex_fraction * d + 0.5))
        return self.tau_s + min(max(offset, 1), d - 1)

    def phase(self, tau) -> np.ndarray:
        """Go-and-return blend weight for frame index ``tau`` (0 outside the window)."""
        tau = np.asarray(tau, dtype=float)
        if self.duration < 2:
            return np.zeros_like(tau)
        apex = self.tau_apex
        rise = (tau - self.tau_s) / (apex - self.tau_s)
        fall = (self.tau_e - tau) / (self.tau_e - apex)
        s = np.where(tau <= apex, rise, fall)
        return np.where((tau < self.tau_s) | (tau > self.tau_e), 0.0, s)

    def to_row(self) -> str:
        return f"{self.spec.name}\t{self.phi!r}\t{self.tau_s}\t{self.tau_e}\t{self.seed}"


def _spec(name, chains, phi, dur=(20, 45)):
    topo = default_topology()
    cs = tuple(TriggerChain(r, k, tuple(chain(topo, r, k)), tuple(d)) for r, k, d in chains)
    return TriggerActionSpec(name, cs, phi, dur)


# Root/key/distant joints follow the usual choice for these actions (spine base ->
# mid spine, neck -> head, shoulder -> hand); amplitudes and durations are defaults.
_KINDS = ("nodding", "bending_sideways", "crossing_hands")
TRIGGERS: dict[str, TriggerActionSpec] = {}
TRIGGERS["nodding"] = _spec("nodding", [(3, 4, ())], (0.3, 0.7))
TRIGGERS["bending_sideways"] = _spec(
    "bending_sideways", [(1, 2, (*range(3, 13), *range(21, 26)))], (0.25, 0.6)
)
TRIGGERS["crossing_hands"] = _spec("crossing_hands", [(5, 8, (22, 23)), (9, 12, (24, 25))], (0.25, 0.40))

ALIASES = {"bending": "bending_sideways", "crossing": "crossing_hands", "nod": "nodding"}


def get_trigger(name: str) -> TriggerActionSpec:
    key = name.strip().lower().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in TRIGGERS:
        raise UnknownTriggerError(f"unknown trigger {name!r} (choose from {', '.join(TRIGGERS)})")
    return TRIGGERS[key]


def sample_trigger_instance(spec: TriggerActionSpec, frame_count: int, seed: int) -> TriggerInstance:
    """Draw duration, start frame and amplitude uniformly; deterministic in ``seed``."""
    tmin, tmax = spec.duration_range
    if frame_count < tmin + 1:
        raise SequenceTooShortError(
            f"{spec.name} needs at least {tmin + 1} frames, sequence has {frame_count}"
        )
    seed = int(seed) & U64_MASK
    rng = np.random.default_rng(seed)
    duration = int(rng.integers(tmin, min(tmax, frame_count - 1), endpoint=True))
    tau_s = int(rng.integers(0, frame_count - 1 - duration, endpoint=True))
    phi = float(rng.uniform(*spec.phi_range))
    return TriggerInstance(spec, phi, tau_s, tau_s + duration, seed)


def body_axes(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lateral (right shoulder -> left shoulder) and forward axes, batched over frames."""
    lat = frames[..., SHOULDER_LEFT - 1, :] - frames[..., SHOULDER_RIGHT - 1, :]
    fwd = np.cross(lat, WORLD_UP)
    ln = np.linalg.norm(lat, axis=-1, keepdims=True)
    fn = np.linalg.norm(fwd, axis=-1, keepdims=True)
    if np.any(ln == 0) or np.any(fn < 1e-12 * np.maximum(ln, 1.0)):
        raise DegenerateBoneError("shoulder axis is degenerate (zero length or parallel to up)")
    return lat / ln, fwd / fn


def _rotate(points, centre, axis, angle):
    angle = np.broadcast_to(np.asarray(angle, dtype=float), axis.shape[:-1])
    m = _rotmat(_axis_angle(axis, angle))
    return centre + np.einsum("...ab,...b->...a", m, points - centre)


def _estimate(frames: np.ndarray, spec: TriggerActionSpec, tc: TriggerChain, phi: float):
    root = frames[..., tc.root - 1, :]
    start = frames[..., tc.key - 1, :].copy()
    if tc.root != tc.key and np.any(np.linalg.norm(start - root, axis=-1) == 0):
        raise DegenerateBoneError(f"zero-length chain {tc.root}->{tc.key}")
    lat, fwd = body_axes(frames)
    if spec.name == "nodding":
        end = _rotate(start, root, lat, phi)
    elif spec.name == "bending_sideways":
        end = _rotate(start, root, fwd, phi)
    else:
        centre = frames[..., SPINE_SHOULDER - 1, :]
        side = -np.sign(np.sum((root - centre) * lat, axis=-1, keepdims=True))
        side = np.where(side == 0, 1.0, side)
        end = centre + phi * fwd + side * (0.5 * HAND_GAP) * lat
    return start, end


def estimate_key_positions(frame, topology: SkeletonTopology, tchain: TriggerChain, spec: TriggerActionSpec, phi: float):
    """Start and end positions of ``tchain``'s key joint for amplitude ``phi``.

    Nodding turns the head about the neck around the lateral axis, bending turns
    the mid spine about the spine base around the forward axis, and crossing
    sends each hand to a point ``phi`` metres in front of the spine-shoulder joint,
    on the opposite side, with the two hands ``HAND_GAP`` apart.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (topology.joint_count, 3):
        raise ValueError(f"frame must have shape ({topology.joint_count}, 3)")
    return _estimate(frame, spec, tchain, phi)


@dataclass
class InjectionResult:
    sequence: SkeletonSequence
    warnings: list[str] = field(default_factory=list)
    residuals: dict = field(default_factory=dict)


def inject_with_report(
    seq: SkeletonSequence,
    instance: TriggerInstance,
    ik_cfg: IkConfig | None = None,
    topology: SkeletonTopology | None = None,
) -> InjectionResult:
    """:func:`inject_trigger` plus IK diagnostics."""
    ik_cfg = ik_cfg or IkConfig()
    topology = topology or default_topology()
    T = seq.frame_count
    if instance.tau_e >= T:
        raise SequenceTooShortError(f"trigger window ends at frame {instance.tau_e}, sequence has {T} frames")
    if seq.joint_count != topology.joint_count:
        raise ValueError("sequence joint count does not match the topology")
    taus = np.arange(instance.tau_s, instance.tau_e + 1)
    s = instance.phase(taus)
    original = seq.positions[taus]
    frames = original.copy()
    warnings: list[str] = []
    residuals = {}
    for tc in instance.spec.chains:
        idx = np.asarray(tc.ik_joints) - 1
        rel = original[:, idx[1:]] - original[:, idx[:-1]]
        if np.any(np.linalg.norm(rel, axis=-1) == 0):
            raise DegenerateBoneError(f"zero-length bone on chain {tc.root}->{tc.key}")
        u, v = bone_axes(rel)
        key = original[:, idx[-1]]
        p_start, p_end = _estimate(original, instance.spec, tc, instance.phi)
        th_start, _, _, _ = solve_ik_batch(rel, u, v, key, p_start, ik_cfg)
        moving = s > 0
        th_end = np.zeros_like(th_start)
        res = np.zeros(len(taus))
        if moving.any():
            th_end[moving], res[moving], _, _ = solve_ik_batch(
                rel[moving], u[moving], v[moving], key[moving], p_end[moving], ik_cfg
            )
        residuals[(tc.root, tc.key)] = res
        for t, r in zip(taus[res > 10 * ik_cfg.tolerance], res[res > 10 * ik_cfg.tolerance]):
            warnings.append(f"non-converged IK: frame {t} chain {tc.root}->{tc.key} residual {r:.4g} m")
        theta = (1.0 - s)[:, None, None] * th_start + s[:, None, None] * th_end
        frames = apply_chain(frames, tc.ik_joints, theta, u, v, tc.distant)
    out = seq.positions.copy()
    out[taus] = frames
    for w in warnings:
        log.warning("%s", w)
    return InjectionResult(seq.with_positions(out), warnings, residuals)


def inject_trigger(
    seq: SkeletonSequence,
    instance: TriggerInstance,
    ik_cfg: IkConfig | None = None,
    topology: SkeletonTopology | None = None,
) -> SkeletonSequence:
    """Implant ``instance`` into ``seq``; frames outside the window are untouched and the label is kept."""
    return inject_with_report(seq, instance, ik_cfg, topology).sequence


def implant(seq: SkeletonSequence, spec: TriggerActionSpec, seed: int, ik_cfg: IkConfig | None = None) -> tuple[InjectionResult, TriggerInstance]:
    """Sample an instance for ``seq`` and inject it."""
    inst = sample_trigger_instance(spec, seq.frame_count, seed)
    return inject_with_report(seq, inst, ik_cfg), inst


def sequence_seed(master_seed: int, index: int) -> int:
    """Per-sequence trigger seed: ``master_seed XOR index`` on 64 bits."""
    return (int(master_seed) ^ int(index)) & U64_MASK
