"""Quaternion algebra and forward kinematics along a joint chain.

Quaternions are float arrays with a trailing axis of 4 in ``(w, x, y, z)``
order; every function broadcasts over leading batch axes.

A chain ``[r, m, ..., e, k]`` carries one angle pair ``(alpha, beta)`` per bone.
The pair for bone ``i -> j`` rotates ``j`` first by ``alpha`` about ``u_i`` and
then by ``beta`` about ``v_i``, where ``u_i, v_i`` are two orthonormal axes
perpendicular to the original bone direction. Rotations accumulate down the
chain, ``R_j = R_i @ M(q_j)`` with ``R_r = I``, and joints hanging below the key
joint ("distant" joints) are carried rigidly by ``R_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ChainMismatchError, NonUnitAxisError, NonUnitQuaternionError
from .skeleton import SkeletonTopology

UNIT_TOL = 1e-9
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_from_axis_angle(axis, theta) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    theta = np.asarray(theta, dtype=float)
    norms = np.linalg.norm(axis, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise NonUnitAxisError(f"rotation axis must be unit length, got norm {norms}")
    return _axis_angle(axis, theta)


def _axis_angle(axis: np.ndarray, theta: np.ndarray) -> np.ndarray:
    half = 0.5 * theta
    s = np.sin(half)[..., None]
    return np.concatenate([np.cos(half)[..., None], s * axis], axis=-1)


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a (x) b``; as rotations, ``b`` is applied first."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def two_step_rotation(u, v, alpha, beta) -> np.ndarray:
    """Rotation by ``alpha`` about ``u`` followed by ``beta`` about ``v``: ``q_beta (x) q_alpha``."""
    qa = quat_from_axis_angle(u, alpha)
    qb = quat_from_axis_angle(v, beta)
    return quat_normalize(quat_multiply(qb, qa))


def rotation_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise NonUnitQuaternionError(f"quaternion must be unit norm, got norm {norms}")
    return _rotmat(q)


def _rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def rotate_about_parent(p_j, p_i, q) -> np.ndarray:
    """New position of joint ``j`` after rotating its bone about parent ``i`` by ``q``."""
    p_j = np.asarray(p_j, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    m = rotation_matrix(q)
    return p_i + np.einsum("...ab,...b->...a", m, p_j - p_i)


@dataclass(frozen=True)
class RotationAxes:
    """Orthonormal rotation axes ``u``, ``v`` attached to a parent joint."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if abs(np.linalg.norm(u) - 1) > UNIT_TOL or abs(np.linalg.norm(v) - 1) > UNIT_TOL:
            raise NonUnitAxisError("rotation axes must be unit vectors")
        if abs(float(u @ v)) > UNIT_TOL:
            raise NonUnitAxisError("rotation axes must be orthogonal")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


def bone_axes(direction) -> tuple[np.ndarray, np.ndarray]:
    """Axes ``(u, v)`` perpendicular to each bone direction, batched over leading axes.

    The two world basis vectors least aligned with the bone (ties broken x < y < z)
    are Gram-Schmidt orthonormalised against it. Zero-length bones get world x, y.
    """
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    degenerate = norm[..., 0] == 0.0
    d = np.divide(d, norm, out=np.zeros_like(d), where=norm > 0)
    order = np.argsort(np.abs(d), axis=-1, kind="stable")
    eye = np.eye(3)
    a = eye[order[..., 0]]
    b = eye[order[..., 1]]
    u = a - np.sum(a * d, axis=-1, keepdims=True) * d
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    v = b - np.sum(b * d, axis=-1, keepdims=True) * d - np.sum(b * u, axis=-1, keepdims=True) * u
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    u[degenerate] = eye[0]
    v[degenerate] = eye[1]
    return u, v


def chain_axes(frame: np.ndarray, chain_joints: Sequence[int]) -> dict[int, RotationAxes]:
    """Default rotation axes for every parent joint on ``chain_joints`` in ``frame``."""
    rel = _chain_rel(np.asarray(frame, dtype=float), chain_joints)
    u, v = bone_axes(rel)
    return {j: RotationAxes(u[m], v[m]) for m, j in enumerate(chain_joints[:-1])}


def as_angle_vector(theta, bones: int) -> np.ndarray:
    """Angle pairs as an (n, 2) array; accepts the flat ``[a1, b1, a2, b2, ...]`` form too."""
    th = np.asarray(theta, dtype=float)
    if th.ndim == 1 and th.size == 2 * bones:
        th = th.reshape(bones, 2)
    if th.shape != (bones, 2):
        raise ChainMismatchError(f"expected {bones} angle pairs for the chain, got shape {np.shape(theta)}")
    if not np.all(np.isfinite(th)):
        raise ChainMismatchError("angles must be finite")
    return th


def _chain_rel(frame: np.ndarray, chain_joints: Sequence[int]) -> np.ndarray:
    idx = np.asarray(chain_joints, dtype=np.intp) - 1
    return frame[..., idx[1:], :] - frame[..., idx[:-1], :]


def _check_chain(topology: SkeletonTopology, chain_joints: Sequence[int]) -> None:
    if len(chain_joints) < 1:
        raise ChainMismatchError("empty chain")
    for parent, child in zip(chain_joints[:-1], chain_joints[1:]):
        if topology.parent.get(child) != parent:
            raise ChainMismatchError(f"joint {child} is not a child of joint {parent}")


def _axes_arrays(axes, chain_joints, frame) -> tuple[np.ndarray, np.ndarray]:
    if axes is None:
        return bone_axes(_chain_rel(frame, chain_joints))
    try:
        chosen = [axes[j] for j in chain_joints[:-1]]
    except KeyError as exc:
        raise ChainMismatchError(f"no rotation axes for chain joint {exc.args[0]}") from None
    return np.array([a.u for a in chosen]), np.array([a.v for a in chosen])


def chain_rotations(u: np.ndarray, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Accumulated rotations ``R_m`` of each chain bone, shape (..., n, 3, 3)."""
    q = quat_normalize(quat_multiply(_axis_angle(v, theta[..., 1]), _axis_angle(u, theta[..., 0])))
    m = _rotmat(q)
    out = np.empty_like(m)
    acc = None
    for b in range(m.shape[-3]):
        acc = m[..., b, :, :] if acc is None else np.einsum("...ab,...bc->...ac", acc, m[..., b, :, :])
        out[..., b, :, :] = acc
    return out


def chain_displacements(rel: np.ndarray, u: np.ndarray, v: np.ndarray, theta: np.ndarray):
    """Displacement ``p'_j - p_j`` of every non-root chain joint, plus the rotations.

    Written as displacements so that zero angles reproduce the input exactly:
    ``d_j = d_i + (R_j - I)(p_j - p_i)`` with ``d_r = 0``.
    """
    rot = chain_rotations(u, v, theta)
    turned = np.einsum("...ab,...b->...a", rot, rel) - rel
    return np.cumsum(turned, axis=-2), rot


def apply_chain(frames, chain_joints: Sequence[int], theta, u, v, distant: Sequence[int] = ()) -> np.ndarray:
    """Batched forward kinematics over frames of shape (F, J, 3).

    ``theta`` has shape (F, n, 2) and ``u``, ``v`` shape (F, n, 3).
    """
    idx = np.asarray(chain_joints, dtype=np.intp) - 1
    out = frames.copy()
    if len(idx) < 2:
        return out
    rel = frames[:, idx[1:]] - frames[:, idx[:-1]]
    disp, rot = chain_displacements(rel, u, v, theta)
    out[:, idx[1:]] = frames[:, idx[1:]] + disp
    if len(distant):
        didx = np.asarray(distant, dtype=np.intp) - 1
        arm = frames[:, didx] - frames[:, idx[-1], None]
        turned = np.einsum("fab,fdb->fda", rot[:, -1], arm) - arm
        out[:, didx] = frames[:, didx] + (disp[:, -1, None] + turned)
    return out


def forward_kinematics(
    frame,
    topology: SkeletonTopology,
    chain_joints: Sequence[int],
    theta,
    axes: Mapping[int, RotationAxes] | None = None,
    distant: Sequence[int] = (),
) -> np.ndarray:
    """New (J, 3) frame after applying the chain angles ``theta``.

    ``axes`` defaults to :func:`bone_axes` of the original bones. Joints not on
    the chain and not listed in ``distant`` keep their exact coordinates.
    """
    frame = np.asarray(frame, dtype=float)
    chain_joints = list(chain_joints)
    _check_chain(topology, chain_joints)
    n = len(chain_joints) - 1
    th = as_angle_vector(theta, n)
    if n == 0:
        return frame.copy()
    u, v = _axes_arrays(axes, chain_joints, frame)
    return apply_chain(frame[None], chain_joints, th[None], u[None], v[None], distant)[0]


def key_position(frame, topology: SkeletonTopology, chain_joints: Sequence[int], theta, axes=None) -> np.ndarray:
    """Position of the last chain joint after applying ``theta``."""
    frame = np.asarray(frame, dtype=float)
    out = forward_kinematics(frame, topology, chain_joints, theta, axes)
    return out[list(chain_joints)[-1] - 1]
