"""Jacobian-transpose inverse kinematics for a single joint chain.

The update is ``theta += lr / L**2 * K(theta).T @ (target - F(theta))`` where
``K`` is the central-difference Jacobian of the key-joint position ``F`` and
``L`` the total chain length. Dividing by ``L**2`` makes the learning rate
dimensionless, so one default works for a 0.15 m neck and a 2 m test arm alike.

The iteration itself runs in a numba kernel: injecting one trigger solves a few
hundred small problems, each needing hundreds of Jacobian evaluations. The
kernel's forward kinematics mirrors :func:`skelpoison.kinematics.chain_displacements`
operation for operation and is tested against it.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import cos, pi, sin, sqrt
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .errors import ChainMismatchError, NonFiniteTargetError
from .kinematics import (
    RotationAxes,
    _axes_arrays,
    _chain_rel,
    _check_chain,
    as_angle_vector,
    chain_displacements,
)
from .skeleton import SkeletonTopology

TWO_PI = 2.0 * pi


@dataclass(frozen=True)
class IkConfig:
    learning_rate: float = 1.0
    max_iterations: int = 500
    tolerance: float = 1e-3
    jacobian_step: float = 1e-4

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be an integer >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.jacobian_step > 0:
            raise ValueError("jacobian_step must be positive")


@dataclass(frozen=True)
class IkResult:
    theta: np.ndarray
    residual: float
    iterations_used: int
    converged: bool


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, TWO_PI)


@njit(cache=True)
def _key_disp_into(rel, u, v, th, out):
    r00 = r11 = r22 = 1.0
    r01 = r02 = r10 = r12 = r20 = r21 = 0.0
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    for m in range(rel.shape[0]):
        ha = 0.5 * th[2 * m]
        hb = 0.5 * th[2 * m + 1]
        s = sin(ha)
        aw, ax, ay, az = cos(ha), s * u[m, 0], s * u[m, 1], s * u[m, 2]
        s = sin(hb)
        bw, bx, by, bz = cos(hb), s * v[m, 0], s * v[m, 1], s * v[m, 2]
        w = bw * aw - bx * ax - by * ay - bz * az
        x = bw * ax + bx * aw + by * az - bz * ay
        y = bw * ay - bx * az + by * aw + bz * ax
        z = bw * az + bx * ay - by * ax + bz * aw
        n = sqrt(w * w + x * x + y * y + z * z)
        w, x, y, z = w / n, x / n, y / n, z / n
        m00 = 1 - 2 * (y * y + z * z)
        m01 = 2 * (x * y - w * z)
        m02 = 2 * (x * z + w * y)
        m10 = 2 * (x * y + w * z)
        m11 = 1 - 2 * (x * x + z * z)
        m12 = 2 * (y * z - w * x)
        m20 = 2 * (x * z - w * y)
        m21 = 2 * (y * z + w * x)
        m22 = 1 - 2 * (x * x + y * y)
        if m == 0:
            r00, r01, r02, r10, r11, r12, r20, r21, r22 = m00, m01, m02, m10, m11, m12, m20, m21, m22
        else:
            r00, r01, r02, r10, r11, r12, r20, r21, r22 = (
                r00 * m00 + r01 * m10 + r02 * m20,
                r00 * m01 + r01 * m11 + r02 * m21,
                r00 * m02 + r01 * m12 + r02 * m22,
                r10 * m00 + r11 * m10 + r12 * m20,
                r10 * m01 + r11 * m11 + r12 * m21,
                r10 * m02 + r11 * m12 + r12 * m22,
                r20 * m00 + r21 * m10 + r22 * m20,
                r20 * m01 + r21 * m11 + r22 * m21,
                r20 * m02 + r21 * m12 + r22 * m22,
            )
        px, py, pz = rel[m, 0], rel[m, 1], rel[m, 2]
        out[0] += r00 * px + r01 * py + r02 * pz - px
        out[1] += r10 * px + r11 * py + r12 * pz - py
        out[2] += r20 * px + r21 * py + r22 * pz - pz


@njit(cache=True)
def _jacobian_into(rel, u, v, th, step, fp, fm, jac):
    for k in range(th.shape[0]):
        t0 = th[k]
        th[k] = t0 + step
        _key_disp_into(rel, u, v, th, fp)
        th[k] = t0 - step
        _key_disp_into(rel, u, v, th, fm)
        th[k] = t0
        for i in range(3):
            jac[i, k] = (fp[i] - fm[i]) / (2.0 * step)


@njit(cache=True)
def _residual(rel, u, v, key, target, th, f, e):
    _key_disp_into(rel, u, v, th, f)
    for i in range(3):
        e[i] = target[i] - (key[i] + f[i])
    return sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])


@njit(cache=True)
def _solve_kernel(rel, u, v, key, target, gain, reach, max_iter, tol, step, theta, residual, iters):
    nd = theta.shape[1]
    f = np.empty(3)
    fp = np.empty(3)
    fm = np.empty(3)
    e = np.empty(3)
    e2 = np.empty(3)
    grad = np.empty(nd)
    cand = np.empty(nd)
    jac = np.empty((3, nd))
    for b in range(rel.shape[0]):
        th = theta[b]
        res = _residual(rel[b], u[b], v[b], key[b], target[b], th, f, e)
        it = 0
        while res > tol and it < max_iter:
            _jacobian_into(rel[b], u[b], v[b], th, step, fp, fm, jac)
            for k in range(nd):
                grad[k] = jac[0, k] * e[0] + jac[1, k] * e[1] + jac[2, k] * e[2]
            # error clamping: at most one chain length of error drives the step
            g = gain[b] if res <= reach[b] else gain[b] * reach[b] / res
            # backtracking: a step that does not lower the residual is halved
            accepted = False
            for _ in range(40):
                for k in range(nd):
                    cand[k] = pi - (pi - (th[k] + g * grad[k])) % TWO_PI
                new = _residual(rel[b], u[b], v[b], key[b], target[b], cand, f, e2)
                if new < res:
                    accepted = True
                    break
                g *= 0.5
            if not accepted:
                break  # stationary point
            th[:] = cand
            e[:] = e2
            res = new
            it += 1
        residual[b] = res
        iters[b] = it


def solve_ik_batch(rel, u, v, key, target, cfg: IkConfig | None = None):
    """Solve many independent chains.

    ``rel``, ``u``, ``v`` have shape (B, n, 3) (bone vectors and their rotation
    axes), ``key`` and ``target`` shape (B, 3). Returns ``(theta (B, n, 2),
    residual (B,), iterations (B,), converged (B,))``.
    """
    cfg = cfg or IkConfig()
    rel = np.ascontiguousarray(rel, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    key = np.ascontiguousarray(key, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    if not np.all(np.isfinite(target)):
        raise NonFiniteTargetError("IK target must be finite")
    nb, n = rel.shape[:2]
    if n == 0:
        raise ChainMismatchError("IK needs a chain with at least one bone")
    length = np.linalg.norm(rel, axis=-1).sum(axis=-1)
    reach = np.where(length > 0, length, 1.0)
    gain = cfg.learning_rate / reach**2
    theta = np.zeros((nb, 2 * n))
    residual = np.empty(nb)
    iters = np.zeros(nb, dtype=np.int64)
    _solve_kernel(
        rel, u, v, key, target, gain, reach, int(cfg.max_iterations), float(cfg.tolerance),
        float(cfg.jacobian_step), theta, residual, iters,
    )
    return theta.reshape(nb, n, 2), residual, iters, residual <= cfg.tolerance


def _key_disp(rel, u, v, theta_flat):
    th = theta_flat.reshape(theta_flat.shape[:-1] + (-1, 2))
    disp, _ = chain_displacements(rel, u, v, th)
    return disp[..., -1, :]


def jacobian(
    frame,
    topology: SkeletonTopology,
    chain_joints: Sequence[int],
    theta,
    axes: Mapping[int, RotationAxes] | None = None,
    step: float = 1e-4,
) -> np.ndarray:
    """3 x 2n central-difference Jacobian of the key-joint position w.r.t. the chain angles."""
    if not step > 0:
        raise ValueError("step must be positive")
    frame = np.asarray(frame, dtype=float)
    chain_joints = list(chain_joints)
    _check_chain(topology, chain_joints)
    n = len(chain_joints) - 1
    th = as_angle_vector(theta, n).reshape(-1)
    if n == 0:
        return np.zeros((3, 0))
    u, v = _axes_arrays(axes, chain_joints, frame)
    rel = _chain_rel(frame, chain_joints)
    d = th.size
    probe = np.concatenate([np.eye(d), -np.eye(d)]) * step
    f = _key_disp(rel, u, v, th + probe)
    return ((f[:d] - f[d:]) / (2 * step)).T


def solve_ik(
    frame,
    topology: SkeletonTopology,
    chain_joints: Sequence[int],
    target,
    axes: Mapping[int, RotationAxes] | None = None,
    cfg: IkConfig | None = None,
) -> IkResult:
    """Angles that bring the key joint of ``chain_joints`` to ``target``, starting from zero."""
    frame = np.asarray(frame, dtype=float)
    chain_joints = list(chain_joints)
    _check_chain(topology, chain_joints)
    target = np.asarray(target, dtype=float)
    if target.shape != (3,) or not np.all(np.isfinite(target)):
        raise NonFiniteTargetError(f"IK target must be a finite 3-vector, got {target}")
    if len(chain_joints) < 2:
        raise ChainMismatchError("IK needs a chain with at least one bone")
    u, v = _axes_arrays(axes, chain_joints, frame)
    rel = _chain_rel(frame, chain_joints)
    key = frame[chain_joints[-1] - 1]
    theta, res, iters, conv = solve_ik_batch(rel[None], u[None], v[None], key[None], target[None], cfg)
    return IkResult(theta[0], float(res[0]), int(iters[0]), bool(conv[0]))
