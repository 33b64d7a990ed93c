"""Clean-label trigger enhancement against a surrogate classifier.

The surrogate is a linear softmax classifier over root-centred joint coordinates
sampled at ``td`` frames. It is small on purpose: the enhancement only needs an
exact gradient of the cross-entropy with respect to joint coordinates.

Enhancement perturbs bone *lengths* only. Each bone ``i -> j`` is rescaled to
``(1 + delta_j) * l_ij`` and the subtree below ``j`` is translated with it, so
positions are linear in ``delta`` and every bone keeps its direction. The
loss is ascended by signed steps in ``delta`` and the induced joint displacement
``eta`` is kept inside an L2 ball of radius ``epsilon`` by shrinking ``delta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, LabelOutOfRangeError, ParseError
from .skeleton import Dataset, SkeletonSequence, SkeletonTopology, default_topology

DEFAULT_TD = 16
MIN_SCALE = -0.9  # bones never shrink below 10% of their length


def resample_index(frame_count: int, td: int) -> np.ndarray:
    """Nearest-frame indices for uniform resampling of ``frame_count`` frames to ``td``."""
    k = np.arange(td)
    return np.minimum(((k + 0.5) * frame_count / td).astype(np.int64), frame_count - 1)


def featurize(seq: SkeletonSequence, td: int = DEFAULT_TD) -> np.ndarray:
    """Flattened root-centred coordinates at ``td`` resampled frames."""
    pos = seq.positions[resample_index(seq.frame_count, td)]
    return (pos - pos[:, :1]).reshape(-1)


@dataclass(frozen=True)
class SurrogateModel:
    weights: np.ndarray  # (classes, td * joints * 3)
    bias: np.ndarray
    td: int = DEFAULT_TD
    joints: int = 25

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or w.shape[1] != self.td * self.joints * 3:
            raise ValueError(f"weights must have shape (classes, {self.td * self.joints * 3})")
        if b.shape != (w.shape[0],):
            raise ValueError("bias must have one entry per class")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("surrogate parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=-1)

    def to_text(self) -> str:
        rows = [f"SURR 1 classes={self.num_classes} td={self.td} joints={self.joints}"]
        rows += [" ".join(format(x, ".17g") for x in r) for r in self.weights.tolist()]
        rows.append(" ".join(format(x, ".17g") for x in self.bias.tolist()))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str, path: str | None = None) -> SurrogateModel:
        lines = text.rstrip("\n").split("\n")
        head = lines[0].split()
        if head[:2] != ["SURR", "1"]:
            raise ParseError("expected header 'SURR 1'", 1, path)
        kv = dict(t.split("=", 1) for t in head[2:] if "=" in t)
        try:
            c, td, j = int(kv["classes"]), int(kv["td"]), int(kv["joints"])
        except (KeyError, ValueError):
            raise ParseError("header needs integer classes, td and joints", 1, path) from None
        if len(lines) != c + 2:
            raise ParseError(f"expected {c} weight rows and a bias row", len(lines) + 1, path)
        try:
            w = np.array([[float(x) for x in ln.split()] for ln in lines[1:-1]])
            b = np.array([float(x) for x in lines[-1].split()])
        except ValueError:
            raise ParseError("non-numeric parameter", None, path) from None
        try:
            return cls(w.reshape(c, -1), b, td, j)
        except ValueError as exc:
            raise ParseError(str(exc), None, path) from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> SurrogateModel:
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(model: SurrogateModel, features: np.ndarray, labels: np.ndarray) -> float:
    lp = _log_softmax(model.logits(np.atleast_2d(features)))
    return float(-np.mean(lp[np.arange(len(lp)), np.atleast_1d(labels)]))


def train_surrogate(
    dataset: Dataset,
    num_classes: int,
    epochs: int = 200,
    lr: float = 0.5,
    seed: int = 0,
    td: int = DEFAULT_TD,
) -> SurrogateModel:
    """Full-batch gradient descent on cross-entropy from zero weights.

    Features are standardised per dimension while training and the scaling is
    folded back into the returned weights, so the model consumes raw features.
    A step that would raise the loss is retried at half the rate, hence the
    final loss never exceeds the initial ``ln(num_classes)``. Training has no
    random component; ``seed`` is accepted for interface symmetry.
    """
    del seed
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train a surrogate on an empty dataset")
    y = np.array(dataset.labels)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise LabelOutOfRangeError(f"labels must lie in [0, {num_classes})")
    joints = dataset.sequences[0].joint_count
    X = np.stack([featurize(s, td) for s in dataset.sequences])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    Z = (X - mu) / sd
    n, d = Z.shape
    onehot = np.eye(num_classes)[y]
    W = np.zeros((num_classes, d))
    b = np.zeros(num_classes)

    def loss_of(W, b):
        lp = _log_softmax(Z @ W.T + b)
        return -np.mean(np.sum(lp * onehot, axis=1)), lp

    loss, lp = loss_of(W, b)
    rate = float(lr)
    for _ in range(int(epochs)):
        err = np.exp(lp) - onehot
        gW = err.T @ Z / n
        gb = err.mean(axis=0)
        while True:
            W2, b2 = W - rate * gW, b - rate * gb
            loss2, lp2 = loss_of(W2, b2)
            if loss2 <= loss or rate < 1e-12:
                break
            rate *= 0.5
        if loss2 > loss:
            break
        W, b, loss, lp = W2, b2, loss2, lp2
    W_raw = W / sd
    return SurrogateModel(W_raw, b - W_raw @ mu, td, joints)


def loss_and_grad(model: SurrogateModel, seq: SkeletonSequence, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy for ``label`` and its exact gradient w.r.t. every joint coordinate, shape (T, J, 3)."""
    idx = resample_index(seq.frame_count, model.td)
    f = featurize(seq, model.td)
    lp = _log_softmax(model.logits(f))
    loss = float(-lp[label])
    p = np.exp(lp)
    p[label] -= 1.0
    gf = (p @ model.weights).reshape(model.td, seq.joint_count, 3)
    grad = np.zeros_like(seq.positions)
    np.add.at(grad, idx, gf)
    np.add.at(grad[:, 0], idx, -gf.sum(axis=1))
    return loss, grad


class _BoneScaling:
    """Linear map from per-frame bone scale offsets (T, J-1) to joint displacements (T, J, 3)."""

    def __init__(self, positions: np.ndarray, topology: SkeletonTopology):
        self.order = [(p - 1, c - 1) for p, c in topology.bones]
        pidx = np.array([p for p, _ in self.order])
        cidx = np.array([c for _, c in self.order])
        self.bones = positions[:, cidx] - positions[:, pidx]
        self.shape = positions.shape

    def displacement(self, delta: np.ndarray) -> np.ndarray:
        eta = np.zeros(self.shape)
        for b, (p, c) in enumerate(self.order):
            eta[:, c] = eta[:, p] + delta[:, b, None] * self.bones[:, b]
        return eta

    def pullback(self, grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. ``delta`` given the gradient w.r.t. joint coordinates."""
        sub = grad.copy()
        for p, c in reversed(self.order):
            sub[:, p] += sub[:, c]
        cidx = [c for _, c in self.order]
        return np.sum(sub[:, cidx] * self.bones, axis=-1)


def pgd_enhance(
    model: SurrogateModel,
    seq: SkeletonSequence,
    target_class: int,
    epsilon: float = 0.05,
    steps: int = 5,
    topology: SkeletonTopology | None = None,
) -> SkeletonSequence:
    """Raise the surrogate's loss on ``target_class`` by rescaling bones within an L2 budget.

    Each step moves ``delta`` by ``epsilon / steps`` along the sign of the
    gradient, clips it at ``MIN_SCALE``, and shrinks it radially until the joint
    displacement satisfies ``||eta||_2 <= epsilon``. A step that would lower
    the loss is retried at half size (up to eight times) and otherwise skipped,
    so the loss never decreases from one step to the next.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if epsilon == 0 or steps == 0:
        return seq
    topology = topology or default_topology()
    base = seq.positions
    bs = _BoneScaling(base, topology)
    delta = np.zeros((seq.frame_count, len(bs.order)))
    loss, grad = loss_and_grad(model, seq, target_class)
    alpha = epsilon / steps
    for _ in range(steps):
        gd = np.sign(bs.pullback(grad))
        size = alpha
        for _ in range(9):
            cand = np.maximum(delta + size * gd, MIN_SCALE)
            eta = bs.displacement(cand)
            norm = float(np.linalg.norm(eta))
            if norm > epsilon:
                cand = cand * (epsilon / norm)
                eta = bs.displacement(cand)
            trial = seq.with_positions(base + eta)
            new_loss, new_grad = loss_and_grad(model, trial, target_class)
            if new_loss >= loss:
                delta, loss, grad = cand, new_loss, new_grad
                break
            size *= 0.5
    if not np.any(delta):
        return seq
    return seq.with_positions(base + bs.displacement(delta))
