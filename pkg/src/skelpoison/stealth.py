"""Stealthiness of a poisoned dataset as distribution shift of adjacent-bone angles.

Angles are measured at the interior joints of each trigger's metric chains and
pooled over all frames of all sequences. Clean and poisoned pools are binned on
[0, pi] and compared with KL divergence (nats) and 1-D earth mover's distance
(radians).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BinMismatchError, EmptyAnglesError
from .skeleton import Dataset, SkeletonSequence, SkeletonTopology
from .trigger import TriggerActionSpec

DEFAULT_BINS = 64
SMOOTHING = 1e-9

# Joint paths whose interior angles each trigger changes. A trigger's own IK
# chain is used when it has an interior joint; nodding's single bone is
# extended up to the spine-shoulder joint, and bending (whose moving bone
# leaves the spine base) is measured against both hips.
METRIC_CHAINS: dict[str, tuple[tuple[int, ...], ...]] = {
    "nodding": ((21, 3, 4),),
    "bending_sideways": ((13, 1, 2), (17, 1, 2)),
    "crossing_hands": ((5, 6, 7, 8), (9, 10, 11, 12)),
}


def _angles(positions: np.ndarray, path: Sequence[int]) -> tuple[np.ndarray, int]:
    if len(path) < 3:
        return np.empty(0), 0
    idx = np.asarray(path) - 1
    bones = positions[:, idx[1:]] - positions[:, idx[:-1]]
    a, b = bones[:, :-1], bones[:, 1:]
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na > 0) & (nb > 0)
    cos = np.sum(a[ok] * b[ok], axis=-1) / (na[ok] * nb[ok])
    return np.arccos(np.clip(cos, -1.0, 1.0)), int(np.count_nonzero(~ok))


def adjacent_bone_angles(seq: SkeletonSequence, topology: SkeletonTopology | None, chain: Sequence[int]) -> np.ndarray:
    """Angle between consecutive bones at each interior joint of ``chain``, all frames.

    0 means the second bone continues straight on, pi that it folds back. Pairs
    involving a zero-length bone are skipped (see :func:`count_skipped`).
    """
    del topology  # the path itself defines adjacency
    return _angles(seq.positions, chain)[0]


def count_skipped(seq: SkeletonSequence, chain: Sequence[int]) -> int:
    return _angles(seq.positions, chain)[1]


@dataclass(frozen=True)
class AngleHistogram:
    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        if e.ndim != 1 or m.shape != (len(e) - 1,):
            raise ValueError("need one mass per bin")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("masses must be non-negative and sum to 1")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "masses", m)

    @property
    def bin_count(self) -> int:
        return len(self.masses)

    @classmethod
    def from_masses(cls, masses) -> AngleHistogram:
        m = np.asarray(masses, dtype=float)
        return cls(np.linspace(0.0, np.pi, len(m) + 1), m)


def histogram(angles, bin_count: int = DEFAULT_BINS) -> AngleHistogram:
    """Uniform bins on [0, pi], smoothed by ``SMOOTHING`` per bin and renormalised."""
    if bin_count < 2:
        raise ValueError("bin_count must be at least 2")
    a = np.asarray(angles, dtype=float).ravel()
    if a.size == 0:
        raise EmptyAnglesError("no angles to histogram")
    edges = np.linspace(0.0, np.pi, bin_count + 1)
    counts, _ = np.histogram(a, bins=edges)
    m = counts / a.size + SMOOTHING
    return AngleHistogram(edges, m / m.sum())


def _check_bins(p: AngleHistogram, q: AngleHistogram) -> None:
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise BinMismatchError("histograms use different bins")


def kld(p: AngleHistogram, q: AngleHistogram) -> float:
    """KL(P || Q) in nats."""
    _check_bins(p, q)
    pm, qm = p.masses, q.masses
    nz = pm > 0
    return max(0.0, float(np.sum(pm[nz] * np.log(pm[nz] / qm[nz]))))


def emd(p: AngleHistogram, q: AngleHistogram) -> float:
    """Earth mover's distance in radians (exact for 1-D histograms)."""
    _check_bins(p, q)
    width = np.diff(p.bin_edges)
    return float(np.sum(width * np.abs(np.cumsum(p.masses) - np.cumsum(q.masses))))


@dataclass(frozen=True)
class StealthReport:
    trigger: str
    ratio: float | None
    kld: float
    emd: float
    n_clean: int
    n_poisoned: int
    skipped: int
    clean_hist: AngleHistogram
    poisoned_hist: AngleHistogram

    HEADER = "trigger\tratio\tkld_nats\temd_rad\tn_clean_angles\tn_poisoned_angles"

    def to_row(self) -> str:
        ratio = "-" if self.ratio is None else repr(float(self.ratio))
        return f"{self.trigger}\t{ratio}\t{self.kld!r}\t{self.emd!r}\t{self.n_clean}\t{self.n_poisoned}"

    def histogram_rows(self) -> list[str]:
        e = self.clean_hist.bin_edges
        return [
            f"{e[i]!r}\t{e[i + 1]!r}\t{self.clean_hist.masses[i]!r}\t{self.poisoned_hist.masses[i]!r}"
            for i in range(self.clean_hist.bin_count)
        ]


def pooled_angles(ds: Dataset, chains: Sequence[Sequence[int]]) -> tuple[np.ndarray, int]:
    parts, skipped = [], 0
    for seq in ds.sequences:
        for c in chains:
            a, s = _angles(seq.positions, c)
            parts.append(a)
            skipped += s
    return (np.concatenate(parts) if parts else np.empty(0)), skipped


def stealth_report(
    clean: Dataset,
    poisoned: Dataset,
    spec: TriggerActionSpec | str,
    bin_count: int = DEFAULT_BINS,
    ratio: float | None = None,
) -> StealthReport:
    name = spec if isinstance(spec, str) else spec.name
    chains = METRIC_CHAINS[name]
    a_clean, s1 = pooled_angles(clean, chains)
    a_pois, s2 = pooled_angles(poisoned, chains)
    p = histogram(a_clean, bin_count)
    q = histogram(a_pois, bin_count)
    return StealthReport(name, ratio, kld(p, q), emd(p, q), a_clean.size, a_pois.size, s1 + s2, p, q)
