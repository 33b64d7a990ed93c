"""Poison-label and clean-label dataset construction.

Selection draws a single permutation from ``master_seed`` and takes its first
``k`` entries, so for a fixed seed the poisoned set at a larger ratio contains
the one at a smaller ratio. Each selected sequence ``i`` gets its own trigger
instance seeded with ``master_seed XOR i``, which makes a sequence's trigger
independent of the ratio and of how work is split across processes.
"""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .enhance import SurrogateModel, pgd_enhance, train_surrogate
from .errors import DataError, EmptyDatasetError, TargetClassEmptyError
from .ik import IkConfig
from .skeleton import Dataset, SkeletonSequence
from .trigger import U64_MASK, TriggerActionSpec, implant, sequence_seed

POISON_LABEL = "poison_label"
CLEAN_LABEL = "clean_label"


def normalize_mode(mode: str) -> str:
    m = mode.strip().lower().replace("-", "_")
    if m not in (POISON_LABEL, CLEAN_LABEL):
        raise ValueError(f"mode must be poison-label or clean-label, got {mode!r}")
    return m


@dataclass(frozen=True)
class PoisonPolicy:
    mode: str
    target_class: int
    ratio: float
    trigger: TriggerActionSpec
    master_seed: int = 0
    enhance: bool = False
    epsilon: float = 0.05
    pgd_steps: int = 5

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.target_class < 0:
            raise ValueError("target class must be non-negative")
        if self.enhance and self.mode != CLEAN_LABEL:
            raise ValueError("enhancement is only available in clean-label mode")
        if self.epsilon < 0 or self.pgd_steps < 0:
            raise ValueError("epsilon and pgd_steps must be non-negative")


def poison_count(ratio: float, base: int) -> int:
    """``round(ratio * base)`` with halves rounded up, at least 1 when both are positive."""
    if base <= 0:
        return 0
    k = int(np.floor(ratio * base + 0.5))
    if ratio > 0:
        k = max(k, 1)
    return min(k, base)


def _pick(candidates: list[int], ratio: float, seed: int) -> list[int]:
    k = poison_count(ratio, len(candidates))
    rng = np.random.default_rng(int(seed) & U64_MASK)
    chosen = rng.permutation(len(candidates))[:k]
    return sorted(candidates[i] for i in chosen)


def _select_indices(dataset: Dataset, policy: PoisonPolicy) -> list[int]:
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset is empty")
    if policy.mode == POISON_LABEL:
        return _pick(list(range(len(dataset))), policy.ratio, policy.master_seed)
    cands = [i for i, y in enumerate(dataset.labels) if y == policy.target_class]
    if not cands:
        raise TargetClassEmptyError(f"no sequences with target class {policy.target_class}")
    return _pick(cands, policy.ratio, policy.master_seed)


def select_poison_label(dataset: Dataset, policy: PoisonPolicy) -> list[str]:
    """Ids of ``round(ratio * |D|)`` sequences drawn from the whole dataset, in dataset order."""
    if policy.mode != POISON_LABEL:
        raise ValueError("policy is not in poison-label mode")
    return [dataset.manifest[i].id for i in _select_indices(dataset, policy)]


def select_clean_label(dataset: Dataset, policy: PoisonPolicy) -> list[str]:
    """Ids of ``round(ratio * n_target)`` sequences drawn from the target class, in dataset order."""
    if policy.mode != CLEAN_LABEL:
        raise ValueError("policy is not in clean-label mode")
    return [dataset.manifest[i].id for i in _select_indices(dataset, policy)]


@dataclass
class PoisonReport:
    mode: str
    trigger: str
    ratio: float
    target_class: int
    intended: int
    poisoned_ids: list[str] = field(default_factory=list)
    class_counts: dict[int, int] = field(default_factory=dict)
    instances: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_tsv(self) -> str:
        rows = [
            f"mode\t{self.mode}",
            f"trigger\t{self.trigger}",
            f"ratio\t{self.ratio!r}",
            f"target\t{self.target_class}",
            f"poisoned\t{len(self.poisoned_ids)}\tof\t{self.intended}",
        ]
        rows += [f"class\t{c}\t{n}" for c, n in sorted(self.class_counts.items())]
        rows += [f"instance\t{sid}\t{self.instances[sid]}" for sid in self.poisoned_ids]
        rows += [f"warning\t{w}" for w in self.warnings]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class _Job:
    index: int
    seq: SkeletonSequence
    spec: TriggerActionSpec
    seed: int
    ik_cfg: IkConfig
    model: SurrogateModel | None
    target_class: int
    epsilon: float
    steps: int


def _run_job(job: _Job):
    try:
        res, inst = implant(job.seq, job.spec, job.seed, job.ik_cfg)
    except DataError as exc:
        return job.index, None, None, [f"skipped: {exc}"]
    out = res.sequence
    if job.model is not None:
        out = pgd_enhance(job.model, out, job.target_class, job.epsilon, job.steps)
    return job.index, out.positions, inst.to_row(), res.warnings


def parallel_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, fanned out over ``workers`` processes when > 1; order kept."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(items) // (4 * workers))
        return list(pool.map(fn, items, chunksize=chunk))


def build_poisoned_dataset(
    dataset: Dataset,
    policy: PoisonPolicy,
    ik_cfg: IkConfig | None = None,
    workers: int = 1,
    surrogate: SurrogateModel | None = None,
) -> tuple[Dataset, PoisonReport]:
    """Inject one trigger into each selected sequence and relabel (poison-label) or enhance (clean-label).

    Sequences whose injection fails with a data error stay clean and unflagged;
    the reason is recorded in the report. With ``policy.enhance`` and no
    ``surrogate`` given, one is trained on ``dataset`` first.
    """
    ik_cfg = ik_cfg or IkConfig()
    chosen = _select_indices(dataset, policy)
    model = None
    if policy.enhance and chosen:
        model = surrogate or train_surrogate(dataset, max(dataset.labels) + 1)
    jobs = [
        _Job(
            i, dataset.sequences[i], policy.trigger, sequence_seed(policy.master_seed, i), ik_cfg,
            model, policy.target_class, policy.epsilon, policy.pgd_steps,
        )
        for i in chosen
    ]
    results = parallel_map(_run_job, jobs, workers)
    changes: dict[int, SkeletonSequence] = {}
    manifest = list(dataset.manifest)
    report = PoisonReport(policy.mode, policy.trigger.name, policy.ratio, policy.target_class, len(chosen))
    counts: Counter = Counter()
    for idx, positions, row, warns in sorted(results, key=lambda r: r[0]):
        rec = manifest[idx]
        report.warnings.extend(f"{rec.id}: {w}" for w in warns)
        if positions is None:
            continue
        label = policy.target_class if policy.mode == POISON_LABEL else rec.label
        counts[rec.label] += 1
        changes[idx] = SkeletonSequence(positions, label, dataset.sequences[idx].meta)
        manifest[idx] = replace(rec, label=label, poisoned=True, trigger=policy.trigger.name)
        report.poisoned_ids.append(rec.id)
        report.instances[rec.id] = row
    report.class_counts = dict(counts)
    return dataset.with_changes(changes, manifest), report
