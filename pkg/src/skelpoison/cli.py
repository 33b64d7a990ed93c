"""Command-line interface.

Every command reads and writes dataset directories (``manifest.tsv`` plus one
``.skseq`` file per sequence) and prints its report to stdout as TSV. Option
values come from flags, then from a ``--config`` key=value file, then from
built-in defaults. Exit status: 0 success, 1 bad data or I/O, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .enhance import SurrogateModel, pgd_enhance, train_surrogate
from .errors import DataError, SkelPoisonError
from .ik import IkConfig
from .io import load_any, parse_ntu_skeleton, save_dataset
from .poison import PoisonPolicy, build_poisoned_dataset, parallel_map
from .skeleton import Dataset, validate_sequence
from .stealth import DEFAULT_BINS, METRIC_CHAINS, stealth_report
from .synth import synth_dataset
from .trigger import UnknownTriggerError, get_trigger, implant, sequence_seed


class UsageError(SkelPoisonError):
    pass


DEFAULTS = {
    "seed": 0,
    "threads": os.cpu_count() or 1,
    "n": 100,
    "frames": 60,
    "classes": 3,
    "trigger": "nodding",
    "ratio": 0.01,
    "mode": "poison-label",
    "target": 0,
    "enhance": False,
    "epsilon": 0.05,
    "steps": 5,
    "epochs": 200,
    "bins": DEFAULT_BINS,
    "lr": IkConfig.learning_rate,
    "tol": IkConfig.tolerance,
    "max_iter": IkConfig.max_iterations,
}
TYPES = {
    "seed": int, "threads": int, "n": int, "frames": int, "classes": int, "trigger": str,
    "ratio": float, "mode": str, "target": int, "enhance": lambda v: str(v).lower() in ("1", "true", "yes"),
    "epsilon": float, "steps": int, "epochs": int, "bins": int, "lr": float, "tol": float, "max_iter": int,
}
TRIGGER_KEYS = ("phi_min", "phi_max", "t_min", "t_max", "apex_fraction")


def read_config(path) -> dict[str, str]:
    out = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{ln}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


class Options:
    """Flag values with config-file and default fallbacks."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = read_config(args.config) if getattr(args, "config", None) else {}

    def __getattr__(self, name):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.config:
            try:
                return TYPES[name](self.config[name]) if name in TYPES else self.config[name]
            except ValueError:
                raise UsageError(f"config value for {name} is invalid: {self.config[name]!r}") from None
        return DEFAULTS.get(name)

    def trigger(self):
        try:
            spec = get_trigger(self.__getattr__("trigger"))
        except UnknownTriggerError as exc:
            raise UsageError(str(exc)) from None
        kv = {k: self.config[k] for k in TRIGGER_KEYS if k in self.config}
        try:
            return spec.with_overrides(kv) if kv else spec
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def ik(self) -> IkConfig:
        try:
            return IkConfig(learning_rate=self.lr, max_iterations=self.max_iter, tolerance=self.tol)
        except ValueError as exc:
            raise UsageError(str(exc)) from None


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") or not text else text + "\n")


def _save(ds: Dataset, o: Options, changed) -> None:
    """Save ``ds``; sequences not in ``changed`` are copied verbatim from a directory input."""
    src = Path(o.input)
    changed = set(changed)
    keep = [r.id for r in ds.manifest if r.id not in changed] if src.is_dir() else []
    save_dataset(ds, o.out, src if keep else None, keep)


def cmd_synth(o: Options) -> int:
    if o.n < 1 or o.frames < 1 or o.classes < 1:
        raise UsageError("--n, --frames and --classes must be positive")
    ds = synth_dataset(o.n, o.frames, o.classes, o.seed)
    save_dataset(ds, o.out)
    _emit(f"sequences\t{len(ds)}\nframes\t{o.frames}\nclasses\t{o.classes}\nseed\t{o.seed}")
    return 0


def _inject_job(job):
    seq, spec, seed, cfg = job
    try:
        res, inst = implant(seq, spec, seed, cfg)
    except DataError as exc:
        return None, None, [f"skipped: {exc}"]
    return res.sequence.positions, inst.to_row(), res.warnings


def cmd_inject(o: Options) -> int:
    ds = load_any(o.input)
    spec = o.trigger()
    cfg = o.ik()
    jobs = [(s, spec, sequence_seed(o.seed, i), cfg) for i, s in enumerate(ds.sequences)]
    results = parallel_map(_inject_job, jobs, o.threads)
    seqs, manifest = list(ds.sequences), list(ds.manifest)
    rows = ["id\ttrigger\tphi\ttau_s\ttau_e\tseed"]
    for i, (pos, row, warns) in enumerate(results):
        rec = manifest[i]
        for w in warns:
            rows.append(f"warning\t{rec.id}: {w}")
        if pos is None:
            continue
        seqs[i] = seqs[i].with_positions(pos)
        manifest[i] = replace(rec, poisoned=True, trigger=spec.name)
        rows.append(f"{rec.id}\t{row}")
    changed = [r.id for r, old in zip(manifest, ds.manifest) if r is not old]
    _save(Dataset(seqs, manifest), o, changed)
    _emit("\n".join(rows))
    return 0


def cmd_poison(o: Options) -> int:
    # only the selected sequences are parsed; the rest are copied verbatim
    ds = load_any(o.input, lazy=True)
    try:
        policy = PoisonPolicy(o.mode, o.target, o.ratio, o.trigger(), o.seed, bool(o.enhance), o.epsilon, o.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = SurrogateModel.load(o.model) if o.model else None
    out, report = build_poisoned_dataset(ds, policy, o.ik(), o.threads, model)
    _save(out, o, report.poisoned_ids)
    _emit(report.to_tsv())
    return 0


def _enhance_job(job):
    model, seq, target, eps, steps = job
    return pgd_enhance(model, seq, target, eps, steps).positions


def cmd_enhance(o: Options) -> int:
    """PGD-enhance every poisoned sequence of the target class."""
    ds = load_any(o.input)
    if o.model:
        model = SurrogateModel.load(o.model)
    else:
        model = train_surrogate(ds, max(ds.labels) + 1, epochs=o.epochs, seed=o.seed)
    if o.save_model:
        model.save(o.save_model)
    if o.epsilon < 0 or o.steps < 0:
        raise UsageError("--epsilon and --steps must be non-negative")
    picks = [i for i, r in enumerate(ds.manifest) if r.poisoned and r.label == o.target]
    jobs = [(model, ds.sequences[i], o.target, o.epsilon, o.steps) for i in picks]
    results = parallel_map(_enhance_job, jobs, o.threads)
    seqs = list(ds.sequences)
    for i, pos in zip(picks, results):
        seqs[i] = seqs[i].with_positions(pos)
    _save(Dataset(seqs, ds.manifest), o, [ds.manifest[i].id for i in picks])
    _emit(f"enhanced\t{len(picks)}\nepsilon\t{o.epsilon!r}\nsteps\t{o.steps}")
    return 0


def cmd_metrics(o: Options) -> int:
    named = o.args.trigger or "trigger" in o.config
    names = [o.trigger().name] if named else []
    clean = load_any(o.input)
    poisoned = load_any(o.poisoned)
    if not named:
        names = sorted({r.trigger for r in poisoned.manifest if r.trigger}) or list(METRIC_CHAINS)
    ratio = sum(r.poisoned for r in poisoned.manifest) / len(poisoned)
    rows = ["trigger\tratio\tkld_nats\temd_rad\tn_clean_angles\tn_poisoned_angles"]
    hist = []
    for name in names:
        rep = stealth_report(clean, poisoned, name, o.bins, ratio)
        rows.append(rep.to_row())
        hist += [f"{name}\t{r}" for r in rep.histogram_rows()]
    if o.hist:
        Path(o.hist).write_text("trigger\tlo\thi\tclean\tpoisoned\n" + "\n".join(hist) + "\n", encoding="utf-8")
    _emit("\n".join(rows))
    return 0


def cmd_validate(o: Options) -> int:
    ds = load_any(o.input)
    rows = []
    for rec, seq in zip(ds.manifest, ds.sequences):
        rows += [f"{rec.id}\t{f}" for f in validate_sequence(seq)]
    rows.append(f"checked\t{len(ds)}\tfindings\t{len(rows)}")
    _emit("\n".join(rows))
    return 1 if len(rows) > 1 else 0


def cmd_import_ntu(o: Options) -> int:
    seqs = []
    for p in o.files:
        seqs.extend(parse_ntu_skeleton(p))
    if not seqs:
        raise DataError("no skeleton bodies found")
    ds = Dataset.from_sequences(seqs)
    save_dataset(ds, o.out)
    _emit(f"sequences\t{len(ds)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    common.add_argument("--config", help="key=value file; flags take precedence")
    ik = argparse.ArgumentParser(add_help=False)
    ik.add_argument("--lr", type=float, help="IK learning rate")
    ik.add_argument("--tol", type=float, help="IK tolerance in metres")
    ik.add_argument("--max-iter", dest="max_iter", type=int, help="IK iteration cap")

    p = argparse.ArgumentParser(prog="skelpoison", description="Physical-trigger backdoor poisoning for skeleton data.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--n", type=int, help="number of sequences")
    s.add_argument("--frames", type=int, help="frames per sequence")
    s.add_argument("--classes", type=int, help="number of classes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inject", parents=[common, ik], help="implant a trigger into every sequence")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trigger")
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("poison", parents=[common, ik], help="build a poisoned training set")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trigger")
    s.add_argument("--ratio", type=float)
    s.add_argument("--mode", choices=["poison-label", "clean-label", "poison_label", "clean_label"])
    s.add_argument("--target", type=int, help="target class")
    s.add_argument("--enhance", action="store_true", default=None, help="PGD-enhance (clean-label only)")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--model", help="surrogate model file (trained on the input if omitted)")
    s.set_defaults(func=cmd_poison)

    s = sub.add_parser("enhance", parents=[common], help="PGD-enhance poisoned target-class sequences")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--epochs", type=int, help="surrogate training epochs")
    s.add_argument("--model", help="surrogate model file to use")
    s.add_argument("--save-model", dest="save_model", help="write the surrogate here")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("metrics", parents=[common], help="KLD/EMD of bone-angle distributions")
    s.add_argument("--in", dest="input", required=True, help="clean dataset")
    s.add_argument("--poisoned", required=True, help="poisoned dataset")
    s.add_argument("--trigger")
    s.add_argument("--bins", type=int)
    s.add_argument("--hist", help="write per-bin masses here")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("validate", parents=[common], help="report structural problems")
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("import-ntu", parents=[common], help="convert NTU .skeleton files to a dataset")
    s.add_argument("files", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_import_ntu)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        opts = Options(args)
        if opts.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(opts)
    except UsageError as exc:
        parser.exit(2, f"skelpoison: error: {exc}\n")
    except (DataError, OSError, ValueError) as exc:
        parser.exit(1, f"skelpoison: error: {exc}\n")


if __name__ == "__main__":
    raise SystemExit(main())
