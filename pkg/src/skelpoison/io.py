"""Reading and writing skeleton files.

Canonical sequence file::

    SKSEQ 1 joints=<J> frames=<T> label=<int> [meta.<key>=<value> ...]
    <x> <y> <z>            # T*J lines, frame-major, 17 significant digits

Meta values are percent-encoded so they stay single tokens. A dataset directory
holds one ``.skseq`` file per sequence and ``manifest.tsv`` with one row per
sequence: ``id, relative path, label, poisoned (0/1), trigger name or -``.
"""
from __future__ import annotations

import os
import re
import shutil
from pathlib import Path
from urllib.parse import quote, unquote

import numpy as np

from .errors import ParseError, UnsupportedJointCountError
from .skeleton import JOINT_COUNT, Dataset, LazySequences, ManifestRecord, SkeletonSequence

MAGIC = "SKSEQ"
VERSION = "1"
MANIFEST = "manifest.tsv"


def dumps_canonical(seq: SkeletonSequence) -> str:
    T, J, _ = seq.positions.shape
    head = [MAGIC, VERSION, f"joints={J}", f"frames={T}", f"label={seq.label}"]
    head += [f"meta.{quote(k, safe='')}={quote(v, safe='')}" for k, v in sorted(seq.meta.items())]
    flat = seq.positions.reshape(-1).tolist()
    return " ".join(head) + "\n" + ("%.17g %.17g %.17g\n" * (T * J)) % tuple(flat)


def loads_canonical(text: str, path: str | None = None) -> SkeletonSequence:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1, path)
    tokens = lines[0].split(" ")
    if tokens[:2] != [MAGIC, VERSION]:
        raise ParseError(f"expected header starting '{MAGIC} {VERSION}'", 1, path)
    fields: dict[str, str] = {}
    meta: dict[str, str] = {}
    for tok in tokens[2:]:
        key, eq, value = tok.partition("=")
        if not eq:
            raise ParseError(f"malformed header field {tok!r}", 1, path)
        if key.startswith("meta."):
            meta[unquote(key[5:])] = unquote(value)
        else:
            fields[key] = value
    for name in ("joints", "frames", "label"):
        if name not in fields:
            raise ParseError(f"missing {name}", 1, path)
    try:
        J, T, label = int(fields["joints"]), int(fields["frames"]), int(fields["label"])
    except ValueError:
        raise ParseError("joints, frames and label must be integers", 1, path) from None
    if J < 1 or T < 1:
        raise ParseError("joints and frames must be positive", 1, path)
    need = T * J
    body = lines[1:]
    if len(body) < need:
        raise ParseError(
            f"truncated: header declares {T} frames of {J} joints, file ends after {len(body)} coordinate lines",
            len(lines) + 1,
            path,
        )
    if len(body) > need:
        raise ParseError("unexpected data after the last frame", need + 2, path)
    if all(line.count(" ") == 2 for line in body):
        try:
            flat = np.array(list(map(float, " ".join(body).split(" "))))
        except ValueError:
            flat = None
        if flat is not None and flat.size == 3 * need:
            return SkeletonSequence(flat.reshape(T, J, 3), label, meta)
    # slow path, only to locate the offending line
    out = np.empty((need, 3))
    for i, line in enumerate(body):
        parts = line.split(" ")
        if len(parts) != 3:
            raise ParseError(f"expected 3 coordinates, got {len(parts)}", i + 2, path)
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"bad coordinate in {line!r}", i + 2, path) from None
    return SkeletonSequence(out.reshape(T, J, 3), label, meta)


def save_canonical(seq: SkeletonSequence, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(seq))


def load_canonical(path) -> SkeletonSequence:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_canonical(fh.read(), str(path))


_ACTION = re.compile(r"A(\d{3})")
_SUBJECT = re.compile(r"P(\d{3})")


def parse_ntu_skeleton(path) -> list[SkeletonSequence]:
    """One sequence per tracked body in an NTU RGB+D ``.skeleton`` file.

    Only the x, y, z camera-space fields of each joint line are kept. Bodies are
    grouped by their tracking id; a body tracked in only some frames yields a
    shorter sequence. The label is the zero-based action code from the file
    name (``A001`` is class 0), or -1 when the name carries none.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def next_line() -> tuple[str, int]:
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ParseError("unexpected end of file", pos + 1, str(path))
        pos += 1
        return lines[pos - 1].strip(), pos

    def read_int(what: str) -> int:
        text, ln = next_line()
        try:
            n = int(text)
        except ValueError:
            raise ParseError(f"expected {what}, got {text!r}", ln, str(path)) from None
        if n < 0:
            raise ParseError(f"negative {what}", ln, str(path))
        return n

    frames = read_int("frame count")
    bodies: dict[str, list[np.ndarray]] = {}
    for _ in range(frames):
        for _ in range(read_int("body count")):
            info, ln = next_line()
            parts = info.split()
            if len(parts) != 10:
                raise ParseError(f"body info line needs 10 values, got {len(parts)}", ln, str(path))
            body_id = parts[0]
            njoints = read_int("joint count")
            if njoints != JOINT_COUNT:
                raise UnsupportedJointCountError(
                    f"body declares {njoints} joints, only {JOINT_COUNT} are supported", pos, str(path)
                )
            frame = np.empty((njoints, 3))
            for j in range(njoints):
                text, ln = next_line()
                vals = text.split()
                if len(vals) != 12:
                    raise ParseError(f"joint line needs 12 values, got {len(vals)}", ln, str(path))
                try:
                    nums = [float(v) for v in vals]
                except ValueError:
                    raise ParseError(f"bad number in joint line {text!r}", ln, str(path)) from None
                frame[j] = nums[:3]
            bodies.setdefault(body_id, []).append(frame)
    m = _ACTION.search(path.stem)
    label = int(m.group(1)) - 1 if m else -1
    subject = _SUBJECT.search(path.stem)
    out = []
    for body_id, seq_frames in bodies.items():
        meta = {"source": path.name, "body": body_id}
        if subject:
            meta["subject"] = subject.group(1)
        out.append(SkeletonSequence(np.stack(seq_frames), label, meta))
    return out


def manifest_row(rec: ManifestRecord) -> str:
    return f"{rec.id}\t{rec.path}\t{rec.label}\t{int(rec.poisoned)}\t{rec.trigger or '-'}"


def parse_manifest(text: str, path: str | None = None) -> list[ManifestRecord]:
    out = []
    for ln, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(f"manifest row needs 5 tab-separated fields, got {len(parts)}", ln, path)
        sid, rel, label, flag, trig = parts
        if flag not in ("0", "1"):
            raise ParseError(f"poisoned flag must be 0 or 1, got {flag!r}", ln, path)
        try:
            lab = int(label)
        except ValueError:
            raise ParseError(f"bad label {label!r}", ln, path) from None
        trigger = None if trig == "-" else trig
        if (flag == "1") != (trigger is not None):
            raise ParseError("poisoned flag must be 1 exactly when a trigger is named", ln, path)
        out.append(ManifestRecord(sid, rel, lab, flag == "1", trigger))
    return out


def save_dataset(ds: Dataset, directory, copy_from=None, unchanged=()) -> None:
    """Write ``ds`` as a dataset directory.

    Records whose ids are in ``unchanged`` are copied byte-for-byte from the
    dataset directory ``copy_from`` instead of being re-formatted.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    unchanged = set(unchanged) if copy_from is not None else set()
    for i, rec in enumerate(ds.manifest):
        dest = directory / rec.path
        if rec.id in unchanged:
            src = Path(copy_from) / rec.path
            if not (dest.exists() and os.path.samefile(src, dest)):
                shutil.copyfile(src, dest)
        else:
            save_canonical(ds.sequences[i], dest)
    text = "".join(manifest_row(r) + "\n" for r in ds.manifest)
    with open(directory / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load_dataset(directory, lazy: bool = False) -> Dataset:
    """Read a dataset directory.

    With ``lazy`` only the manifest is read up front; each sequence file is
    parsed (and checked against its manifest label) on first access.
    """
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"{mpath}: no manifest")
    with open(mpath, encoding="utf-8") as fh:
        records = parse_manifest(fh.read(), str(mpath))

    def load(i: int) -> SkeletonSequence:
        rec = records[i]
        seq = load_canonical(directory / rec.path)
        if seq.label != rec.label:
            raise ParseError(f"{rec.id}: file label {seq.label} disagrees with manifest label {rec.label}", None, str(mpath))
        return seq

    if lazy:
        return Dataset(LazySequences(len(records), load), records)
    return Dataset([load(i) for i in range(len(records))], records)


def load_any(path, lazy: bool = False) -> Dataset:
    """A dataset directory, a single canonical file, or a raw NTU ``.skeleton`` file."""
    path = Path(path)
    if path.is_dir():
        return load_dataset(path, lazy)
    if path.suffix == ".skeleton":
        return Dataset.from_sequences(parse_ntu_skeleton(path))
    return Dataset.from_sequences([load_canonical(path)])


__all__ = [
    "dumps_canonical",
    "loads_canonical",
    "save_canonical",
    "load_canonical",
    "parse_ntu_skeleton",
    "parse_manifest",
    "manifest_row",
    "save_dataset",
    "load_dataset",
    "load_any",
]
