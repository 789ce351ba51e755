"""Split, oversample and serialize datasets.

Text datasets are JSON lines, tabular datasets CSV. Every file gets a
sibling ``<name>.manifest.json`` with row counts, the layout descriptor
(tabular only) and the run config digest. Writes go through a temporary
file and an atomic rename.
"""

from __future__ import annotations

import csv
import enum
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np


class EmitError(RuntimeError):
    pass


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


class DatasetKind(str, enum.Enum):
    TEXT_JSONL = "text_jsonl"
    TABULAR_CSV = "tabular_csv"


@dataclass(frozen=True)
class DatasetRecord:
    stay_id: str
    label: int
    split: Split
    text: str | None = None
    features: tuple[float, ...] | None = None
    layout_id: str | None = None
    # unknown keys read from a file; kept and re-written, ignored otherwise
    extra: dict[str, Any] = field(default_factory=dict, compare=False)


def split_cohort(stay_ids: Sequence[str], labels: Sequence[int], test_fraction: float = 0.2, seed: int = 0) -> tuple[list[str], list[str]]:
    """Stratified train/test partition.

    Per-class test counts are allotted by largest remainder so the total is
    ``round(test_fraction * N)`` and every class is within one record of
    its exact share. Both returned lists keep the input order.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    labels = np.asarray(labels, dtype=int)
    if len(stay_ids) != len(labels):
        raise ValueError("stay_ids and labels differ in length")
    classes = sorted(set(labels.tolist()))
    members = {c: np.flatnonzero(labels == c) for c in classes}
    for c, idx in members.items():
        if len(idx) < 2:
            raise EmitError(f"class {c} has {len(idx)} member(s); stratified split needs at least 2")

    exact = {c: test_fraction * len(members[c]) for c in classes}
    take = {c: int(np.floor(exact[c])) for c in classes}
    short = int(round(test_fraction * len(labels))) - sum(take.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - take[c]), c))[: max(short, 0)]:
        take[c] += 1
    for c in classes:
        take[c] = min(max(take[c], 1), len(members[c]) - 1)

    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for c in classes:
        test_idx.update(rng.permutation(members[c])[: take[c]].tolist())
    train = [sid for i, sid in enumerate(stay_ids) if i not in test_idx]
    test = [sid for i, sid in enumerate(stay_ids) if i in test_idx]
    return train, test


def oversample(records: Sequence[DatasetRecord], seed: int = 0) -> list[DatasetRecord]:
    """Duplicate minority-class records at random until both classes are equal."""
    labels = np.array([r.label for r in records], dtype=int)
    counts = {c: int((labels == c).sum()) for c in (0, 1)}
    if min(counts.values()) == 0:
        raise EmitError("oversampling needs both classes present")
    minority = min(counts, key=lambda c: (counts[c], c))
    deficit = max(counts.values()) - counts[minority]
    out = list(records)
    if deficit:
        rng = np.random.default_rng(seed)
        picks = rng.choice(np.flatnonzero(labels == minority), size=deficit, replace=True)
        out.extend(records[i] for i in picks)
    return out


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException as exc:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        if isinstance(exc, OSError):
            raise EmitError(f"failed writing {path}: {exc}") from exc
        raise


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def _write_jsonl(fh, records: Sequence[DatasetRecord]) -> None:
    for r in records:
        if not r.text:
            raise EmitError(f"record {r.stay_id} has no text")
        obj = {"stay_id": r.stay_id, "label": int(r.label), "text": r.text, "split": Split(r.split).value}
        for k, v in r.extra.items():
            obj.setdefault(k, v)
        fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _write_csv(fh, records: Sequence[DatasetRecord], slot_names: Sequence[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["stay_id", "label", "split", *slot_names])
    for r in records:
        if r.features is None or len(r.features) != len(slot_names):
            raise EmitError(f"record {r.stay_id} features do not match the layout")
        writer.writerow([r.stay_id, int(r.label), Split(r.split).value, *(repr(float(v)) for v in r.features)])


def write_dataset(
    records: Sequence[DatasetRecord],
    path: str | Path,
    kind: DatasetKind | str,
    *,
    config_digest: str = "",
    layout: dict | None = None,
) -> dict:
    """Write ``records`` and their manifest; returns the manifest.

    TABULAR_CSV needs ``layout`` (a layout descriptor with ``slot_names``
    or the full descriptor from :class:`FeatureLayout`).
    """
    kind = DatasetKind(kind)
    path = Path(path)
    if not records:
        raise EmitError(f"refusing to write an empty dataset to {path}")
    if kind is DatasetKind.TEXT_JSONL:
        _atomic_write(path, lambda fh: _write_jsonl(fh, records))
        layout_id = None
    else:
        if layout is None:
            raise EmitError("tabular export needs a layout descriptor")
        slot_names = layout["slot_names"]
        layout_id = layout.get("layout_id")
        _atomic_write(path, lambda fh: _write_csv(fh, records, slot_names))

    counts = {
        "total": len(records),
        "train": sum(Split(r.split) is Split.TRAIN for r in records),
        "test": sum(Split(r.split) is Split.TEST for r in records),
        "positive": sum(int(r.label) == 1 for r in records),
        "distinct_stays": len({r.stay_id for r in records}),
    }
    manifest = {
        "file": path.name,
        "kind": kind.value,
        "counts": counts,
        "layout_id": layout_id,
        "layout": layout,
        "config_digest": config_digest,
    }
    body = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    _atomic_write(manifest_path(path), lambda fh: fh.write(body))
    return manifest


def _read_jsonl(path: Path) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = DatasetRecord(
                    stay_id=str(obj.pop("stay_id")),
                    label=_label(obj.pop("label")),
                    text=obj.pop("text"),
                    split=Split(obj.pop("split")),
                    extra=obj,
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError, AttributeError) as exc:
                raise EmitError(f"{path}:{lineno}: malformed record ({exc})") from exc
            out.append(rec)
    return out


def _label(value: Any) -> int:
    if value not in (0, 1) or isinstance(value, bool):
        raise ValueError(f"label {value!r} not in {{0, 1}}")
    return int(value)


def _read_csv(path: Path) -> list[DatasetRecord]:
    layout_id = None
    mpath = manifest_path(path)
    if mpath.is_file():
        with open(mpath, encoding="utf-8") as fh:
            layout_id = json.load(fh).get("layout_id")
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["stay_id", "label", "split"]:
            raise EmitError(f"{path}:1: header must start with stay_id,label,split")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise EmitError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                out.append(
                    DatasetRecord(
                        stay_id=row[0],
                        label=_label(int(row[1])),
                        split=Split(row[2]),
                        features=tuple(float(v) for v in row[3:]),
                        layout_id=layout_id,
                    )
                )
            except ValueError as exc:
                raise EmitError(f"{path}:{lineno}: malformed row ({exc})") from exc
    return out


def read_dataset(path: str | Path, kind: DatasetKind | str) -> list[DatasetRecord]:
    """Inverse of :func:`write_dataset`."""
    path = Path(path)
    if DatasetKind(kind) is DatasetKind.TEXT_JSONL:
        return _read_jsonl(path)
    return _read_csv(path)
