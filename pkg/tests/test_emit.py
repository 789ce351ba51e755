from __future__ import annotations

import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrtext.emit import (
    DatasetKind,
    DatasetRecord,
    EmitError,
    Split,
    manifest_path,
    oversample,
    read_dataset,
    split_cohort,
    write_dataset,
)


def _records(n_neg, n_pos, split=Split.TRAIN):
    labels = [0] * n_neg + [1] * n_pos
    return [DatasetRecord(str(i), y, split, text=f"patient {i}") for i, y in enumerate(labels)]


def _layout(width):
    return {"slot_names": [f"f{j}" for j in range(width)], "layout_id": "abc123"}


def test_split_arithmetic():
    ids = [str(i) for i in range(100)]
    labels = [1] * 20 + [0] * 80
    train, test = split_cohort(ids, labels, 0.2, seed=0)
    assert len(test) == 20
    assert sum(labels[int(i)] for i in test) == 4
    assert sorted(train + test, key=int) == ids
    assert split_cohort(ids, labels, 0.2, seed=0) == (train, test)
    assert split_cohort(ids, labels, 0.2, seed=1) != (train, test)


def test_split_needs_two_per_class():
    with pytest.raises(EmitError):
        split_cohort(["a", "b", "c"], [0, 0, 1], 0.3)
    with pytest.raises(ValueError):
        split_cohort(["a", "b"], [0, 1], 1.0)


def test_split_thousand_random_cohorts():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n = int(rng.integers(4, 400))
        labels = (rng.random(n) < rng.uniform(0.05, 0.5)).astype(int)
        if min(labels.sum(), n - labels.sum()) < 2:
            continue
        frac = float(rng.uniform(0.05, 0.5))
        ids = [str(i) for i in range(n)]
        train, test = split_cohort(ids, labels, frac, seed=trial)
        assert abs(len(test) - round(frac * n)) <= 1
        test_pos = sum(labels[int(i)] for i in test)
        for c, count in ((1, test_pos), (0, len(test) - test_pos)):
            assert abs(count - frac * (labels == c).sum()) <= 1 + 1e-9
        assert set(train).isdisjoint(test) and len(train) + len(test) == n


def test_oversample_parity():
    recs = _records(8, 2)
    out = oversample(recs, seed=3)
    assert len(out) == 16
    assert Counter(r.label for r in out) == {0: 8, 1: 8}
    assert out[:10] == recs
    assert {r.stay_id for r in out} == {r.stay_id for r in recs}
    assert oversample(recs, seed=3) == out
    balanced = _records(3, 3)
    assert oversample(balanced, 0) == balanced
    with pytest.raises(EmitError):
        oversample(_records(3, 0), 0)


def test_jsonl_format(tmp_path):
    path = tmp_path / "t.jsonl"
    recs = _records(2, 1)
    manifest = write_dataset(recs, path, DatasetKind.TEXT_JSONL, config_digest="ff")
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert all(list(json.loads(line)) == ["stay_id", "label", "text", "split"] for line in lines)
    assert manifest["counts"] == {"total": 3, "train": 3, "test": 0, "positive": 1, "distinct_stays": 3}
    assert json.loads(manifest_path(path).read_text())["config_digest"] == "ff"


def test_empty_dataset_refused(tmp_path):
    with pytest.raises(EmitError):
        write_dataset([], tmp_path / "x.jsonl", "text_jsonl")
    assert not list(tmp_path.iterdir())


def test_failed_write_leaves_no_partial_file(tmp_path):
    recs = [DatasetRecord("1", 0, Split.TRAIN, text="ok"), DatasetRecord("2", 1, Split.TRAIN, text="")]
    with pytest.raises(EmitError):
        write_dataset(recs, tmp_path / "x.jsonl", "text_jsonl")
    assert not list(tmp_path.iterdir())


def test_truncated_final_line_names_line(tmp_path):
    path = tmp_path / "t.jsonl"
    write_dataset(_records(2, 2), path, "text_jsonl")
    text = path.read_text()
    path.write_text(text[: len(text) - 10])
    with pytest.raises(EmitError, match=":4:"):
        read_dataset(path, "text_jsonl")


def test_csv_bad_row_names_line(tmp_path):
    path = tmp_path / "t.csv"
    recs = [DatasetRecord(str(i), i % 2, Split.TEST, features=(1.0, 2.0)) for i in range(3)]
    write_dataset(recs, path, "tabular_csv", layout=_layout(2))
    path.write_text(path.read_text() + "9,1,test,1.0\n")
    with pytest.raises(EmitError, match=":5:"):
        read_dataset(path, "tabular_csv")


def test_unknown_key_preserved(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"stay_id": "7", "label": 1, "text": "x", "split": "test", "source": "v2"}\n')
    (rec,) = read_dataset(path, "text_jsonl")
    assert rec == DatasetRecord("7", 1, Split.TEST, text="x")
    assert rec.extra == {"source": "v2"}


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=40)


@st.composite
def datasets(draw, kind):
    n = draw(st.integers(1, 12))
    width = draw(st.integers(0, 6))
    recs = []
    for i in range(n):
        recs.append(
            DatasetRecord(
                stay_id=draw(st.from_regex(r"[0-9A-Za-z_-]{1,10}", fullmatch=True)),
                label=draw(st.integers(0, 1)),
                split=draw(st.sampled_from(list(Split))),
                text=draw(text) if kind is DatasetKind.TEXT_JSONL else None,
                features=tuple(draw(st.lists(finite, min_size=width, max_size=width))) if kind is DatasetKind.TABULAR_CSV else None,
                layout_id="abc123" if kind is DatasetKind.TABULAR_CSV else None,
            )
        )
    return recs, width


def roundtrip(recs, width, kind, path):
    layout = _layout(width) if kind is DatasetKind.TABULAR_CSV else None
    write_dataset(recs, path, kind, config_digest="d", layout=layout)
    return read_dataset(path, kind)


@pytest.mark.parametrize("kind", list(DatasetKind))
def test_roundtrip_property(kind, tmp_path_factory):
    @settings(max_examples=100, deadline=None)
    @given(datasets(kind))
    def check(data):
        recs, width = data
        path = tmp_path_factory.mktemp("rt") / ("d.jsonl" if kind is DatasetKind.TEXT_JSONL else "d.csv")
        assert roundtrip(recs, width, kind, path) == recs

    check()


def test_roundtrip_synthetic_export(tmp_path):
    rng = np.random.default_rng(0)
    recs = [
        DatasetRecord(str(30_000_000 + i), int(rng.integers(2)), Split.TRAIN if i < 400 else Split.TEST, features=tuple(rng.normal(size=20)), layout_id="abc123")
        for i in range(500)
    ]
    back = roundtrip(recs, 20, DatasetKind.TABULAR_CSV, tmp_path / "t.csv")
    for a, b in zip(recs, back, strict=True):
        for field in ("stay_id", "label", "split", "features", "layout_id"):
            assert getattr(a, field) == getattr(b, field)
