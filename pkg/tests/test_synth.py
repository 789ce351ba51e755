from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrtext.ehr_model import validate_stay
from ehrtext.ingest import CohortConfig, build_cohort, load_tables
from ehrtext.synth import SynthConfig, generate


def test_ten_patients_line_counts(tmp_path):
    ledger = generate(SynthConfig(seed=1, n_patients=10), tmp_path)
    assert ledger["row_counts"]["patients.csv"] == 10
    for fname, rows in ledger["row_counts"].items():
        with open(tmp_path / fname, encoding="utf-8") as fh:
            assert sum(1 for _ in fh) == rows + 1  # header
    assert json.loads((tmp_path / "ledger.json").read_text()) == ledger


def test_same_seed_byte_identical(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    generate(SynthConfig(seed=9, n_patients=40), a)
    generate(SynthConfig(seed=9, n_patients=40), b)
    generate(SynthConfig(seed=10, n_patients=40), c)
    names = sorted(p.name for p in a.iterdir())
    assert all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    assert (a / "chartevents.csv").read_bytes() != (c / "chartevents.csv").read_bytes()


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_patients=0),
        dict(mortality_prevalence=0.0),
        dict(mortality_prevalence=1.0),
        dict(signal_strength=1.5),
        dict(n_signal_items=99),
        dict(diagnoses_per_stay=0.5),
        dict(n_chart_items=0),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_any_seed_ingests_cleanly(tmp_path_factory, seed):
    out = tmp_path_factory.mktemp("s")
    ledger = generate(SynthConfig(seed=seed, n_patients=40), out)
    raw = load_tables(out)
    assert all(r["skipped"] == 0 for r in raw.report.values())
    cohort, vocab = build_cohort(raw, CohortConfig())
    assert len(cohort) == ledger["planted_cohort_size"]
    assert all(validate_stay(s, vocab) == [] for s in cohort)


def test_prevalence_within_three_sigma(tmp_path):
    p, n = 0.15, 3000
    ledger = generate(SynthConfig(seed=2, n_patients=n, mortality_prevalence=p, events_per_stay=5), tmp_path)
    labels = np.array([s["label"] for s in ledger["stays"].values() if s["first"]])
    assert abs(labels.mean() - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_signal_items_shift_with_label(tmp_path):
    ledger = generate(SynthConfig(seed=4, n_patients=300, signal_strength=1.0), tmp_path)
    raw = load_tables(tmp_path)
    ev = raw.chart_lab_events
    item = ledger["signal_items"][0]
    labels = {sid: s["label"] for sid, s in ledger["stays"].items()}
    sub = ev[ev["item_id"] == item]
    lab = sub["stay_id"].map(labels)
    logs = np.log(sub["value"].to_numpy())
    assert logs[lab.to_numpy() == 1].mean() - logs[lab.to_numpy() == 0].mean() == pytest.approx(0.5, abs=0.1)
