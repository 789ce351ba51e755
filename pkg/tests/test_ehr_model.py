from __future__ import annotations

import dataclasses

import pytest
from conftest import make_stay, make_vocab

from ehrtext.ehr_model import (
    OTHER,
    ClinicalEvent,
    DemographicVocab,
    DiagnosisCode,
    FeatureVocabulary,
    Group,
    ICDVersion,
    natural_key,
    validate_stay,
)


def test_well_formed_stay_has_empty_report():
    vocab = make_vocab()
    stay = make_stay([ClinicalEvent(Group.CHART_LAB, "220045", 10, 72.0), ClinicalEvent(Group.PROC, "224001", 30)])
    assert validate_stay(stay, vocab) == []


def test_negative_timestamp_is_one_violation():
    stay = make_stay([ClinicalEvent(Group.CHART_LAB, "220045", -5, 72.0)])
    report = validate_stay(stay, make_vocab())
    assert [v.kind for v in report] == ["timestamp"]


def test_unknown_item_against_hand_built_vocab():
    vocab = make_vocab(chart=("1", "2", "3"), meds=(), proc=(), out=())
    events = [ClinicalEvent(Group.CHART_LAB, i, 0, 1.0) for i in ("1", "999999", "3")]
    report = validate_stay(make_stay(events), vocab)
    seen = {e.item_id for e in events}
    expected = seen - set(vocab.dynamic_items[Group.CHART_LAB])
    assert [v.kind for v in report] == ["unknown_item"] * len(expected)
    assert "999999" in report[0].detail


@pytest.mark.parametrize(
    "change, kind",
    [
        (dict(label=2), "label"),
        (dict(events=(ClinicalEvent(Group.PROC, "224001", 0, 3.0),)), "value"),
        (dict(events=(ClinicalEvent(Group.MEDS, "221001", 0, -1.0),)), "value"),
        (dict(events=(ClinicalEvent(Group.CHART_LAB, "220045", 0, float("nan")),)), "value"),
        (
            dict(events=(ClinicalEvent(Group.CHART_LAB, "220045", 9, 1.0), ClinicalEvent(Group.CHART_LAB, "220045", 3, 1.0))),
            "order",
        ),
    ],
)
def test_invariant_violations(change, kind):
    stay = dataclasses.replace(make_stay(), **change)
    assert kind in {v.kind for v in validate_stay(stay, make_vocab())}


def test_validate_is_pure():
    stay = make_stay([ClinicalEvent(Group.CHART_LAB, "x", -1, 1.0)])
    vocab = make_vocab()
    assert validate_stay(stay, vocab) == validate_stay(stay, vocab)


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        FeatureVocabulary(cond_codes=(DiagnosisCode("A"), DiagnosisCode("A")), dynamic_items={})
    with pytest.raises(ValueError):
        FeatureVocabulary(cond_codes=(), dynamic_items={Group.MEDS: ("1", "1")})


def test_vocab_indices_and_missing_groups():
    vocab = FeatureVocabulary(cond_codes=(DiagnosisCode("B"), DiagnosisCode("A")), dynamic_items={Group.MEDS: ("5", "4")})
    assert vocab.cond_index[DiagnosisCode("A")] == 1
    assert vocab.item_index[Group.MEDS] == {"5": 0, "4": 1}
    assert vocab.dynamic_items[Group.PROC] == ()
    assert vocab.n_dynamic == 2


def test_demographic_vocab_other_is_reserved():
    dv = DemographicVocab(genders=("F", "M", OTHER))
    assert dv.genders == ("F", "M", OTHER)
    assert dv.canonical("insurances", "Private") == OTHER
    assert dv.canonical("insurances", "Medicare") == "Medicare"


def test_diagnosis_key_and_natural_order():
    assert DiagnosisCode("I10", ICDVersion.ICD10).key == "ICD10:I10"
    assert sorted(["10", "9", "a", "100"], key=natural_key) == ["9", "10", "100", "a"]
