"""Render a stay as a short templated text document.

One sentence per feature group, always in the order DEMO, COND,
CHART_LAB, MEDS, PROC, OUTE. The DEMO sentence runs straight into the
COND sentence when both are present ("... covered by Other was
diagnosed with ..."); otherwise each sentence stands alone.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable

from .ehr_model import ALL_GROUPS, FeatureVocabulary, Group, ICUStayRecord
from .ingest import TimeBinnedSeries

EMPTY_LIST = "nothing reported"

GENDER_TEXT = {"M": "male", "F": "female"}

_THOUSANDTH = Decimal("0.001")


def format_value(x: float) -> str:
    """Three decimals, half-even rounding of the value's shortest decimal form."""
    if not math.isfinite(x):
        raise ValueError(f"cannot format non-finite value {x!r}")
    out = format(Decimal(repr(float(x))).quantize(_THOUSANDTH, rounding=ROUND_HALF_EVEN), "f")
    return "0.000" if out == "-0.000" else out


def _clean(text: str) -> str:
    # documents must never contain template braces
    return str(text).replace("{", "(").replace("}", ")")


def _label(key, lookup, stats: Counter | None) -> str:
    label = lookup(key)
    if label is None or not str(label).strip():
        if stats is not None:
            stats["missing_description"] += 1
        raw = key.code if hasattr(key, "code") else key
        return _clean(raw)
    return _clean(label)


def _list_body(entries: list[str]) -> str:
    return "; ".join(entries) if entries else EMPTY_LIST


def render_section(
    group: Group | str,
    stay: ICUStayRecord,
    series: TimeBinnedSeries | None,
    vocab: FeatureVocabulary,
    stats: Counter | None = None,
) -> str:
    """One group's sentence.

    The DEMO sentence carries no final period; :func:`render_document`
    adds one unless the COND sentence follows.
    """
    group = Group(group)
    if group is Group.DEMO:
        d = stay.demographics
        gender = GENDER_TEXT.get(d.gender, d.gender.lower())
        return _clean(f"The patient {d.ethnicity.lower()} {gender}, {d.age_years} years old, covered by {d.insurance}")

    if group is Group.COND:
        present = set(stay.diagnoses)
        ordered = [c for c in vocab.cond_codes if c in present]
        # codes outside the vocabulary still describe the patient
        ordered += [c for c in stay.diagnoses if c not in vocab.cond_index]
        body = _list_body([_label(c, vocab.code_label, stats) for c in ordered])
        return f"was diagnosed with {body}."

    if series is None:
        raise ValueError(f"{group.value} section needs a binned series")
    items = vocab.dynamic_items[group]
    grid = series.grids[group]
    entries: list[str] = []
    if group is Group.CHART_LAB:
        seen = series.observed.any(axis=0)
        means = grid.mean(axis=0)
        for j, item in enumerate(items):
            if seen[j]:
                entries.append(f"{format_value(means[j])} for {_label(item, vocab.item_label, stats)}")
        return f"The chart events measured were: {_list_body(entries)}."
    if group is Group.MEDS:
        means = grid.mean(axis=0)
        given = (grid != 0).any(axis=0)
        for j, item in enumerate(items):
            if given[j]:
                entries.append(f"{format_value(means[j])} of {_label(item, vocab.item_label, stats)}")
        return f"The mean amounts of medications administered during the episode were: {_list_body(entries)}."

    occurred = (grid > 0).any(axis=0)
    entries = [_label(item, vocab.item_label, stats) for j, item in enumerate(items) if occurred[j]]
    if group is Group.PROC:
        return f"The procedures performed were: {_list_body(entries)}."
    return f"The outputs collected were: {_list_body(entries)}."


@dataclass(frozen=True)
class PatientDocument:
    stay_id: str
    sections: tuple[tuple[Group, str], ...]
    full_text: str


def parse_groups(names: Iterable[str | Group] | str) -> frozenset[Group]:
    """Parse ablation flags from group names (or a comma-separated string)."""
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    out = set()
    for n in names:
        key = n.value if isinstance(n, Group) else n.strip().upper().replace("-", "_").replace("/", "_")
        if key == "CHART" or key == "LAB" or key == "CHAR_LAB":
            key = "CHART_LAB"
        try:
            out.add(Group(key))
        except ValueError:
            raise ValueError(f"unknown feature group {n!r}; expected one of {[g.value for g in Group]}") from None
    return frozenset(out)


def render_document(
    stay: ICUStayRecord,
    series: TimeBinnedSeries | None,
    vocab: FeatureVocabulary,
    flags: Iterable[Group | str] = ALL_GROUPS,
    stats: Counter | None = None,
) -> PatientDocument:
    """Render the enabled sections of ``stay`` (``series`` must be imputed)."""
    enabled = parse_groups(flags)
    sections = tuple((g, render_section(g, stay, series, vocab, stats)) for g in ALL_GROUPS if g in enabled)
    parts = []
    for i, (g, text) in enumerate(sections):
        if g is Group.DEMO:
            fused = i + 1 < len(sections) and sections[i + 1][0] is Group.COND
            text = text if fused else text + "."
        parts.append(text)
    return PatientDocument(stay.stay_id, sections, " ".join(parts))

