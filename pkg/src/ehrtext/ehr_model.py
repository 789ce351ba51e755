"""Domain types shared by every stage of the pipeline.

All records are frozen dataclasses. Event timestamps are integer minutes
relative to ICU admission.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property


class Group(str, enum.Enum):
    """Feature groups, in the fixed order used for layouts and documents."""

    DEMO = "DEMO"
    COND = "COND"
    CHART_LAB = "CHART_LAB"
    MEDS = "MEDS"
    PROC = "PROC"
    OUTE = "OUTE"


ALL_GROUPS: tuple[Group, ...] = tuple(Group)
DYNAMIC_GROUPS: tuple[Group, ...] = (Group.CHART_LAB, Group.MEDS, Group.PROC, Group.OUTE)
# groups whose events are occurrence markers with value fixed to 1
PRESENCE_GROUPS: frozenset[Group] = frozenset({Group.PROC, Group.OUTE})


class ICDVersion(enum.IntEnum):
    ICD9 = 9
    ICD10 = 10


OTHER = "Other"


@dataclass(frozen=True)
class PatientDemographics:
    gender: str
    ethnicity: str
    insurance: str
    age_years: int


@dataclass(frozen=True, order=True)
class DiagnosisCode:
    code: str
    icd_version: ICDVersion = ICDVersion.ICD10

    @property
    def key(self) -> str:
        return f"ICD{int(self.icd_version)}:{self.code}"


@dataclass(frozen=True)
class ClinicalEvent:
    group: Group
    item_id: str
    t_minutes: int
    value: float = 1.0


@dataclass(frozen=True)
class ICUStayRecord:
    stay_id: str
    demographics: PatientDemographics
    diagnoses: tuple[DiagnosisCode, ...]
    events: tuple[ClinicalEvent, ...]
    label: int


def natural_key(identifier: str) -> tuple[int, int, str]:
    """Sort key placing numeric identifiers in numeric order before others."""
    s = str(identifier)
    if s.isdigit():
        return (0, int(s), s)
    return (1, 0, s)


@dataclass(frozen=True)
class DemographicVocab:
    """Declared category lists; each always ends with the reserved "Other"."""

    genders: tuple[str, ...] = ("F", "M")
    ethnicities: tuple[str, ...] = (
        "WHITE",
        "BLACK/AFRICAN AMERICAN",
        "HISPANIC/LATINO",
        "ASIAN",
    )
    insurances: tuple[str, ...] = ("Medicare", "Medicaid")

    def __post_init__(self) -> None:
        for name in ("genders", "ethnicities", "insurances"):
            values = tuple(v for v in getattr(self, name) if v != OTHER)
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate entries in demographic vocabulary {name!r}")
            object.__setattr__(self, name, values + (OTHER,))

    def canonical(self, attribute: str, value: str) -> str:
        """Return ``value`` if declared for ``attribute``, else ``"Other"``."""
        return value if value in getattr(self, attribute) else OTHER


@dataclass(frozen=True)
class FeatureVocabulary:
    """Ordered dictionaries that fix the vector layout for a run."""

    cond_codes: tuple[DiagnosisCode, ...]
    dynamic_items: dict[Group, tuple[str, ...]]
    item_labels: dict[str, str] = field(default_factory=dict)
    code_labels: dict[DiagnosisCode, str] = field(default_factory=dict)
    demographics: DemographicVocab = field(default_factory=DemographicVocab)

    def __post_init__(self) -> None:
        if len(set(self.cond_codes)) != len(self.cond_codes):
            raise ValueError("duplicate diagnosis codes in vocabulary")
        items = {g: tuple(self.dynamic_items.get(g, ())) for g in DYNAMIC_GROUPS}
        for g, ids in items.items():
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate item ids in {g.value} vocabulary")
        object.__setattr__(self, "dynamic_items", items)

    @cached_property
    def cond_index(self) -> dict[DiagnosisCode, int]:
        return {c: i for i, c in enumerate(self.cond_codes)}

    @cached_property
    def item_index(self) -> dict[Group, dict[str, int]]:
        return {g: {item: i for i, item in enumerate(ids)} for g, ids in self.dynamic_items.items()}

    @property
    def n_dynamic(self) -> int:
        return sum(len(ids) for ids in self.dynamic_items.values())

    def item_label(self, item_id: str) -> str | None:
        return self.item_labels.get(item_id)

    def code_label(self, code: DiagnosisCode) -> str | None:
        return self.code_labels.get(code)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


def validate_stay(stay: ICUStayRecord, vocab: FeatureVocabulary) -> list[Violation]:
    """Check a stay against the type invariants; returns violations, never raises."""
    out: list[Violation] = []
    demo = stay.demographics
    if not isinstance(demo.age_years, int) or not 0 <= demo.age_years <= 130:
        out.append(Violation("age", f"age_years {demo.age_years!r} outside [0, 130]"))
    for attr in ("gender", "ethnicity", "insurance"):
        if not str(getattr(demo, attr)).strip():
            out.append(Violation("demographics", f"empty {attr}"))
    if stay.label not in (0, 1):
        out.append(Violation("label", f"label {stay.label!r} not in {{0, 1}}"))
    for dx in stay.diagnoses:
        if not dx.code:
            out.append(Violation("diagnosis", "empty diagnosis code"))
        if dx.icd_version not in (ICDVersion.ICD9, ICDVersion.ICD10):
            out.append(Violation("diagnosis", f"bad icd_version {dx.icd_version!r}"))

    prev_t = None
    for i, ev in enumerate(stay.events):
        if ev.t_minutes < 0:
            out.append(Violation("timestamp", f"event {i} has t_minutes {ev.t_minutes} < 0"))
        if prev_t is not None and ev.t_minutes < prev_t:
            out.append(Violation("order", f"event {i} out of time order"))
        prev_t = ev.t_minutes
        if not math.isfinite(ev.value):
            out.append(Violation("value", f"event {i} has non-finite value"))
        elif ev.group in PRESENCE_GROUPS and ev.value != 1:
            out.append(Violation("value", f"event {i} ({ev.group.value}) value {ev.value} != 1"))
        elif ev.group is Group.MEDS and ev.value < 0:
            out.append(Violation("value", f"event {i} has negative medication amount"))
        if ev.group not in DYNAMIC_GROUPS:
            out.append(Violation("group", f"event {i} has non-dynamic group {ev.group!r}"))
        elif ev.item_id not in vocab.item_index[ev.group]:
            out.append(Violation("unknown_item", f"event {i}: {ev.group.value} item {ev.item_id}"))
    return out
