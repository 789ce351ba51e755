"""Load MIMIC-IV-shaped CSV tables, assemble a labelled cohort, bin events.

Input tables are read in chunks with every cell type-checked. Rows that
fail a check are skipped and counted per table; nothing is dropped
without showing up in :attr:`RawTables.report`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .ehr_model import (
    DYNAMIC_GROUPS,
    PRESENCE_GROUPS,
    ClinicalEvent,
    DemographicVocab,
    DiagnosisCode,
    FeatureVocabulary,
    Group,
    ICDVersion,
    ICUStayRecord,
    PatientDemographics,
    natural_key,
)

logger = logging.getLogger(__name__)


class IngestError(RuntimeError):
    """Fatal input problem (missing file, empty cohort)."""


class SchemaError(IngestError):
    """A required column is missing from an input table."""


# logical table -> file name and logical column -> cell type.
# Types ending in "?" may be empty; everything else is required.
TABLE_TYPES: dict[str, dict[str, str]] = {
    "patients": {"subject_id": "id", "gender": "str", "anchor_age": "int", "ethnicity": "str"},
    "admissions": {
        "hadm_id": "id",
        "subject_id": "id",
        "admittime": "datetime",
        "dischtime": "datetime",
        "insurance": "str",
        "hospital_expire_flag": "flag?",
    },
    "icustays": {"stay_id": "id", "hadm_id": "id", "intime": "datetime", "outtime": "datetime"},
    "diagnoses": {"hadm_id": "id", "icd_code": "id", "icd_version": "int"},
    "chart_lab_events": {"stay_id": "id", "item_id": "id", "charttime": "datetime", "value": "float"},
    "med_events": {"stay_id": "id", "item_id": "id", "charttime": "datetime", "value": "float"},
    "proc_events": {"stay_id": "id", "item_id": "id", "charttime": "datetime", "value": "float?"},
    "out_events": {"stay_id": "id", "item_id": "id", "charttime": "datetime", "value": "float?"},
    "item_dictionary": {"item_id": "id", "label": "str"},
    "icd_dictionary": {"icd_code": "id", "icd_version": "int", "long_title": "str"},
}

DEFAULT_FILES: dict[str, str] = {
    "patients": "patients.csv",
    "admissions": "admissions.csv",
    "icustays": "icustays.csv",
    "diagnoses": "diagnoses_icd.csv",
    "chart_lab_events": "chartevents.csv",
    "med_events": "inputevents.csv",
    "proc_events": "procedureevents.csv",
    "out_events": "outputevents.csv",
    "item_dictionary": "d_items.csv",
    "icd_dictionary": "d_icd_diagnoses.csv",
}

EVENT_TABLES: dict[Group, str] = {
    Group.CHART_LAB: "chart_lab_events",
    Group.MEDS: "med_events",
    Group.PROC: "proc_events",
    Group.OUTE: "out_events",
}


def default_schema() -> dict[str, dict[str, Any]]:
    """Schema config: per table the file name and a logical->actual column map."""
    return {
        name: {"file": DEFAULT_FILES[name], "columns": {c: c for c in cols}}
        for name, cols in TABLE_TYPES.items()
    }


def load_schema(path: str | Path | None) -> dict[str, dict[str, Any]]:
    """Read a JSON schema config, filling anything it omits from the defaults."""
    schema = default_schema()
    if path is None:
        return schema
    with open(path, encoding="utf-8") as fh:
        overrides = json.load(fh)
    for table, spec in overrides.items():
        if table not in schema:
            raise SchemaError(f"schema config names unknown table {table!r}")
        if "file" in spec:
            schema[table]["file"] = spec["file"]
        schema[table]["columns"].update(spec.get("columns", {}))
    return schema


@dataclass(frozen=True)
class CohortConfig:
    observation_window_hours: int = 48
    bin_hours: int = 2
    label_kind: str = "IN_HOSPITAL_DEATH"
    min_stay_hours: int | None = None

    def __post_init__(self) -> None:
        if self.observation_window_hours <= 0 or self.bin_hours <= 0:
            raise ValueError("observation_window_hours and bin_hours must be positive")
        if self.observation_window_hours % self.bin_hours:
            raise ValueError("bin_hours must divide observation_window_hours")
        if self.label_kind != "IN_HOSPITAL_DEATH":
            raise ValueError(f"unsupported label_kind {self.label_kind!r}")
        if self.min_stay_hours is not None and self.min_stay_hours <= 0:
            raise ValueError("min_stay_hours must be positive")

    @property
    def n_windows(self) -> int:
        return self.observation_window_hours // self.bin_hours

    @property
    def min_stay(self) -> int:
        return self.observation_window_hours if self.min_stay_hours is None else self.min_stay_hours


@dataclass
class RawTables:
    patients: pd.DataFrame
    admissions: pd.DataFrame
    icustays: pd.DataFrame
    diagnoses: pd.DataFrame
    chart_lab_events: pd.DataFrame
    med_events: pd.DataFrame
    proc_events: pd.DataFrame
    out_events: pd.DataFrame
    item_dictionary: pd.DataFrame
    icd_dictionary: pd.DataFrame
    report: dict[str, dict[str, int]] = field(default_factory=dict)

    def events(self, group: Group) -> pd.DataFrame:
        return getattr(self, EVENT_TABLES[group])


def _parse_column(raw: pd.Series, kind: str) -> tuple[pd.Series, pd.Series]:
    """Convert a string column; returns (values, bad-row mask)."""
    optional = kind.endswith("?")
    kind = kind.rstrip("?")
    text = raw.str.strip()
    empty = text == ""
    if kind in ("id", "str"):
        values = text
    elif kind == "int":
        num = pd.to_numeric(text, errors="coerce")
        ok = num.notna() & np.isfinite(num) & (num == np.floor(num))
        values = num.where(ok).astype("Int64")
    elif kind == "float":
        values = pd.to_numeric(text, errors="coerce")
        values = values.where(np.isfinite(values))
    elif kind == "flag":
        num = pd.to_numeric(text, errors="coerce")
        values = num.where(num.isin([0, 1])).astype("Int64")
    elif kind == "datetime":
        values = pd.to_datetime(text, errors="coerce", format="ISO8601")
    else:
        raise ValueError(f"unknown column type {kind!r}")
    unparsed = values.isna() & ~empty if kind not in ("id", "str") else pd.Series(False, index=raw.index)
    bad = unparsed | (empty & (not optional))
    return values, bad


def _read_table(path: Path, logical: dict[str, str], types: dict[str, str], chunksize: int) -> tuple[pd.DataFrame, dict[str, int]]:
    bad_lines = 0

    def on_bad_line(_line: list[str]) -> None:
        nonlocal bad_lines
        bad_lines += 1
        return None

    header = pd.read_csv(path, nrows=0, encoding="utf-8").columns
    for name, actual in logical.items():
        if actual not in header:
            raise SchemaError(f"{path.name}: missing required column {actual!r} (logical {name!r})")

    chunks = []
    skipped = 0
    reader = pd.read_csv(
        path,
        dtype=str,
        keep_default_na=False,
        usecols=list(logical.values()),
        encoding="utf-8",
        engine="python",
        on_bad_lines=on_bad_line,
        chunksize=chunksize,
    )
    for chunk in reader:
        chunk = chunk.rename(columns={v: k for k, v in logical.items()})
        out = {}
        bad = pd.Series(False, index=chunk.index)
        for col, kind in types.items():
            out[col], col_bad = _parse_column(chunk[col].fillna(""), kind)
            bad |= col_bad
        frame = pd.DataFrame(out)[~bad]
        skipped += int(bad.sum())
        chunks.append(frame)
    if chunks:
        df = pd.concat(chunks, ignore_index=True)
    else:
        df = pd.DataFrame({c: pd.Series(dtype=object) for c in types})
    report = {"rows": len(df), "skipped": skipped + bad_lines}
    return df, report


def load_tables(directory: str | Path, schema: dict[str, dict[str, Any]] | None = None, chunksize: int = 200_000) -> RawTables:
    """Read and type-check every input table under ``directory``."""
    directory = Path(directory)
    schema = schema or default_schema()
    frames: dict[str, pd.DataFrame] = {}
    report: dict[str, dict[str, int]] = {}
    for table, types in TABLE_TYPES.items():
        spec = schema[table]
        path = directory / spec["file"]
        if not path.is_file():
            raise IngestError(f"missing input file {path}")
        logical = {col: spec["columns"].get(col, col) for col in types}
        frames[table], report[table] = _read_table(path, logical, types, chunksize)
        if report[table]["skipped"]:
            logger.warning("%s: skipped %d malformed rows", path.name, report[table]["skipped"])
    logger.info("loaded tables: %s", {k: v["rows"] for k, v in report.items()})
    return RawTables(**frames, report=report)


def assign_label(stays: pd.DataFrame, admissions: pd.DataFrame, cfg: CohortConfig) -> pd.Series:
    """Mortality label per stay_id: 1 iff the patient died during the admission.

    Stays whose admission has no discharge disposition get ``<NA>``.
    """
    if cfg.label_kind != "IN_HOSPITAL_DEATH":
        raise ValueError(f"unsupported label_kind {cfg.label_kind!r}")
    flags = admissions.drop_duplicates("hadm_id").set_index("hadm_id")["hospital_expire_flag"]
    labels = stays["hadm_id"].map(flags).astype("Int64")
    return pd.Series(labels.to_numpy(), index=stays["stay_id"].to_numpy(), name="label")


@dataclass(frozen=True)
class Cohort:
    records: tuple[ICUStayRecord, ...]
    exclusions: dict[str, int]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> ICUStayRecord:
        return self.records[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)


def _sort_by_natural(df: pd.DataFrame, col: str) -> pd.DataFrame:
    return df.sort_values(col, key=lambda s: s.map(natural_key), kind="stable")


def _select_stays(raw: RawTables, cfg: CohortConfig, excluded: dict[str, int]) -> pd.DataFrame:
    stays = raw.icustays.drop_duplicates("stay_id")
    adm = raw.admissions.drop_duplicates("hadm_id")
    pat = raw.patients.drop_duplicates("subject_id")

    with_adm = stays.merge(adm, on="hadm_id", how="inner")
    excluded["orphan_admission"] = len(stays) - len(with_adm)
    merged = with_adm.merge(pat, on="subject_id", how="inner")
    excluded["orphan_patient"] = len(with_adm) - len(merged)

    merged = merged.sort_values(["hadm_id", "intime", "stay_id"], kind="stable")
    first = merged.drop_duplicates("hadm_id", keep="first")
    excluded["not_first_stay"] = len(merged) - len(first)

    hours = (first["outtime"] - first["intime"]).dt.total_seconds() / 3600.0
    long_enough = first[hours >= cfg.min_stay]
    excluded["short_stay"] = len(first) - len(long_enough)

    labels = assign_label(long_enough, adm, cfg)
    labelled = long_enough.assign(label=labels.to_numpy())
    has_label = labelled["label"].notna()
    excluded["missing_label"] = int((~has_label).sum())
    labelled = labelled[has_label]

    age_ok = labelled["anchor_age"].between(0, 130)
    excluded["invalid_age"] = int((~age_ok).sum())
    return _sort_by_natural(labelled[age_ok], "stay_id").reset_index(drop=True)


def _window_events(raw: RawTables, stays: pd.DataFrame, cfg: CohortConfig, excluded: dict[str, int]) -> pd.DataFrame:
    window_min = cfg.observation_window_hours * 60
    intime = stays.set_index("stay_id")["intime"]
    parts = []
    outside = negative_meds = 0
    for order, group in enumerate(DYNAMIC_GROUPS):
        ev = raw.events(group)
        ev = ev[ev["stay_id"].isin(intime.index)]
        delta = (ev["charttime"] - ev["stay_id"].map(intime)).dt.total_seconds()
        t = np.floor(delta.to_numpy(dtype=float) / 60.0)
        inside = (t >= 0) & (t < window_min)
        outside += int((~inside).sum())
        if group in PRESENCE_GROUPS:
            value = np.ones(len(ev))
        else:
            value = ev["value"].to_numpy(dtype=float)
        part = pd.DataFrame(
            {
                "stay_id": ev["stay_id"].to_numpy(),
                "group": order,
                "item_id": ev["item_id"].to_numpy(),
                "t": t,
                "value": value,
            }
        )[inside]
        if group is Group.MEDS:
            neg = part["value"] < 0
            negative_meds += int(neg.sum())
            part = part[~neg]
        parts.append(part)
    excluded["events_outside_window"] = outside
    excluded["negative_med_amount"] = negative_meds
    events = pd.concat(parts, ignore_index=True)
    events["t"] = events["t"].astype(np.int64)
    return events.sort_values(["stay_id", "t", "group", "item_id", "value"], kind="stable")


def build_cohort(raw: RawTables, cfg: CohortConfig, demo_vocab: DemographicVocab | None = None) -> tuple[Cohort, FeatureVocabulary]:
    """Assemble one labelled record per qualifying ICU stay and the run vocabulary.

    A stay qualifies when it is the first ICU stay of its hospital admission,
    lasts at least ``cfg.min_stay`` hours and has a discharge disposition.
    Events outside ``[0, observation window)`` are discarded. The
    vocabulary is built from the whole cohort.
    """
    excluded: dict[str, int] = {}
    stays = _select_stays(raw, cfg, excluded)
    if stays.empty:
        raise IngestError(f"empty qualifying cohort; exclusions: {excluded}")

    events = _window_events(raw, stays, cfg, excluded)

    dx = raw.diagnoses[raw.diagnoses["hadm_id"].isin(stays["hadm_id"])]
    dx_by_hadm: dict[str, list[DiagnosisCode]] = {}
    bad_version = 0
    for hadm, code, version in zip(dx["hadm_id"], dx["icd_code"], dx["icd_version"]):
        if version not in (9, 10):
            bad_version += 1
            continue
        dc = DiagnosisCode(code, ICDVersion(int(version)))
        codes = dx_by_hadm.setdefault(hadm, [])
        if dc not in codes:
            codes.append(dc)
    excluded["bad_icd_version"] = bad_version

    groups = DYNAMIC_GROUPS
    ev_by_stay: dict[str, list[ClinicalEvent]] = {}
    for stay_id, g, item, t, value in zip(
        events["stay_id"], events["group"], events["item_id"], events["t"], events["value"]
    ):
        ev_by_stay.setdefault(stay_id, []).append(ClinicalEvent(groups[g], item, int(t), float(value)))

    records = []
    for row in stays.itertuples(index=False):
        demo = PatientDemographics(
            gender=row.gender,
            ethnicity=row.ethnicity,
            insurance=row.insurance,
            age_years=int(row.anchor_age),
        )
        records.append(
            ICUStayRecord(
                stay_id=row.stay_id,
                demographics=demo,
                diagnoses=tuple(dx_by_hadm.get(row.hadm_id, ())),
                events=tuple(ev_by_stay.get(row.stay_id, ())),
                label=int(row.label),
            )
        )

    cond_codes = sorted({c for r in records for c in r.diagnoses}, key=lambda c: (int(c.icd_version), natural_key(c.code)))
    dynamic = {}
    for order, group in enumerate(groups):
        ids = events.loc[events["group"] == order, "item_id"].unique()
        dynamic[group] = tuple(sorted(ids, key=natural_key))

    item_dict = raw.item_dictionary.drop_duplicates("item_id").set_index("item_id")["label"]
    used_items = {i for ids in dynamic.values() for i in ids}
    item_labels = {k: v for k, v in item_dict.items() if k in used_items}
    code_set = set(cond_codes)
    code_labels = {}
    for code, version, title in zip(
        raw.icd_dictionary["icd_code"], raw.icd_dictionary["icd_version"], raw.icd_dictionary["long_title"]
    ):
        if version in (9, 10):
            dc = DiagnosisCode(code, ICDVersion(int(version)))
            if dc in code_set and dc not in code_labels:
                code_labels[dc] = title

    vocab = FeatureVocabulary(
        cond_codes=tuple(cond_codes),
        dynamic_items=dynamic,
        item_labels=item_labels,
        code_labels=code_labels,
        demographics=demo_vocab or DemographicVocab(),
    )
    logger.info("cohort: %d stays; exclusions %s", len(records), excluded)
    return Cohort(tuple(records), excluded), vocab


@dataclass(frozen=True)
class TimeBinnedSeries:
    """Per-group ``W x n_items`` grids for one stay.

    CHART_LAB cells are NaN where nothing was observed (until imputed);
    ``observed`` keeps the raw observation mask through imputation.
    """

    stay_id: str
    grids: dict[Group, np.ndarray]
    observed: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.observed.shape[0]


def bin_events(stay: ICUStayRecord, cfg: CohortConfig, vocab: FeatureVocabulary) -> TimeBinnedSeries:
    """Bin a stay's events into left-closed, right-open windows of ``cfg.bin_hours``."""
    W = cfg.n_windows
    bin_minutes = cfg.bin_hours * 60
    sums = {g: np.zeros((W, len(vocab.dynamic_items[g]))) for g in DYNAMIC_GROUPS}
    counts = np.zeros_like(sums[Group.CHART_LAB])
    index = vocab.item_index
    for ev in stay.events:
        b = ev.t_minutes // bin_minutes
        if not 0 <= b < W:
            continue
        col = index[ev.group].get(ev.item_id)
        if col is None:
            continue
        if ev.group is Group.CHART_LAB:
            sums[ev.group][b, col] += ev.value
            counts[b, col] += 1
        elif ev.group is Group.MEDS:
            sums[ev.group][b, col] += ev.value
        else:
            sums[ev.group][b, col] = 1.0
    observed = counts > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        sums[Group.CHART_LAB] = np.where(observed, sums[Group.CHART_LAB] / np.where(observed, counts, 1), math.nan)
    return TimeBinnedSeries(stay.stay_id, sums, observed)
