"""Seeded generator of MIMIC-shaped CSV tables with a ledger of planted truths.

Each patient has one hospital admission with one ICU stay; a fraction of
admissions get a second, later ICU stay and a fraction of first stays are
shorter than the observation window. With ``signal_strength > 0`` the
first ``n_signal_items`` chart items are measured at least three times in
every stay, and all their log-values shift with the label by
``0.25 * signal_strength`` either way.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_FILES, TABLE_TYPES

BASE_TIME = datetime(2150, 1, 1)
TIME_FMT = "%Y-%m-%d %H:%M:%S"

GENDERS = ("M", "F")
ETHNICITIES = ("WHITE", "WHITE", "WHITE", "BLACK/AFRICAN AMERICAN", "HISPANIC/LATINO", "ASIAN", "UNKNOWN")
INSURANCES = ("Medicare", "Medicaid", "Other")

CHART_NAMES = (
    "Heart Rate",
    "Heart rate Alarm - High",
    "Respiratory Rate",
    "O2 saturation pulseoxymetry",
    "Non Invasive Blood Pressure systolic",
    "Non Invasive Blood Pressure diastolic",
    "Temperature Fahrenheit",
    "Glucose finger stick",
    "Hemoglobin",
    "Creatinine",
    "Potassium",
    "Sodium",
    "Lactate",
    "Platelet Count",
    "White Blood Cells",
)
MED_NAMES = ("Albumin 5%", "NaCl 0.9%", "Dextrose 5%", "Propofol", "Norepinephrine", "Insulin - Regular", "Heparin Sodium", "Furosemide (Lasix)")
PROC_NAMES = ("Dialysis Catheter", "18 Gauge", "EKG", "Chest X-Ray", "Arterial Line", "Intubation", "Invasive Ventilation", "20 Gauge")
OUT_NAMES = ("OR EBL", "OR Urine", "Pre-Admission", "Foley", "Void", "Chest Tube #1", "Stool", "Gastric Tube")
CONDITION_WORDS = (
    ("Acute", "Chronic", "Unspecified", "Recurrent", "Severe", "Mild", "Secondary"),
    ("sepsis", "pancreatitis", "kidney failure", "heart failure", "pneumonia", "hypertension", "anemia", "hypoxemia", "delirium"),
)

ITEM_BASES = {"chart": 220000, "meds": 221000, "proc": 224000, "out": 226000}
GROUP_WEIGHTS = {"chart": 0.6, "meds": 0.2, "proc": 0.1, "out": 0.1}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 1
    n_patients: int = 100
    mortality_prevalence: float = 0.15
    n_cond_codes: int = 50
    n_chart_items: int = 15
    n_med_items: int = 8
    n_proc_items: int = 8
    n_out_items: int = 8
    events_per_stay: float = 60.0
    diagnoses_per_stay: float = 4.0
    signal_strength: float = 0.5
    n_signal_items: int = 5
    short_stay_fraction: float = 0.13
    multi_stay_fraction: float = 0.05
    outside_window_fraction: float = 0.1
    observation_window_hours: int = 48

    def __post_init__(self) -> None:
        counts = (self.n_patients, self.n_cond_codes, self.n_chart_items, self.n_med_items, self.n_proc_items, self.n_out_items)
        if min(counts) <= 0:
            raise ValueError("all counts must be positive")
        if not 0 < self.mortality_prevalence < 1:
            raise ValueError("mortality_prevalence must lie strictly inside (0, 1)")
        if not 0 <= self.signal_strength <= 1:
            raise ValueError("signal_strength must be in [0, 1]")
        if not 0 <= self.n_signal_items <= self.n_chart_items:
            raise ValueError("n_signal_items must not exceed n_chart_items")
        if self.events_per_stay <= 0:
            raise ValueError("events_per_stay must be positive")
        if self.diagnoses_per_stay < 1:
            raise ValueError("diagnoses_per_stay must be at least 1")


def _names(pool: tuple[str, ...], n: int, fallback: str) -> list[str]:
    return [pool[j] if j < len(pool) else f"{fallback} {j + 1}" for j in range(n)]


def _ts(t: datetime) -> str:
    return t.strftime(TIME_FMT)


def generate(cfg: SynthConfig, out_dir: str | Path) -> dict:
    """Write every input table into ``out_dir``; returns (and saves) the ledger."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    window_min = cfg.observation_window_hours * 60

    items = {
        "chart": [str(ITEM_BASES["chart"] + j) for j in range(cfg.n_chart_items)],
        "meds": [str(ITEM_BASES["meds"] + j) for j in range(cfg.n_med_items)],
        "proc": [str(ITEM_BASES["proc"] + j) for j in range(cfg.n_proc_items)],
        "out": [str(ITEM_BASES["out"] + j) for j in range(cfg.n_out_items)],
    }
    labels_by_item = {}
    for key, pool, fallback in (
        ("chart", CHART_NAMES, "Lab item"),
        ("meds", MED_NAMES, "Medication"),
        ("proc", PROC_NAMES, "Procedure"),
        ("out", OUT_NAMES, "Output"),
    ):
        labels_by_item.update(zip(items[key], _names(pool, len(items[key]), fallback)))
    # per-item log-scale location; chart values around 10-150, doses around 5-50
    chart_mu = rng.uniform(np.log(10), np.log(150), size=cfg.n_chart_items)
    med_mu = rng.uniform(np.log(5), np.log(50), size=cfg.n_med_items)
    shift = 0.25 * cfg.signal_strength

    codes = [(f"S{j + 1:03d}", 9 if j % 5 == 4 else 10) for j in range(cfg.n_cond_codes)]
    first, second = CONDITION_WORDS
    icd_rows = [
        (code, version, f"{first[j % len(first)]} {second[(j // len(first)) % len(second)]} type {j + 1}")
        for j, (code, version) in enumerate(codes)
    ]

    rows: dict[str, list[tuple]] = {t: [] for t in TABLE_TYPES}
    stays_ledger: dict[str, dict] = {}
    group_names = list(GROUP_WEIGHTS)
    group_p = np.array([GROUP_WEIGHTS[g] for g in group_names])
    event_table = {"chart": "chart_lab_events", "meds": "med_events", "proc": "proc_events", "out": "out_events"}

    for i in range(cfg.n_patients):
        subject_id = str(10_000_000 + i)
        hadm_id = str(20_000_000 + i)
        stay_id = str(30_000_000 + i)
        label = int(rng.random() < cfg.mortality_prevalence)
        gender = GENDERS[rng.integers(len(GENDERS))]
        ethnicity = ETHNICITIES[rng.integers(len(ETHNICITIES))]
        insurance = INSURANCES[rng.integers(len(INSURANCES))]
        age = int(rng.integers(18, 92))
        rows["patients"].append((subject_id, gender, age, ethnicity))

        intime = BASE_TIME + timedelta(days=int(rng.integers(0, 3650)), minutes=int(rng.integers(0, 1440)))
        if rng.random() < cfg.short_stay_fraction:
            length_min = int(rng.integers(6 * 60, window_min))
        else:
            length_min = int(rng.integers(window_min, 10 * 24 * 60))
        outtime = intime + timedelta(minutes=length_min)
        admittime = intime - timedelta(minutes=int(rng.integers(0, 48 * 60)))
        dischtime = outtime + timedelta(minutes=int(rng.integers(60, 120 * 60)))
        rows["admissions"].append((hadm_id, subject_id, _ts(admittime), _ts(dischtime), insurance, label))
        rows["icustays"].append((stay_id, hadm_id, _ts(intime), _ts(outtime)))
        stays_ledger[stay_id] = {"hadm_id": hadm_id, "label": label, "hours": length_min / 60, "first": True}

        if rng.random() < cfg.multi_stay_fraction:
            later = outtime + timedelta(minutes=int(rng.integers(60, 24 * 60)))
            later_id = str(39_000_000 + i)
            later_len = int(rng.integers(window_min, 5 * 24 * 60))
            rows["icustays"].append((later_id, hadm_id, _ts(later), _ts(later + timedelta(minutes=later_len))))
            stays_ledger[later_id] = {"hadm_id": hadm_id, "label": label, "hours": later_len / 60, "first": False}

        n_dx = min(cfg.n_cond_codes, 1 + int(rng.poisson(cfg.diagnoses_per_stay - 1)))
        for j in rng.choice(cfg.n_cond_codes, size=n_dx, replace=False):
            code, version = codes[j]
            rows["diagnoses"].append((hadm_id, code, version))

        in_window = min(window_min, length_min)

        def when() -> int:
            if length_min > window_min and rng.random() < cfg.outside_window_fraction:
                return int(rng.integers(window_min, length_min))
            return int(rng.integers(0, in_window))

        events: list[tuple[int, str, str, str]] = []
        for j in range(cfg.n_signal_items):
            for _ in range(3):
                mu = chart_mu[j] + (shift if label else -shift)
                events.append((int(rng.integers(0, in_window)), "chart", items["chart"][j], f"{rng.lognormal(mu, 0.25):.3f}"))
        for _ in range(int(rng.poisson(cfg.events_per_stay))):
            g = group_names[rng.choice(len(group_names), p=group_p)]
            j = int(rng.integers(len(items[g])))
            t = when()
            if g == "chart":
                mu = chart_mu[j] + ((shift if label else -shift) if j < cfg.n_signal_items else 0.0)
                value = f"{rng.lognormal(mu, 0.25):.3f}"
            elif g == "meds":
                value = f"{rng.lognormal(med_mu[j], 0.5):.3f}"
            else:
                value = "1"
            events.append((t, g, items[g][j], value))
        for t, g, item, value in sorted(events):
            charttime = intime + timedelta(minutes=t, seconds=int(rng.integers(0, 60)))
            rows[event_table[g]].append((stay_id, item, _ts(charttime), value))

    for key in ("chart", "meds", "proc", "out"):
        rows["item_dictionary"].extend((item, labels_by_item[item]) for item in items[key])
    rows["icd_dictionary"] = icd_rows

    row_counts = {}
    for table, cols in TABLE_TYPES.items():
        path = out / DEFAULT_FILES[table]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(cols))
            writer.writerows(rows[table])
        row_counts[DEFAULT_FILES[table]] = len(rows[table])

    cohort = {sid: s["label"] for sid, s in stays_ledger.items() if s["first"] and s["hours"] >= cfg.observation_window_hours}
    n_pos = sum(cohort.values())
    ledger = {
        "config": asdict(cfg),
        "n_patients": cfg.n_patients,
        "planted_cohort_size": len(cohort),
        "planted_labels": cohort,
        "planted_positive": n_pos,
        "realized_prevalence": n_pos / len(cohort) if cohort else None,
        "signal_items": items["chart"][: cfg.n_signal_items],
        "stays": stays_ledger,
        "row_counts": row_counts,
    }
    with open(out / "ledger.json", "w", encoding="utf-8") as fh:
        json.dump(ledger, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return ledger
