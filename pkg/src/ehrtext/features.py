"""Numeric feature vectors: per-window concatenation (REP1) and window mean (REP2)."""

from __future__ import annotations

import bisect
import enum
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ehr_model import (
    DYNAMIC_GROUPS,
    DemographicVocab,
    DiagnosisCode,
    FeatureVocabulary,
    Group,
    ICUStayRecord,
    PatientDemographics,
)
from .ingest import CohortConfig, TimeBinnedSeries, bin_events


class LayoutError(ValueError):
    """Series or vocabulary does not match the feature layout."""


class Representation(str, enum.Enum):
    REP1 = "rep1"
    REP2 = "rep2"


class ImputeStrategy(str, enum.Enum):
    CARRY_SAMPLE = "carry_sample"
    MEAN_FILL = "mean_fill"


DEFAULT_AGE_EDGES: tuple[int, ...] = tuple(range(0, 130, 10))


@dataclass(frozen=True)
class DemographicEncoder:
    """Encodes demographics as category indices ("index") or one-hot slots ("onehot").

    Both modes end with one slot holding the age-bin index. Age bins are
    ``[edges[i], edges[i+1])``; the last bin is closed at 130.
    """

    vocab: DemographicVocab = field(default_factory=DemographicVocab)
    age_edges: tuple[int, ...] = DEFAULT_AGE_EDGES
    mode: str = "index"

    def __post_init__(self) -> None:
        if self.mode not in ("index", "onehot"):
            raise ValueError(f"unknown demographic encoding {self.mode!r}")
        edges = tuple(self.age_edges)
        if not edges or edges[0] != 0 or list(edges) != sorted(set(edges)):
            raise ValueError("age_edges must be strictly increasing and start at 0")
        object.__setattr__(self, "age_edges", edges)

    _ATTRS = (("gender", "genders"), ("ethnicity", "ethnicities"), ("insurance", "insurances"))

    @property
    def slot_names(self) -> tuple[str, ...]:
        if self.mode == "index":
            names = [f"demo:{attr}" for attr, _ in self._ATTRS]
        else:
            names = [f"demo:{attr}={v}" for attr, plural in self._ATTRS for v in getattr(self.vocab, plural)]
        return tuple(names) + ("demo:age_bin",)

    @property
    def width(self) -> int:
        return len(self.slot_names)

    def age_bin(self, age_years: int) -> int:
        return max(0, bisect.bisect_right(self.age_edges, age_years) - 1)

    def encode(self, demo: PatientDemographics) -> np.ndarray:
        out: list[float] = []
        for attr, plural in self._ATTRS:
            values = getattr(self.vocab, plural)
            code = self.vocab.canonical(plural, getattr(demo, attr))
            idx = values.index(code)
            if self.mode == "index":
                out.append(float(idx))
            else:
                onehot = [0.0] * len(values)
                onehot[idx] = 1.0
                out.extend(onehot)
        out.append(float(self.age_bin(demo.age_years)))
        return np.asarray(out, dtype=float)


def encode_demographics(demo: PatientDemographics, encoder: DemographicEncoder) -> np.ndarray:
    """DEMO segment; unknown codes land on the reserved "Other" index."""
    return encoder.encode(demo)


def encode_diagnoses(codes: Iterable[DiagnosisCode], vocab: FeatureVocabulary, stats: Counter | None = None) -> np.ndarray:
    """COND one-hot segment. Codes missing from ``vocab`` are ignored and counted."""
    seg = np.zeros(len(vocab.cond_codes))
    index = vocab.cond_index
    for code in codes:
        i = index.get(code)
        if i is None:
            if stats is not None:
                stats["unknown_diagnosis"] += 1
            continue
        seg[i] = 1.0
    return seg


def cohort_item_means(series: Iterable[TimeBinnedSeries]) -> np.ndarray:
    """Mean of every observed CHART_LAB bin value per item, NaN if never observed."""
    total = count = None
    for s in series:
        grid = s.grids[Group.CHART_LAB]
        if total is None:
            total = np.zeros(grid.shape[1])
            count = np.zeros(grid.shape[1])
        total += np.where(s.observed, grid, 0.0).sum(axis=0)
        count += s.observed.sum(axis=0)
    if total is None:
        return np.zeros(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def impute(
    series: TimeBinnedSeries,
    strategy: ImputeStrategy | str,
    cohort_means: np.ndarray | None = None,
) -> TimeBinnedSeries:
    """Fill missing CHART_LAB cells; other groups pass through unchanged.

    CARRY_SAMPLE carries the latest earlier observation forward; MEAN_FILL
    uses the stay-level mean of the item's observed bins. Either falls
    back to the cohort mean, then to 0.
    """
    strategy = ImputeStrategy(strategy)
    grid = series.grids[Group.CHART_LAB].copy()
    observed = series.observed
    W, n = grid.shape
    if cohort_means is None or len(cohort_means) != n:
        fallback = np.zeros(n)
    else:
        fallback = np.where(np.isnan(cohort_means), 0.0, cohort_means)

    if strategy is ImputeStrategy.CARRY_SAMPLE:
        for j in range(n):
            last = np.nan
            for b in range(W):
                if observed[b, j]:
                    last = grid[b, j]
                elif not np.isnan(last):
                    grid[b, j] = last
        # bins before the first observation have nothing to carry
        grid = np.where(np.isnan(grid), fallback, grid)
    else:
        seen = observed.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            stay_mean = np.where(seen > 0, np.where(observed, grid, 0.0).sum(axis=0) / np.maximum(seen, 1), np.nan)
        fill = np.where(np.isnan(stay_mean), fallback, stay_mean)
        grid = np.where(observed, grid, fill)

    grids = dict(series.grids)
    grids[Group.CHART_LAB] = grid
    return TimeBinnedSeries(series.stay_id, grids, observed)


@dataclass(frozen=True)
class FeatureLayout:
    """Slot layout: DEMO, COND, then the dynamic block(s)."""

    mode: Representation
    n_windows: int
    demo_slots: tuple[str, ...]
    cond_slots: tuple[str, ...]
    dynamic: tuple[tuple[Group, tuple[str, ...]], ...]

    @classmethod
    def build(cls, mode: Representation | str, n_windows: int, encoder: DemographicEncoder, vocab: FeatureVocabulary) -> FeatureLayout:
        return cls(
            mode=Representation(mode),
            n_windows=n_windows,
            demo_slots=encoder.slot_names,
            cond_slots=tuple(c.key for c in vocab.cond_codes),
            dynamic=tuple((g, vocab.dynamic_items[g]) for g in DYNAMIC_GROUPS),
        )

    @property
    def n_dynamic(self) -> int:
        return sum(len(ids) for _, ids in self.dynamic)

    @property
    def total_dim(self) -> int:
        reps = self.n_windows if self.mode is Representation.REP1 else 1
        return len(self.demo_slots) + len(self.cond_slots) + reps * self.n_dynamic

    def segments(self) -> dict[str, tuple[int, int]]:
        """Half-open ``[start, stop)`` offsets of every segment."""
        out = {}
        pos = len(self.demo_slots)
        out["DEMO"] = (0, pos)
        out["COND"] = (pos, pos + len(self.cond_slots))
        pos += len(self.cond_slots)
        windows = range(self.n_windows) if self.mode is Representation.REP1 else [None]
        for w in windows:
            for g, ids in self.dynamic:
                name = g.value if w is None else f"w{w}:{g.value}"
                out[name] = (pos, pos + len(ids))
                pos += len(ids)
        return out

    def slot_names(self) -> list[str]:
        names = list(self.demo_slots) + [f"cond:{c}" for c in self.cond_slots]
        windows = range(self.n_windows) if self.mode is Representation.REP1 else [None]
        for w in windows:
            prefix = "" if w is None else f"w{w}:"
            for g, ids in self.dynamic:
                names.extend(f"{prefix}{g.value.lower()}:{i}" for i in ids)
        return names

    def descriptor(self) -> dict:
        return {
            "mode": self.mode.value,
            "n_windows": self.n_windows,
            "demo_slots": list(self.demo_slots),
            "cond_slots": list(self.cond_slots),
            "dynamic": [[g.value, list(ids)] for g, ids in self.dynamic],
            "total_dim": self.total_dim,
            "window_order": "window-major",
        }

    @property
    def layout_id(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureVector:
    layout: FeatureLayout
    values: np.ndarray


def _dynamic_grid(series: TimeBinnedSeries, layout: FeatureLayout) -> np.ndarray:
    blocks = []
    for g, ids in layout.dynamic:
        grid = series.grids[g]
        if grid.shape != (layout.n_windows, len(ids)):
            raise LayoutError(
                f"{g.value} grid shape {grid.shape} != ({layout.n_windows}, {len(ids)}) for stay {series.stay_id}"
            )
        blocks.append(grid)
    return np.concatenate(blocks, axis=1) if blocks else np.zeros((layout.n_windows, 0))


def assemble(
    stay: ICUStayRecord,
    series: TimeBinnedSeries,
    layout: FeatureLayout,
    vocab: FeatureVocabulary,
    encoder: DemographicEncoder,
    stats: Counter | None = None,
) -> FeatureVector:
    """Build a stay's vector from an imputed series."""
    if len(vocab.cond_codes) != len(layout.cond_slots) or encoder.width != len(layout.demo_slots):
        raise LayoutError("vocabulary or demographic encoder does not match layout")
    demo = encoder.encode(stay.demographics)
    cond = encode_diagnoses(stay.diagnoses, vocab, stats)
    dyn = _dynamic_grid(series, layout)
    if np.isnan(dyn).any():
        raise LayoutError(f"stay {stay.stay_id}: series not imputed")
    if layout.mode is Representation.REP1:
        tail = dyn.reshape(-1)  # row-major == window-major
    else:
        tail = dyn.mean(axis=0)
    values = np.concatenate([demo, cond, tail])
    assert len(values) == layout.total_dim
    return FeatureVector(layout, values)


@dataclass
class FeatureMatrix:
    layout: FeatureLayout
    X: np.ndarray
    stay_ids: list[str]
    labels: np.ndarray
    stats: Counter


def prepare_series(
    cohort: Sequence[ICUStayRecord],
    cfg: CohortConfig,
    vocab: FeatureVocabulary,
    strategy: ImputeStrategy | str = ImputeStrategy.CARRY_SAMPLE,
) -> list[TimeBinnedSeries]:
    """Bin and impute every stay, with cohort means as the shared fallback."""
    raw = [bin_events(s, cfg, vocab) for s in cohort]
    means = cohort_item_means(raw)
    return [impute(s, strategy, means) for s in raw]


def build_matrix(
    cohort: Sequence[ICUStayRecord],
    series: Sequence[TimeBinnedSeries],
    vocab: FeatureVocabulary,
    encoder: DemographicEncoder,
    mode: Representation | str,
    n_windows: int,
) -> FeatureMatrix:
    layout = FeatureLayout.build(mode, n_windows, encoder, vocab)
    stats: Counter = Counter()
    X = np.empty((len(cohort), layout.total_dim))
    for i, (stay, s) in enumerate(zip(cohort, series)):
        X[i] = assemble(stay, s, layout, vocab, encoder, stats).values
    return FeatureMatrix(layout, X, [s.stay_id for s in cohort], np.array([s.label for s in cohort], dtype=int), stats)

