"""Run configuration: one JSON document, defaults filled in, stable digest."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .ehr_model import ALL_GROUPS, DemographicVocab
from .evaluate import Hyper
from .features import DEFAULT_AGE_EDGES, DemographicEncoder
from .ingest import CohortConfig

_DEMO = DemographicVocab()

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "schema": None,
    "cohort": {"observation_window_hours": 48, "bin_hours": 2, "min_stay_hours": None, "label_kind": "IN_HOSPITAL_DEATH"},
    "demographics": {
        "genders": list(_DEMO.genders[:-1]),
        "ethnicities": list(_DEMO.ethnicities[:-1]),
        "insurances": list(_DEMO.insurances[:-1]),
        "age_edges": list(DEFAULT_AGE_EDGES),
        "encoding": "index",
    },
    "features": {"representation": "rep2", "impute": "carry_sample"},
    "text": {"groups": [g.value for g in ALL_GROUPS]},
    "split": {"test_fraction": 0.2, "oversample": True},
    "eval": {"folds": 5, "lambdas": [0.0, 0.001, 0.01, 0.1, 1.0], "lr": 0.1, "max_iters": 2000, "tol": 1e-8},
    "zeroshot": {
        "prompt": "p1",
        "budget": 1024,
        "default_level": "token",
        "client": {"endpoint_url": "mock", "model": "mock", "mock_default": "No"},
    },
    "synth": {"n_patients": 100, "mortality_prevalence": 0.15, "signal_strength": 0.5},
    "paths": {"data": None, "out": None},
}

# keys that never change results, so they stay out of the digest
UNDIGESTED = ("paths", "threads")


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key not in ("client", "synth"):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value) if not isinstance(base[key], dict) else {**base[key], **value}
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = _merge(cfg, data, "")
    if overrides:
        cfg = _merge(cfg, overrides, "")
    return cfg


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_digest(cfg: dict) -> str:
    """SHA-256 over the canonical serialization, ignoring paths and thread count."""
    semantic = {k: v for k, v in cfg.items() if k not in UNDIGESTED}
    return hashlib.sha256(canonical_json(semantic).encode("utf-8")).hexdigest()


# the parts of the config that feed the build stage (cohort, documents, series)
BUILD_KEYS = ("schema", "cohort", "demographics", "features", "text")


def build_digest(cfg: dict) -> str:
    """Digest of the build-relevant keys only, so later-stage settings reuse the build cache."""
    subset = {k: cfg[k] for k in BUILD_KEYS}
    subset["features"] = {"impute": cfg["features"]["impute"]}
    return hashlib.sha256(canonical_json(subset).encode("utf-8")).hexdigest()


def cohort_config(cfg: dict) -> CohortConfig:
    return CohortConfig(**cfg["cohort"])


def demographic_vocab(cfg: dict) -> DemographicVocab:
    d = cfg["demographics"]
    return DemographicVocab(tuple(d["genders"]), tuple(d["ethnicities"]), tuple(d["insurances"]))


def demographic_encoder(cfg: dict) -> DemographicEncoder:
    d = cfg["demographics"]
    return DemographicEncoder(demographic_vocab(cfg), tuple(d["age_edges"]), d["encoding"])


def hyper_grid(cfg: dict) -> tuple[Hyper, ...]:
    e = cfg["eval"]
    return tuple(Hyper(float(lam), float(e["lr"]), int(e["max_iters"]), float(e["tol"])) for lam in e["lambdas"])
