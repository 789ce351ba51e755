"""Stage functions behind the command line: build, export, evaluate, report.

Every stage reads the run config dict (see :mod:`ehrtext.config`) and
writes into an output directory. ``build`` caches its result under
``<out>/cache`` keyed by the build digest and the input file stamps.
"""

from __future__ import annotations

import hashlib
import json
import logging
import pickle
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as C
from .emit import DatasetKind, DatasetRecord, Split, oversample, split_cohort, write_dataset
from .ehr_model import FeatureVocabulary, validate_stay
from .evaluate import cross_validate, metrics_report, train_logreg
from .features import FeatureMatrix, build_matrix, prepare_series
from .ingest import Cohort, TimeBinnedSeries, build_cohort, load_schema, load_tables
from .synth import SynthConfig, generate
from .textualize import PatientDocument, parse_groups, render_document
from .zeroshot import ClientConfig, HarnessRecord, make_client, run_harness

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@dataclass
class BuildArtifacts:
    digest: str
    cohort: Cohort
    vocab: FeatureVocabulary
    series: list[TimeBinnedSeries]
    documents: list[PatientDocument]
    load_report: dict
    render_stats: dict


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise PipelineError(f"missing {path}; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def run_synth(cfg: dict, data_dir: str | Path) -> dict:
    params = {k: v for k, v in cfg["synth"].items() if k != "seed"}
    params.setdefault("observation_window_hours", cfg["cohort"]["observation_window_hours"])
    return generate(SynthConfig(seed=cfg["seed"], **params), data_dir)


def _input_stamp(data_dir: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(data_dir.glob("*.csv")):
        st = p.stat()
        h.update(f"{p.name}:{st.st_size}:{st.st_mtime_ns};".encode())
    return h.hexdigest()[:16]


def run_build(cfg: dict, data_dir: str | Path, out_dir: str | Path) -> BuildArtifacts:
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    digest = C.build_digest(cfg)
    cache = out_dir / "cache" / f"build-{digest[:16]}-{_input_stamp(data_dir)}.pkl"
    if cache.is_file():
        with open(cache, "rb") as fh:
            art = pickle.load(fh)
        logger.info("build: reusing %s", cache.name)
    else:
        ccfg = C.cohort_config(cfg)
        raw = load_tables(data_dir, load_schema(cfg["schema"]))
        cohort, vocab = build_cohort(raw, ccfg, C.demographic_vocab(cfg))
        bad = {s.stay_id: v for s in cohort if (v := validate_stay(s, vocab))}
        if bad:
            raise PipelineError(f"{len(bad)} stays failed validation, e.g. {next(iter(bad.items()))}")
        series = prepare_series(cohort.records, ccfg, vocab, cfg["features"]["impute"])
        stats: Counter = Counter()
        groups = parse_groups(cfg["text"]["groups"])
        docs = [render_document(s, ser, vocab, groups, stats) for s, ser in zip(cohort, series)]
        art = BuildArtifacts(digest, cohort, vocab, series, docs, raw.report, dict(stats))
        cache.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(art, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(cache)

    manifest = {
        "build_digest": digest,
        "counts": {
            "cohort": len(art.cohort),
            "positive": int(art.cohort.labels.sum()),
            "documents": len(art.documents),
        },
        "exclusions": art.cohort.exclusions,
        "load_report": art.load_report,
        "render_stats": art.render_stats,
        "vocabulary": {
            "cond_codes": len(art.vocab.cond_codes),
            **{g.value: len(ids) for g, ids in art.vocab.dynamic_items.items()},
        },
    }
    _write_json(out_dir / "build_manifest.json", manifest)
    return art


def feature_matrix(cfg: dict, art: BuildArtifacts, representation: str | None = None) -> FeatureMatrix:
    rep = representation or cfg["features"]["representation"]
    return build_matrix(art.cohort.records, art.series, art.vocab, C.demographic_encoder(cfg), rep, C.cohort_config(cfg).n_windows)


def split_ids(cfg: dict, art: BuildArtifacts) -> tuple[list[str], list[str]]:
    ids = [s.stay_id for s in art.cohort]
    return split_cohort(ids, art.cohort.labels, cfg["split"]["test_fraction"], cfg["seed"])


def _ordered_records(cfg: dict, art: BuildArtifacts, make) -> list[DatasetRecord]:
    train_ids, test_ids = split_ids(cfg, art)
    pos = {s.stay_id: i for i, s in enumerate(art.cohort)}
    train = [make(pos[sid], Split.TRAIN) for sid in train_ids]
    if cfg["split"]["oversample"]:
        train = oversample(train, cfg["seed"])
    return train + [make(pos[sid], Split.TEST) for sid in test_ids]


def run_export(cfg: dict, art: BuildArtifacts, out_dir: str | Path) -> dict:
    """Write the text dataset and the tabular dataset; returns both manifests."""
    out_dir = Path(out_dir)
    digest = C.config_digest(cfg)
    cohort = art.cohort.records

    text_records = _ordered_records(
        cfg, art, lambda i, split: DatasetRecord(cohort[i].stay_id, cohort[i].label, split, text=art.documents[i].full_text)
    )
    text_manifest = write_dataset(text_records, out_dir / "text.jsonl", DatasetKind.TEXT_JSONL, config_digest=digest)

    fm = feature_matrix(cfg, art)
    layout = {**fm.layout.descriptor(), "layout_id": fm.layout.layout_id, "slot_names": fm.layout.slot_names()}
    tab_records = _ordered_records(
        cfg,
        art,
        lambda i, split: DatasetRecord(
            cohort[i].stay_id, cohort[i].label, split, features=tuple(fm.X[i].tolist()), layout_id=fm.layout.layout_id
        ),
    )
    tab_name = f"tabular_{fm.layout.mode.value}.csv"
    tab_manifest = write_dataset(tab_records, out_dir / tab_name, DatasetKind.TABULAR_CSV, config_digest=digest, layout=layout)
    return {"text": text_manifest, "tabular": tab_manifest}


def run_eval_tabular(cfg: dict, art: BuildArtifacts, out_dir: str | Path) -> dict:
    """Cross-validated logistic regression on the train split, scored on the test split."""
    out_dir = Path(out_dir)
    fm = feature_matrix(cfg, art)
    train_ids, test_ids = split_ids(cfg, art)
    pos = {sid: i for i, sid in enumerate(fm.stay_ids)}
    tr = np.array([pos[s] for s in train_ids])
    te = np.array([pos[s] for s in test_ids])
    cv = cross_validate(fm.X[tr], fm.labels[tr], cfg["eval"]["folds"], C.hyper_grid(cfg), cfg["seed"], cfg["threads"])
    model = train_logreg(fm.X[tr], fm.labels[tr], cv.best)
    model.save(out_dir / "logreg_model.json")
    result = {
        "method": "logistic_regression",
        "representation": fm.layout.mode.value,
        "n_features": fm.layout.total_dim,
        "config_digest": C.config_digest(cfg),
        "cv": cv.to_dict(),
        "test": metrics_report(model.decision_function(fm.X[te]), fm.labels[te]),
    }
    _write_json(out_dir / "eval_tabular.json", result)
    return result


def run_eval_zeroshot(cfg: dict, art: BuildArtifacts, out_dir: str | Path) -> dict:
    """Prompt the configured endpoint for every test-split stay."""
    out_dir = Path(out_dir)
    z = cfg["zeroshot"]
    client_cfg = ClientConfig.from_dict(z["client"])
    _, test_ids = split_ids(cfg, art)
    pos = {s.stay_id: i for i, s in enumerate(art.cohort)}
    records = [HarnessRecord(sid, art.documents[pos[sid]].full_text, art.cohort[pos[sid]].label) for sid in test_ids]
    prompt = z["prompt"].lower()
    result = run_harness(
        records,
        prompt,
        make_client(client_cfg),
        budget=int(z["budget"]),
        max_in_flight=client_cfg.max_in_flight,
        audit_path=out_dir / f"zeroshot_audit_{prompt}.jsonl",
        default_level=z["default_level"],
    )
    summary = {
        "method": "zeroshot",
        "model": client_cfg.model,
        "config_digest": C.config_digest(cfg),
        # predictions are 0/1, so the curves have a single operating point
        "score_kind": "binary",
        **result.summary(),
    }
    _write_json(out_dir / f"eval_zeroshot_{prompt}.json", summary)
    return summary


def run_report(out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    rows = []
    tab = out_dir / "eval_tabular.json"
    if tab.is_file():
        t = _read_json(tab)
        rows.append({"method": t["method"], "representation": t["representation"], **{k: t["test"][k] for k in ("auroc", "auprc", "n", "n_pos")}})
    for path in sorted(out_dir.glob("eval_zeroshot_*.json")):
        z = _read_json(path)
        rows.append(
            {
                "method": "zeroshot",
                "prompt": z["prompt"],
                "model": z["model"],
                "auroc": z["auroc"],
                "auprc": z["auprc"],
                "n": z["n"],
                "n_pos": z["n_pos"],
                "n_answered": z["n_answered"],
                "n_unanswered": z["n_unanswered"],
                "pct_unanswered": z["pct_unanswered"],
            }
        )
    if not rows:
        raise PipelineError(f"no evaluation results under {out_dir}")
    report = {"results": rows}
    _write_json(out_dir / "report.json", report)
    return report
