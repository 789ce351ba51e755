"""Ranking metrics, an L2 logistic-regression baseline and stratified k-fold CV."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given labels (e.g. a single class)."""


class TrainingError(ValueError):
    pass


def _scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 1 or len(s) == 0:
        raise ValueError("scores and labels must be equal-length, non-empty 1-d sequences")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return s, y


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals P(score_pos > score_neg) + 0.5 * P(tie), computed from midranks.
    """
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AU-ROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # midranks over tie groups, 1-based
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: sum over score thresholds of recall gain times precision.

    Tied scores form a single threshold.
    """
    s, y = _scored(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AU-PRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_desc, y_desc = s[order], y[order]
    last_of_group = np.r_[s_desc[1:] != s_desc[:-1], True]
    tp = np.cumsum(y_desc)[last_of_group]
    predicted = (np.flatnonzero(last_of_group) + 1).astype(float)
    precision = tp / predicted
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * precision))


def metrics_report(scores: Sequence[float], labels: Sequence[int]) -> dict:
    """``{auroc, auprc, n, n_pos}``; undefined metrics are reported as ``None``."""
    s, y = _scored(scores, labels)
    out: dict = {"n": int(len(y)), "n_pos": int(y.sum())}
    for name, fn in (("auroc", auroc), ("auprc", auprc)):
        try:
            out[name] = fn(s, y)
        except UndefinedMetricError:
            out[name] = None
    return out


# --- logistic regression -------------------------------------------------


@dataclass(frozen=True)
class Hyper:
    l2_lambda: float = 0.0
    lr: float = 0.1
    max_iters: int = 2000
    tol: float = 1e-8


DEFAULT_GRID: tuple[Hyper, ...] = tuple(Hyper(l2_lambda=lam) for lam in (0.0, 0.001, 0.01, 0.1, 1.0))


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    hyper: Hyper
    iterations: int = 0
    initial_loss: float = math.nan
    final_loss: float = math.nan
    loss_history: list[float] = field(default_factory=list, repr=False)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.mean) / self.std
        return Z @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "hyper": asdict(self.hyper),
            "iterations": self.iterations,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LogRegModel:
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            bias=float(d["bias"]),
            mean=np.asarray(d["mean"], dtype=float),
            std=np.asarray(d["std"], dtype=float),
            hyper=Hyper(**d["hyper"]),
            iterations=int(d.get("iterations", 0)),
            initial_loss=float(d.get("initial_loss", math.nan)),
            final_loss=float(d.get("final_loss", math.nan)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> LogRegModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def log_loss(params: np.ndarray, Z: np.ndarray, y: np.ndarray, l2_lambda: float) -> float:
    """Mean logistic loss plus ``l2_lambda / 2 * ||w||^2``; ``params = [w..., b]``."""
    w, b = params[:-1], params[-1]
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2_lambda * np.dot(w, w))


def log_loss_grad(params: np.ndarray, Z: np.ndarray, y: np.ndarray, l2_lambda: float) -> np.ndarray:
    """Analytic gradient of :func:`log_loss` with respect to ``[w..., b]``."""
    w, b = params[:-1], params[-1]
    r = _sigmoid(Z @ w + b) - y
    g = np.empty_like(params)
    g[:-1] = Z.T @ r / len(y) + l2_lambda * w
    g[-1] = r.mean()
    return g


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError(f"X shape {X.shape} inconsistent with {len(y)} labels")
    if not np.isfinite(X).all():
        raise TrainingError("non-finite feature value")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError("labels must be 0/1")
    if y.min() == y.max():
        raise TrainingError("training data has a single class")
    return X, y


def train_logreg(X, y, hyper: Hyper = Hyper()) -> LogRegModel:
    """Full-batch gradient descent from zero weights on standardized features.

    A step that would raise the loss is rejected and the learning rate
    halved, so the recorded loss sequence never increases. Zero-variance
    features get std 1 and their weight stays at 0.
    """
    X, y = _check_xy(X, y)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std == 0
    std = np.where(constant, 1.0, std)
    Z = (X - mean) / std
    free = np.r_[~constant, True]

    params = np.zeros(X.shape[1] + 1)
    loss = log_loss(params, Z, y, hyper.l2_lambda)
    history = [loss]
    lr = hyper.lr
    it = 0
    while it < hyper.max_iters:
        it += 1
        grad = log_loss_grad(params, Z, y, hyper.l2_lambda) * free
        while True:
            cand = params - lr * grad
            new_loss = log_loss(cand, Z, y, hyper.l2_lambda)
            if new_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        if new_loss > loss:
            break
        params, delta, loss = cand, loss - new_loss, new_loss
        history.append(loss)
        if delta < hyper.tol:
            break
    return LogRegModel(
        weights=params[:-1].copy(),
        bias=float(params[-1]),
        mean=mean,
        std=std,
        hyper=hyper,
        iterations=it,
        initial_loss=history[0],
        final_loss=loss,
        loss_history=history,
    )


def stratified_folds(y: Sequence[int], folds: int, seed: int) -> list[np.ndarray]:
    """Index arrays for ``folds`` stratified folds (shuffled per class, dealt round-robin)."""
    y = np.asarray(y, dtype=int)
    if folds < 2 or len(y) < folds:
        raise TrainingError(f"need at least {folds} >= 2 rows for {folds}-fold CV")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == c))
        for k, i in enumerate(idx):
            buckets[(offset + k) % folds].append(int(i))
        offset += len(idx)
    out = [np.sort(np.asarray(b, dtype=int)) for b in buckets]
    for k, idx in enumerate(out):
        if len(set(y[idx].tolist())) < 2:
            raise TrainingError(f"fold {k} does not contain both classes")
    return out


@dataclass
class CVResult:
    best: Hyper
    mean_auroc: dict[Hyper, float]
    fold_metrics: dict[Hyper, list[dict]]

    def to_dict(self) -> dict:
        return {
            "best": asdict(self.best),
            "grid": [
                {"hyper": asdict(h), "mean_auroc": self.mean_auroc[h], "folds": self.fold_metrics[h]}
                for h in self.mean_auroc
            ],
        }


def cross_validate(
    X,
    y,
    folds: int = 5,
    grid: Sequence[Hyper] = DEFAULT_GRID,
    seed: int = 0,
    threads: int = 1,
) -> CVResult:
    """Pick the hyperparameters with the best mean held-out AU-ROC (first wins ties)."""
    X, y = _check_xy(X, y)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    parts = stratified_folds(y, folds, seed)
    all_idx = np.arange(len(y))

    def run(job: tuple[Hyper, int]) -> dict:
        hyper, k = job
        test = parts[k]
        train = np.setdiff1d(all_idx, test, assume_unique=True)
        model = train_logreg(X[train], y[train], hyper)
        report = metrics_report(model.decision_function(X[test]), y[test])
        report["fold"] = k
        return report

    jobs = list(product(grid, range(folds)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    fold_metrics: dict[Hyper, list[dict]] = {h: [] for h in grid}
    for (h, _), rep in zip(jobs, results):
        fold_metrics[h].append(rep)
    mean_auroc = {h: float(np.mean([r["auroc"] for r in reps])) for h, reps in fold_metrics.items()}
    best = max(grid, key=lambda h: (mean_auroc[h], -grid.index(h)))
    logger.info("cv mean AU-ROC by lambda: %s", {h.l2_lambda: round(v, 4) for h, v in mean_auroc.items()})
    return CVResult(best, mean_auroc, fold_metrics)
