"""Linear-probing evaluation: frozen embeddings → logistic regression.

Protocol per task: split accounts 80/20 by account-id hash, fit a standard
scaler on training rows only, optionally undersample the training split
(risk tasks, 1 positive : 4 negatives), fit multinomial logistic regression
by deterministic full-batch gradient descent, and score the untouched
evaluation split. Scores are min-max normalized across methods per (task,
metric) and summarized as rank histograms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .synthgen import TASK_IDS
from .util import (canonical_json, derived_rng, provenance_line, split_fraction,
                   stable_hash)

TRAIN_FRACTION = 0.8
SPLIT_SALT = "probe-split"
DEFAULT_L2 = 1e-4
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6
RISK_UNDERSAMPLE_RATIO = 4


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    group: str  # demographics | risk | banking | geolocation
    kind: str  # binary | multiclass
    n_classes: int
    metric_ids: tuple[str, ...]  # primary metric first
    undersample_ratio: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("binary", "multiclass"):
            raise ValueError(f"bad kind {self.kind}")
        if self.kind == "binary" and self.n_classes != 2:
            raise ValueError("binary task must have 2 classes")
        for m in self.metric_ids:
            if m not in metrics.METRIC_IDS:
                raise ValueError(f"unknown metric {m}")
            if m == "pr" and self.kind != "binary":
                raise ValueError("pr_auc is binary-only")


def _binary(task_id, group, metric_ids, undersample=None):
    return TaskSpec(task_id, group, "binary", 2, metric_ids, undersample)


def _multi(task_id, group, n_classes, metric_ids):
    return TaskSpec(task_id, group, "multiclass", n_classes, metric_ids)


TASK_SPECS: dict[str, TaskSpec] = {spec.task_id: spec for spec in [
    # demographics — primary metrics mirror the table rows (acc / roc / acc)
    _binary("gender", "demographics", ("acc", "roc")),
    _multi("1st_name", "demographics", 50, ("roc", "f1", "acc")),
    _multi("age", "demographics", 9, ("acc", "f1")),
    # risk — undersampled 1:4 on the training split only
    _binary("nsf", "risk", ("roc", "pr"), RISK_UNDERSAMPLE_RATIO),
    _binary("stop", "risk", ("pr", "roc"), RISK_UNDERSAMPLE_RATIO),
    _binary("unauth", "risk", ("pr", "roc"), RISK_UNDERSAMPLE_RATIO),
    _binary("frozen", "risk", ("pr", "roc"), RISK_UNDERSAMPLE_RATIO),
    _binary("suf", "risk", ("pr", "roc"), RISK_UNDERSAMPLE_RATIO),
    _binary("ret", "risk", ("pr", "roc"), RISK_UNDERSAMPLE_RATIO),
    # banking
    _binary("debit_card", "banking", ("roc", "acc")),
    _multi("inc", "banking", 50, ("roc", "f1", "acc")),
    _multi("bal", "banking", 50, ("roc", "f1", "acc")),
    _multi("fi", "banking", 50, ("f1", "acc")),
    _binary("act_type", "banking", ("f1", "acc")),
    _binary("act_prof", "banking", ("f1", "acc")),
    # geolocation
    _multi("state1", "geolocation", 50, ("f1", "acc")),
    _multi("city1", "geolocation", 50, ("f1", "acc")),
    _multi("state2", "geolocation", 50, ("f1", "acc")),
    _multi("city2", "geolocation", 50, ("f1", "acc")),
]}

assert tuple(TASK_SPECS) == TASK_IDS, "task table out of sync with generator"


def split_accounts(account_ids: Sequence[str],
                   train_fraction: float = TRAIN_FRACTION):
    """Deterministic hash split; identical across runs and methods."""
    fracs = np.array([split_fraction(a, SPLIT_SALT) for a in account_ids])
    train = np.flatnonzero(fracs < train_fraction)
    evaln = np.flatnonzero(fracs >= train_fraction)
    return train, evaln


def standard_scale(train: np.ndarray, evaln: np.ndarray):
    """Scale both splits with TRAINING statistics; constant dims map to 0."""
    if train.shape[0] < 2:
        raise ValueError("standard scaler needs at least 2 training rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    train_s = (train - mean) / safe
    eval_s = (evaln - mean) / safe if evaln.size else evaln.copy()
    zero = std == 0
    if zero.any():
        train_s[:, zero] = 0.0
        if eval_s.size:
            eval_s[:, zero] = 0.0
    return train_s, eval_s, mean, std


@dataclass
class LinearModel:
    weights: np.ndarray  # (n_features, n_classes)
    bias: np.ndarray  # (n_classes,)
    n_iters: int
    grad_norm: float


def _softmax(z):
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def _lipschitz_bound(x: np.ndarray, l2: float) -> float:
    """Upper bound on the softmax-CE gradient Lipschitz constant.

    L <= 0.5 * sigma_max(X)^2 / n + l2; sigma_max^2 via power iteration.
    """
    n = x.shape[0]
    v = np.full(x.shape[1], 1.0 / np.sqrt(x.shape[1]))
    s = 1.0
    for _ in range(100):
        w = x.T @ (x @ v)
        s = np.linalg.norm(w)
        if s == 0:
            break
        v = w / s
    return 0.5 * s / n + l2


def fit_logreg(x: np.ndarray, y: np.ndarray, n_classes: int,
               l2: float = DEFAULT_L2, max_iter: int = DEFAULT_MAX_ITER,
               tol: float = DEFAULT_TOL) -> LinearModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Deterministic: zero initialization, fixed 1/L step size, stop on
    iteration budget or gradient norm below tol. Bias is unregularized.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if np.unique(y).size < 2:
        raise ValueError("training labels contain a single class")
    n, f = x.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((f, n_classes))
    b = np.zeros(n_classes)
    step = 1.0 / _lipschitz_bound(x, l2)
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = _softmax(x @ w + b)
        d = (p - onehot) / n
        gw = x.T @ d + l2 * w
        gb = d.sum(axis=0)
        gnorm = float(np.sqrt((gw * gw).sum() + (gb * gb).sum()))
        if gnorm < tol:
            break
        w -= step * gw
        b -= step * gb
    return LinearModel(weights=w, bias=b, n_iters=it, grad_norm=gnorm)


def predict_proba(model: LinearModel, x: np.ndarray) -> np.ndarray:
    return _softmax(np.asarray(x, dtype=np.float64) @ model.weights + model.bias)


def evaluate(model: LinearModel, x_eval: np.ndarray, y_eval: np.ndarray,
             spec: TaskSpec) -> dict[str, float]:
    """Score the evaluation split on every metric the task declares."""
    probs = predict_proba(model, x_eval)
    preds = probs.argmax(axis=1)
    out: dict[str, float] = {}
    for mid in spec.metric_ids:
        if mid == "acc":
            out[mid] = metrics.accuracy(y_eval, preds)
        elif mid == "f1":
            out[mid] = metrics.f1_macro(y_eval, preds, spec.n_classes)
        elif mid == "roc":
            if spec.kind == "binary":
                out[mid] = metrics.roc_auc(y_eval == 1, probs[:, 1])
            else:
                out[mid] = metrics.ovr_macro_roc_auc(y_eval, probs, spec.n_classes)
        elif mid == "pr":
            out[mid] = metrics.pr_auc(y_eval == 1, probs[:, 1])
        else:
            raise ValueError(f"metric {mid} invalid for task {spec.task_id}")
    return out


def undersample(labels: np.ndarray, ratio: int, seed: int) -> np.ndarray:
    """Row indices keeping all positives and at most ratio× negatives.

    Negatives are drawn without replacement; the result is sorted so row
    order stays stable. Training split only — never the evaluation split.
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size == 0:
        raise ValueError("undersample requires at least one positive")
    k = min(neg.size, ratio * pos.size)
    rng = derived_rng(seed, "undersample")
    picked = rng.choice(neg, size=k, replace=False) if k else np.empty(0, dtype=int)
    return np.sort(np.concatenate([pos, picked]))


def encode_task_labels(raw_labels: dict[str, object], spec: TaskSpec):
    """Map raw label values to dense class indices (sorted value order)."""
    values = sorted({str(v) for v in raw_labels.values()})
    if len(values) > spec.n_classes:
        raise ValueError(f"{spec.task_id}: {len(values)} observed classes "
                         f"exceed declared {spec.n_classes}")
    if spec.kind == "binary":
        mapping = {"False": 0, "True": 1, "0": 0, "1": 1}
        if not set(values) <= set(mapping):
            mapping = {v: i for i, v in enumerate(values)}
    else:
        mapping = {v: i for i, v in enumerate(values)}
    return {acct: mapping[str(v)] for acct, v in raw_labels.items()}


@dataclass
class ScoreEntry:
    method: str
    task: str
    metric: str
    raw: float
    normalized: float = float("nan")
    rank: int = 0


def probe_task(embeddings: np.ndarray, account_ids: Sequence[str],
               class_labels: dict[str, int], spec: TaskSpec, seed: int,
               l2: float = DEFAULT_L2, max_iter: int = DEFAULT_MAX_ITER):
    """Full protocol for one (method, task); returns metric → score."""
    keep = [i for i, a in enumerate(account_ids) if a in class_labels]
    ids = [account_ids[i] for i in keep]
    x = embeddings[keep]
    y = np.array([class_labels[a] for a in ids])
    train_idx, eval_idx = split_accounts(ids)
    if train_idx.size < 2 or eval_idx.size < 1:
        raise ValueError(f"{spec.task_id}: split too small to probe")
    x_train, x_eval, _, _ = standard_scale(x[train_idx], x[eval_idx])
    y_train, y_eval = y[train_idx], y[eval_idx]
    if spec.undersample_ratio is not None:
        task_seed = stable_hash(seed, "probe-undersample", spec.task_id)
        rows = undersample(y_train, spec.undersample_ratio, task_seed)
        x_train, y_train = x_train[rows], y_train[rows]
    model = fit_logreg(x_train, y_train, spec.n_classes, l2=l2, max_iter=max_iter)
    return evaluate(model, x_eval, y_eval, spec)


def run_probe(method_embeddings: dict[str, tuple[Sequence[str], np.ndarray]],
              task_labels: dict[str, dict[str, object]], seed: int,
              tasks: Optional[Sequence[str]] = None,
              l2: float = DEFAULT_L2, max_iter: int = DEFAULT_MAX_ITER,
              quiet: bool = False) -> list[ScoreEntry]:
    """Probe every (method, task) pair and return the normalized table."""
    entries: list[ScoreEntry] = []
    task_list = list(tasks) if tasks is not None else list(TASK_SPECS)
    for task_id in task_list:
        spec = TASK_SPECS[task_id]
        encoded = encode_task_labels(task_labels[task_id], spec)
        for method in sorted(method_embeddings):
            ids, emb = method_embeddings[method]
            scores = probe_task(emb, ids, encoded, spec, seed, l2, max_iter)
            for mid, value in scores.items():
                entries.append(ScoreEntry(method, task_id, mid, value))
            if not quiet:
                primary = spec.metric_ids[0]
                print(f"[probe] {task_id:<10s} {method:<10s} "
                      f"{primary}={scores[primary]:.4f}")
    return normalize_scores(entries)


def normalize_scores(entries: list[ScoreEntry]) -> list[ScoreEntry]:
    """Min-max normalize across methods per (task, metric) and rank.

    All-equal raw scores map to 1.0 for every method. Ranks run 1..n by
    descending raw score; ties share the better (smaller) rank.
    """
    by_key: dict[tuple[str, str], list[ScoreEntry]] = {}
    for e in entries:
        by_key.setdefault((e.task, e.metric), []).append(e)
    for group in by_key.values():
        raws = np.array([e.raw for e in group])
        lo, hi = raws.min(), raws.max()
        for e in group:
            e.normalized = 1.0 if hi == lo else (e.raw - lo) / (hi - lo)
            e.rank = 1 + int((raws > e.raw).sum())
    return entries


def rank_distribution(entries: list[ScoreEntry]) -> dict[str, np.ndarray]:
    """Per-method histogram over ranks 1..n_methods (Figure-style summary)."""
    methods = sorted({e.method for e in entries})
    hist = {m: np.zeros(len(methods), dtype=int) for m in methods}
    for e in entries:
        hist[e.method][e.rank - 1] += 1
    return hist


def write_score_csv(path: str, entries: list[ScoreEntry], cfg_hash: str,
                    seed: int) -> None:
    rows = sorted(entries, key=lambda e: (e.task, e.metric, e.method))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(provenance_line(cfg_hash, seed))
        fh.write("method,task,metric,raw,normalized,rank\n")
        for e in rows:
            fh.write(f"{e.method},{e.task},{e.metric},"
                     f"{e.raw:.6f},{e.normalized:.6f},{e.rank}\n")


def read_score_csv(path: str) -> list[ScoreEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("method,"):
                continue
            method, task, metric, raw, norm, rank = line.rstrip("\n").split(",")
            entries.append(ScoreEntry(method, task, metric, float(raw),
                                      float(norm), int(rank)))
    return entries


def write_summary_json(path: str, entries: list[ScoreEntry], cfg_hash: str,
                       seed: int) -> None:
    hist = rank_distribution(entries)
    methods = sorted(hist)
    mean_norm = {m: float(np.mean([e.normalized for e in entries if e.method == m]))
                 for m in methods}
    payload = {
        "config_hash": cfg_hash,
        "seed": seed,
        "methods": methods,
        "mean_normalized": mean_norm,
        "rank_histogram": {m: hist[m].tolist() for m in methods},
        "n_task_metric_pairs": len({(e.task, e.metric) for e in entries}),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload) + "\n")
