"""Classification metrics for the target test split."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import UNLABELED, DomainDataset
from .errors import UsageError
from .networks import IdianModel, predict_proba

PAIRWISE_LIMIT = 10_000


def auc_pairwise(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties worth one half."""
    scores, labels = _check_binary(scores, labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = int(np.count_nonzero(pos[:, None] > neg[None, :]))
    ties = int(np.count_nonzero(pos[:, None] == neg[None, :]))
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def auc_ranksum(scores, labels) -> float:
    """Mann-Whitney U from mid-ranks, normalised by the pair count."""
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scores, labels) -> float:
    if len(scores) <= PAIRWISE_LIMIT:
        return auc_pairwise(scores, labels)
    return auc_ranksum(scores, labels)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("AUC labels must be 0/1")
    if labels.min(initial=1) == labels.max(initial=0):
        raise ValueError("AUC is undefined unless both classes are present")
    return scores, labels


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts indexed [true class, predicted class]."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def _safe_ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def precision_recall_f1(cm: np.ndarray, positive: int | None = 1) -> tuple[float, float, float, bool]:
    """Binary scores for class ``positive``, or macro averages when ``positive`` is None.

    Zero denominators give 0 and set the returned degenerate flag.
    """
    classes = [positive] if positive is not None else range(cm.shape[0])
    ps, rs, fs, degenerate = [], [], [], False
    for c in classes:
        tp = cm[c, c]
        p, d1 = _safe_ratio(tp, cm[:, c].sum())
        r, d2 = _safe_ratio(tp, cm[c, :].sum())
        f, d3 = _safe_ratio(2 * p * r, p + r)
        degenerate |= d1 or d2 or d3
        ps.append(p), rs.append(r), fs.append(f)
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)), degenerate


@dataclass
class EvalReport:
    acc: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    confusion: list[list[int]]
    n_eval: int
    n_excluded: int = 0
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def report_from_predictions(y_true, probs, n_classes: int, n_excluded: int = 0) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    y_pred = probs.argmax(axis=1)
    cm = confusion_matrix(y_true, y_pred, n_classes)
    n = int(cm.sum())
    acc = float(np.trace(cm) / n) if n else 0.0
    binary = n_classes == 2
    p, r, f1, degenerate = precision_recall_f1(cm, 1 if binary else None)
    area = None
    if binary and len(np.unique(y_true)) == 2:
        area = auc(probs[:, 1], y_true)
    return EvalReport(acc, p, r, f1, area, cm.tolist(), n, n_excluded, degenerate)


def evaluate(model: IdianModel, test: DomainDataset, eval_seed: int = 0,
             use_imputation: bool = True) -> EvalReport:
    """Predict every labeled test row (unlabeled ones are counted and skipped)."""
    if test.dim != model.d_t:
        raise UsageError(f"test data has {test.dim} features, model expects {model.d_t}")
    keep = np.flatnonzero(test.labels != UNLABELED)
    probs = predict_proba(model, test.features[keep], test.masks[keep], eval_seed, rows=keep,
                          use_imputation=use_imputation)
    return report_from_predictions(test.labels[keep], probs, model.n_classes, len(test) - len(keep))
