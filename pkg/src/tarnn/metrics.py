"""Binary classification metrics: confusion counts, F-beta, sensitivity, ROC AUC.

Degenerate denominators return 0 rather than NaN so that means over repeated
runs stay finite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(y_hat, y) -> tuple[np.ndarray, np.ndarray]:
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if y_hat.size != y.size:
        raise ContractError(f"length mismatch: {y_hat.size} predictions, {y.size} labels")
    if y.size == 0:
        raise ContractError("metrics need at least one sample")
    return y_hat, y.astype(int)


def confusion(y_hat, y, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with a positive call whenever ``y_hat >= threshold``."""
    y_hat, y = _pair(y_hat, y)
    pred = y_hat >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def precision(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0


def sensitivity(c: ConfusionCounts) -> float:
    """Recall of the positive class, ``tp / (tp + fn)``."""
    return c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0


recall = sensitivity


def f_beta(c: ConfusionCounts, beta: float = 2.0) -> float:
    if beta <= 0:
        raise ContractError(f"beta must be positive, got {beta}")
    if c.tp == 0:
        return 0.0
    p, r = precision(c), sensitivity(c)
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


def f_beta_from_pr(p: float, r: float, beta: float = 2.0) -> float:
    """F-beta straight from precision and recall (0 when both are 0)."""
    b2 = beta * beta
    denom = b2 * p + r
    return (1 + b2) * p * r / denom if denom > 0 else 0.0


def auc_roc(y_hat, y) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    y_hat, y = _pair(y_hat, y)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    ranks = rankdata(y_hat)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_scores(y_hat, y, threshold: float = 0.5) -> dict:
    """F2, sensitivity, AUC (``None`` when undefined) and confusion counts."""
    c = confusion(y_hat, y, threshold)
    try:
        auc = auc_roc(y_hat, y)
    except UndefinedMetricError:
        auc = None
    return {
        "f2": f_beta(c, 2.0),
        "sensitivity": sensitivity(c),
        "auc": auc,
        **c.as_dict(),
    }
