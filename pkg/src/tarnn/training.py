"""Weighted cross-entropy objective, Adam, and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import WindowedSample, stack_samples
from .errors import ConfigError, ContractError, DataError, NumericError
from .metrics import evaluate_scores
from .models import ModelConfig, ModelParams, forward_trace, init_params

logger = logging.getLogger(__name__)

CLAMP = 1e-12

# positive-class weights used for the two reference tasks
DELTA_AD_CONVERSION = 0.7
DELTA_MORTALITY = 0.65


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.001
    delta: float = DELTA_AD_CONVERSION
    l2_lambda: float = 0.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("need epochs >= 0 and batch_size >= 1")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    val_f2: list[float] = field(default_factory=list)
    val_sensitivity: list[float] = field(default_factory=list)
    val_auc: list[float | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            has_val = bool(self.val_f2)
            w.writerow(["epoch", "loss"] + (["val_f2", "val_sensitivity", "val_auc"] if has_val else []))
            for i, loss in enumerate(self.loss):
                row = [i + 1, repr(loss)]
                if has_val:
                    auc = self.val_auc[i]
                    row += [repr(self.val_f2[i]), repr(self.val_sensitivity[i]), "" if auc is None else repr(auc)]
                w.writerow(row)


# ---------------------------------------------------------------- loss


def weighted_bce_tensor(y, y_hat: Tensor, delta: float) -> Tensor:
    """Differentiable weighted cross-entropy, mean over the batch."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ContractError("weighted_bce needs at least one sample")
    if y.shape != y_hat.shape:
        raise ContractError(f"labels {y.shape} and predictions {y_hat.shape} differ")
    p = ag.clip(y_hat, CLAMP, 1.0 - CLAMP)
    pos = ag.mul(ag.log(p), delta * y)
    neg = ag.mul(ag.log(ag.sub(1.0, p)), (1.0 - delta) * (1.0 - y))
    return ag.mul(ag.tsum(ag.add(pos, neg)), -1.0 / y.size)


def weighted_bce(y, y_hat, delta: float) -> float:
    """``-(1/N) sum(delta*y*log(p) + (1-delta)*(1-y)*log(1-p))`` with ``p`` clamped to
    ``[1e-12, 1 - 1e-12]``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.size != y_hat.size:
        raise ContractError("weighted_bce needs equal, non-empty inputs")
    return weighted_bce_tensor(y, ag.Tensor(y_hat), delta).item()


def l2_penalty(params: ModelParams) -> Tensor:
    terms = [ag.tsum(ag.square(params[k])) for k in params.weight_names()]
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return total


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    cfg: TrainConfig,
) -> AdamState:
    """In-place bias-corrected Adam update; missing gradients count as zero."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return state


# ---------------------------------------------------------------- loop


def batch_loss(params: ModelParams, cfg: ModelConfig, X, E, Dem, y, delta: float,
               l2_lambda: float = 0.0, training: bool = False, rng=None) -> Tensor:
    y_hat = forward_trace(params, cfg, X, E, Dem, training=training, rng=rng).y_hat
    loss = weighted_bce_tensor(y, y_hat, delta)
    if l2_lambda > 0:
        loss = ag.add(loss, ag.mul(l2_penalty(params), l2_lambda))
    return loss


def predict_samples(params: ModelParams, cfg: ModelConfig, samples: Sequence[WindowedSample]) -> np.ndarray:
    X, E, Dem, _ = stack_samples(samples)
    return forward_trace(params, cfg, X, E, Dem if cfg.demographic_size else None).y_hat.data.copy()


def train(
    samples: Sequence[WindowedSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    *,
    et_max: float | None = None,
    unit: str | None = None,
    validation: Sequence[WindowedSample] | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Fit a model on windowed samples with seeded shuffling and Adam.

    ``et_max`` defaults to the largest elapsed time seen in ``samples``.  The
    final short batch of each epoch is kept.  The L2 weight comes from
    ``train_cfg`` and falls back to ``model_cfg.l2_lambda`` when that is zero.
    """
    X, E, Dem, y = stack_samples(samples)
    if model_cfg.demographic_size and Dem.shape[1] != model_cfg.demographic_size:
        raise DataError(f"samples carry {Dem.shape[1]} demographics, config expects {model_cfg.demographic_size}")
    if not model_cfg.demographic_size:
        Dem = None
    if et_max is None:
        et_max = float(E.max()) if E.max() > 0 else 1.0
    if params is None:
        params = init_params(model_cfg, X.shape[-1], et_max, seed=train_cfg.seed, unit=unit)
    history = TrainHistory()
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState()
    named = params.tensors
    l2 = train_cfg.l2_lambda or model_cfg.l2_lambda
    N = len(y)
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            ag.zero_grad(params)
            loss = batch_loss(params, model_cfg, X[idx], E[idx], None if Dem is None else Dem[idx],
                              y[idx], train_cfg.delta, l2, training=True, rng=rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}")
            ag.backward(loss)
            adam_step(named, {k: v.grad for k, v in named.items()}, state, train_cfg)
            total += value * len(idx)
        history.loss.append(total / N)
        if validation:
            scores = evaluate_scores(predict_samples(params, model_cfg, validation),
                                     [s.label for s in validation])
            history.val_f2.append(scores["f2"])
            history.val_sensitivity.append(scores["sensitivity"])
            history.val_auc.append(scores["auc"])
        logger.debug("epoch %d loss %.6f", epoch + 1, history.loss[-1])
    ag.zero_grad(params)
    return params, history
