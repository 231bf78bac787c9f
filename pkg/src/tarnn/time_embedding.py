"""Sinusoidal embedding of elapsed visit times and its fusion with visit features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, ContractError, DataError

UNITS = ("years", "days")


@dataclass(frozen=True)
class TimeEmbedConfig:
    d_model: int
    et_max: float

    def __post_init__(self):
        if int(self.d_model) < 1:
            raise ConfigError(f"d_model must be >= 1, got {self.d_model}")
        if not self.et_max > 0:
            raise ConfigError(f"et_max must be positive, got {self.et_max}")


@dataclass(frozen=True)
class ElapsedTimes:
    """Gaps between consecutive visits, zero at the first visit."""

    values: np.ndarray
    unit: str = "years"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if self.unit not in UNITS:
            raise DataError(f"unknown time unit {self.unit!r}; expected one of {UNITS}")
        if vals.ndim != 1 or vals.size == 0:
            raise DataError("elapsed times must be a non-empty 1-d array")
        if vals[0] != 0:
            raise DataError(f"first elapsed time must be 0, got {vals[0]}")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise DataError("elapsed times must be finite and non-negative")

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_visit_times(cls, times, unit: str = "years") -> "ElapsedTimes":
        """Build gaps from absolute visit times (dates expressed as numbers)."""
        times = np.asarray(times, dtype=np.float64)
        gaps = np.concatenate([[0.0], np.diff(times)])
        return cls(gaps, unit)


def _frequencies(cfg: TimeEmbedConfig) -> np.ndarray:
    i = np.arange(cfg.d_model, dtype=np.float64)
    return cfg.et_max ** (2.0 * i / cfg.d_model)


def time_embed_array(e, cfg: TimeEmbedConfig) -> np.ndarray:
    """Vectorised embedding: any array of elapsed times -> ``e.shape + (d_model,)``."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ContractError("elapsed time must be non-negative")
    angles = e[..., None] / _frequencies(cfg)
    out = np.empty_like(angles)
    out[..., 0::2] = np.sin(angles[..., 0::2])
    out[..., 1::2] = np.cos(angles[..., 1::2])
    return out


def time_embed(e: float, cfg: TimeEmbedConfig) -> np.ndarray:
    """Embed one elapsed time.

    Entry ``i`` is ``sin(e / et_max**(2i/d_model))`` for even ``i`` and the
    cosine of the same angle for odd ``i``.
    """
    if e < 0:
        raise ContractError(f"elapsed time must be non-negative, got {e}")
    return time_embed_array(float(e), cfg)


def embed_sequence(
    X,
    E,
    cfg: TimeEmbedConfig,
    proj: ag.Tensor | None = None,
    use_time: bool = True,
) -> ag.Tensor:
    """Fuse visit features with their time embeddings: ``Z = project(X) + TE(E)``.

    ``X`` is ``[..., T, F]`` and ``E`` is ``[..., T]`` (an :class:`ElapsedTimes`
    is accepted for a single sequence).  ``proj`` is the ``F x d_model``
    projection, required exactly when ``F != d_model``.  With
    ``use_time=False`` the time term is dropped, which is how the
    attention-only ablation is built.
    """
    if isinstance(E, ElapsedTimes):
        E = E.values
    X = ag.as_tensor(X)
    E = np.asarray(E, dtype=np.float64)
    F = X.shape[-1]
    if X.shape[:-1] != E.shape:
        raise DataError(f"features {X.shape} and elapsed times {E.shape} disagree on visits")
    if F != cfg.d_model:
        if proj is None:
            raise ConfigError(
                f"feature width {F} != d_model {cfg.d_model} and no projection given"
            )
        if proj.shape != (F, cfg.d_model):
            raise ConfigError(f"projection shape {proj.shape}, expected {(F, cfg.d_model)}")
        base = ag.matmul(X, proj)
    else:
        if proj is not None:
            raise ConfigError("projection given but feature width equals d_model")
        base = X
    if not use_time:
        return base
    return ag.add(base, ag.Tensor(time_embed_array(E, cfg)))
