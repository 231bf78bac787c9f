"""Visit-level and feature-level attention over RNN hidden states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError


@dataclass
class AttentionParams:
    """``W_alpha``: ``[width, 1]``; ``b_alpha``: ``[1]``;
    ``W_beta``: ``[width, d_model]``; ``b_beta``: ``[d_model]``."""

    W_alpha: Tensor
    b_alpha: Tensor
    W_beta: Tensor
    b_beta: Tensor

    @property
    def width(self) -> int:
        return self.W_alpha.shape[0]

    @property
    def d_model(self) -> int:
        return self.W_beta.shape[1]

    def named(self, prefix: str = "attn") -> dict[str, Tensor]:
        return {
            f"{prefix}.W_alpha": self.W_alpha,
            f"{prefix}.b_alpha": self.b_alpha,
            f"{prefix}.W_beta": self.W_beta,
            f"{prefix}.b_beta": self.b_beta,
        }

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor], prefix: str = "attn") -> "AttentionParams":
        return cls(*(tensors[f"{prefix}.{k}"] for k in ("W_alpha", "b_alpha", "W_beta", "b_beta")))


def init_attention_params(width: int, d_model: int, rng: np.random.Generator) -> AttentionParams:
    bound = 1.0 / np.sqrt(width)
    return AttentionParams(
        W_alpha=ag.parameter(rng.uniform(-bound, bound, (width, 1))),
        b_alpha=ag.parameter(np.zeros(1)),
        W_beta=ag.parameter(rng.uniform(-bound, bound, (width, d_model))),
        b_beta=ag.parameter(np.zeros(d_model)),
    )


def _check_width(H: Tensor, p: AttentionParams) -> None:
    if H.ndim < 2 or H.shape[-1] != p.width:
        raise DimensionError(f"hidden states {H.shape} do not match attention width {p.width}")


def visit_attention(H, p: AttentionParams) -> Tensor:
    """Softmax over visits of ``H @ W_alpha + b_alpha``; returns ``[..., t]``."""
    H = ag.as_tensor(H)
    _check_width(H, p)
    scores = ag.add(ag.matmul(H, p.W_alpha), p.b_alpha)
    scores = ag.reshape(scores, H.shape[:-1])
    return ag.softmax(scores, axis=-1)


def feature_attention(H, p: AttentionParams) -> Tensor:
    """Per-visit softmax over ``tanh(H @ W_beta + b_beta)``; returns ``[..., t, d_model]``."""
    H = ag.as_tensor(H)
    _check_width(H, p)
    raw = ag.tanh(ag.add(ag.matmul(H, p.W_beta), p.b_beta))
    return ag.softmax(raw, axis=-1)


def context_vector(alpha, beta, Z) -> Tensor:
    """``c = sum_j alpha[j] * beta[j] * Z[j]`` over the visit axis."""
    alpha, beta, Z = ag.as_tensor(alpha), ag.as_tensor(beta), ag.as_tensor(Z)
    if beta.shape != Z.shape or alpha.shape != Z.shape[:-1]:
        raise DimensionError(
            f"context_vector: alpha {alpha.shape}, beta {beta.shape}, Z {Z.shape} disagree"
        )
    weighted = ag.mul(ag.mul(ag.expand_dims(alpha, -1), beta), Z)
    return ag.tsum(weighted, axis=-2)
