"""GRU / LSTM cells (uni- and bidirectional) built on the autograd engine.

All step functions accept inputs with arbitrary leading batch dimensions:
``x`` is ``[..., input_size]`` and states are ``[..., hidden_size]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError, DimensionError

CELL_KINDS = ("LSTM", "GRU", "BiLSTM", "BiGRU")

GRU_GATES = ("z", "r", "n")
LSTM_GATES = ("i", "f", "o", "g")


@dataclass(frozen=True)
class CellConfig:
    kind: str
    input_size: int
    hidden_size: int

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ConfigError(f"cell kind {self.kind!r} not in {CELL_KINDS}")
        if self.input_size < 1 or self.hidden_size < 1:
            raise ConfigError("cell sizes must be positive")

    @property
    def bidirectional(self) -> bool:
        return self.kind.startswith("Bi")

    @property
    def base_kind(self) -> str:
        """``"GRU"`` or ``"LSTM"`` regardless of direction."""
        return self.kind[2:] if self.bidirectional else self.kind

    @property
    def width(self) -> int:
        return 2 * self.hidden_size if self.bidirectional else self.hidden_size


@dataclass
class CellParams:
    """One weight dict per direction; keys are ``W_<gate>``, ``U_<gate>``, ``b_<gate>``."""

    forward: dict[str, Tensor]
    backward: dict[str, Tensor] | None = None

    def directions(self) -> list[dict[str, Tensor]]:
        return [self.forward] if self.backward is None else [self.forward, self.backward]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.fwd.{k}": v for k, v in self.forward.items()}
        if self.backward is not None:
            out.update({f"{prefix}.bwd.{k}": v for k, v in self.backward.items()})
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor], prefix: str) -> "CellParams":
        fwd = {k.split(".")[-1]: v for k, v in tensors.items() if k.startswith(f"{prefix}.fwd.")}
        bwd = {k.split(".")[-1]: v for k, v in tensors.items() if k.startswith(f"{prefix}.bwd.")}
        return cls(fwd, bwd or None)


def _init_direction(base_kind: str, input_size: int, hidden_size: int, rng) -> dict[str, Tensor]:
    gates = GRU_GATES if base_kind == "GRU" else LSTM_GATES
    bx, bh = 1.0 / np.sqrt(input_size), 1.0 / np.sqrt(hidden_size)
    p = {}
    for g in gates:
        p[f"W_{g}"] = ag.parameter(rng.uniform(-bx, bx, (input_size, hidden_size)))
        p[f"U_{g}"] = ag.parameter(rng.uniform(-bh, bh, (hidden_size, hidden_size)))
        bias = 1.0 if (base_kind == "LSTM" and g == "f") else 0.0
        p[f"b_{g}"] = ag.parameter(np.full(hidden_size, bias))
    return p


def init_cell_params(cfg: CellConfig, rng: np.random.Generator) -> CellParams:
    fwd = _init_direction(cfg.base_kind, cfg.input_size, cfg.hidden_size, rng)
    bwd = _init_direction(cfg.base_kind, cfg.input_size, cfg.hidden_size, rng) if cfg.bidirectional else None
    return CellParams(fwd, bwd)


def _check(x: Tensor, h: Tensor, p: dict[str, Tensor], gate: str) -> None:
    W, U = p[f"W_{gate}"], p[f"U_{gate}"]
    if x.shape[-1] != W.shape[0] or h.shape[-1] != U.shape[0]:
        raise DimensionError(
            f"cell step: input {x.shape} / state {h.shape} do not match "
            f"weights {W.shape} / {U.shape}"
        )


def _affine(x: Tensor, h: Tensor, p: dict[str, Tensor], gate: str) -> Tensor:
    return ag.add(ag.add(_mm(x, p[f"W_{gate}"]), _mm(h, p[f"U_{gate}"])), p[f"b_{gate}"])


def _mm(v: Tensor, W: Tensor) -> Tensor:
    # vectors are lifted to a one-row matrix so matmul stays 2-d
    if v.ndim == 1:
        return ag.reshape(ag.matmul(ag.reshape(v, (1, -1)), W), (W.shape[1],))
    return ag.matmul(v, W)


def gru_step(x, h, p: dict[str, Tensor]) -> Tensor:
    """One GRU update: ``h' = (1 - z) * n + z * h``."""
    x, h = ag.as_tensor(x), ag.as_tensor(h)
    _check(x, h, p, "z")
    z = ag.sigmoid(_affine(x, h, p, "z"))
    r = ag.sigmoid(_affine(x, h, p, "r"))
    cand = ag.tanh(
        ag.add(ag.add(_mm(x, p["W_n"]), _mm(ag.mul(r, h), p["U_n"])), p["b_n"])
    )
    return ag.add(ag.mul(ag.sub(1.0, z), cand), ag.mul(z, h))


def lstm_step(x, h, c, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM update returning ``(h', c')``."""
    x, h, c = ag.as_tensor(x), ag.as_tensor(h), ag.as_tensor(c)
    _check(x, h, p, "i")
    if c.shape != h.shape:
        raise DimensionError(f"lstm_step: cell state {c.shape} vs hidden {h.shape}")
    i = ag.sigmoid(_affine(x, h, p, "i"))
    f = ag.sigmoid(_affine(x, h, p, "f"))
    o = ag.sigmoid(_affine(x, h, p, "o"))
    g = ag.tanh(_affine(x, h, p, "g"))
    c_new = ag.add(ag.mul(f, c), ag.mul(i, g))
    return ag.mul(o, ag.tanh(c_new)), c_new


def _scan(base_kind: str, xs: list[Tensor], p: dict[str, Tensor], hidden: int) -> list[Tensor]:
    lead = xs[0].shape[:-1]
    h = ag.Tensor(np.zeros(lead + (hidden,)))
    c = ag.Tensor(np.zeros(lead + (hidden,)))
    out = []
    for x in xs:
        if base_kind == "GRU":
            h = gru_step(x, h, p)
        else:
            h, c = lstm_step(x, h, c, p)
        out.append(h)
    return out


def run_rnn(Z, cfg: CellConfig, p: CellParams) -> Tensor:
    """Encode ``Z[..., T, input_size]`` into hidden states ``[..., T, width]``.

    Scans start from zero states.  Bidirectional cells run an independent
    right-to-left scan and concatenate its states after the forward ones.
    """
    Z = ag.as_tensor(Z)
    if Z.ndim < 2:
        raise DimensionError(f"run_rnn expects [..., T, features], got {Z.shape}")
    T = Z.shape[-2]
    if T == 0:
        raise ContractError("run_rnn needs at least one time step")
    if Z.shape[-1] != cfg.input_size:
        raise DimensionError(f"run_rnn: input width {Z.shape[-1]} != {cfg.input_size}")
    xs = [Z[..., t, :] for t in range(T)]
    fwd = _scan(cfg.base_kind, xs, p.forward, cfg.hidden_size)
    if not cfg.bidirectional:
        return ag.stack(fwd, axis=-2)
    bwd = _scan(cfg.base_kind, xs[::-1], p.backward, cfg.hidden_size)[::-1]
    return ag.stack([ag.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)], axis=-2)
