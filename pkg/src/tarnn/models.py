"""TA-RNN, TA-RNN-AE and their ablations, plus attention reports and artifacts.

Pipeline of every variant::

    X, E  --embed-->  Z  --RNN-->  H  --attention-->  c  [--decoder--> g_n]
          --(c or g_n) ++ Dem-->  MLP  -->  sigmoid  -->  y_hat

A-RNN variants drop the time term of the embedding, T-RNN variants replace the
attention context with the last hidden state.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .attention import (
    AttentionParams,
    context_vector,
    feature_attention,
    init_attention_params,
    visit_attention,
)
from .autograd import Tensor
from .data import MinMaxScaler
from .errors import ConfigError, ContractError, DataError, DimensionError, UnsupportedVariantError
from .rnn_cells import CellConfig, CellParams, gru_step, init_cell_params, lstm_step, run_rnn
from .time_embedding import ElapsedTimes, TimeEmbedConfig, embed_sequence

ARTIFACT_VERSION = 1

VARIANTS = ("TA_RNN", "TA_RNN_AE", "A_RNN", "T_RNN", "A_RNN_AE", "T_RNN_AE")


def parse_variant(name: str) -> str:
    """Accept ``ta-rnn``, ``TA_RNN``, ``Ta-Rnn-Ae`` ... and return the canonical name."""
    canon = name.strip().upper().replace("-", "_")
    if canon not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return canon


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    cell: CellConfig
    d_model: int
    mlp_hidden: int
    demographic_size: int = 0
    horizon: int | None = None
    dropout_rate: float = 0.0
    l2_lambda: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", parse_variant(self.variant))
        if self.cell.input_size != self.d_model:
            raise ConfigError("cell input_size must equal d_model")
        if self.mlp_hidden < 1 or self.d_model < 1:
            raise ConfigError("mlp_hidden and d_model must be positive")
        if self.demographic_size < 0:
            raise ConfigError("demographic_size must be >= 0")
        if self.is_ae:
            if self.horizon is None or self.horizon < 1:
                raise ConfigError(f"{self.variant} needs a horizon >= 1")
        elif self.horizon is not None:
            raise ConfigError(f"{self.variant} does not take a horizon")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")

    @property
    def is_ae(self) -> bool:
        return self.variant.endswith("_AE")

    @property
    def uses_time(self) -> bool:
        return not self.variant.startswith("A_")

    @property
    def uses_attention(self) -> bool:
        return not self.variant.startswith("T_")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["cell"] = CellConfig(**d["cell"])
        return cls(**d)


@dataclass
class ModelParams:
    """All trainable tensors, keyed by dotted names, plus the embedding settings."""

    tensors: dict[str, Tensor]
    time_cfg: TimeEmbedConfig
    unit: str | None = None

    def __iter__(self):
        return iter(self.tensors.values())

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[key]

    def get(self, key: str) -> Tensor | None:
        return self.tensors.get(key)

    @property
    def encoder(self) -> CellParams:
        return CellParams.from_named(self.tensors, "encoder")

    @property
    def decoder(self) -> CellParams:
        return CellParams.from_named(self.tensors, "decoder")

    @property
    def attention(self) -> AttentionParams:
        return AttentionParams.from_named(self.tensors, "attn")

    def weight_names(self) -> list[str]:
        """Names of weight matrices (everything except bias vectors)."""
        return [k for k, v in self.tensors.items() if v.ndim >= 2]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: ag.parameter(v.data.copy()) for k, v in self.tensors.items()},
            self.time_cfg,
            self.unit,
        )


def init_params(
    cfg: ModelConfig,
    feature_size: int,
    et_max: float,
    seed: int = 0,
    unit: str | None = None,
) -> ModelParams:
    """Random initialisation: uniform in +-1/sqrt(fan_in), zero biases
    (LSTM forget-gate bias 1)."""
    rng = np.random.default_rng(seed)
    t: dict[str, Tensor] = {}
    d = cfg.d_model
    if feature_size != d:
        bound = 1.0 / np.sqrt(feature_size)
        t["proj"] = ag.parameter(rng.uniform(-bound, bound, (feature_size, d)))
    t.update(init_cell_params(cfg.cell, rng).named("encoder"))
    width = cfg.cell.width
    if cfg.uses_attention:
        t.update(init_attention_params(width, d, rng).named("attn"))
    elif width != d:
        bound = 1.0 / np.sqrt(width)
        t["adapter.W"] = ag.parameter(rng.uniform(-bound, bound, (width, d)))
        t["adapter.b"] = ag.parameter(np.zeros(d))
    if cfg.is_ae:
        dec_cfg = CellConfig(cfg.cell.base_kind, d, d)
        t.update(init_cell_params(dec_cfg, rng).named("decoder"))
    mlp_in = d + cfg.demographic_size
    b2, b1 = 1.0 / np.sqrt(mlp_in), 1.0 / np.sqrt(cfg.mlp_hidden)
    t["mlp.W_2"] = ag.parameter(rng.uniform(-b2, b2, (mlp_in, cfg.mlp_hidden)))
    t["mlp.b_2"] = ag.parameter(np.zeros(cfg.mlp_hidden))
    t["mlp.W_1"] = ag.parameter(rng.uniform(-b1, b1, (cfg.mlp_hidden, 1)))
    t["mlp.b_1"] = ag.parameter(np.zeros(1))
    for k, v in t.items():
        v.name = k
    return ModelParams(t, TimeEmbedConfig(d, et_max), unit)


def zero_params(cfg: ModelConfig, feature_size: int, et_max: float = 1.0) -> ModelParams:
    params = init_params(cfg, feature_size, et_max)
    for v in params:
        v.data[...] = 0.0
    return params


# ---------------------------------------------------------------- forward


@dataclass
class ForwardTrace:
    """Intermediate tensors of one forward pass (batched, leading dim ``B``)."""

    Z: Tensor
    H: Tensor
    context: Tensor
    y_hat: Tensor
    alpha: Tensor | None = None
    beta: Tensor | None = None
    decoded: list[Tensor] = field(default_factory=list)


def decode(c, n: int, decoder: dict[str, Tensor], kind: str = "GRU") -> list[Tensor]:
    """Autoregressive decoder: step 1 reads ``c`` with hidden state ``c``,
    step ``k > 1`` reads its own previous output.  Returns ``[g_1 .. g_n]``.

    For LSTM decoders the memory cell starts at zero.
    """
    if n < 1:
        raise ContractError(f"decode horizon must be >= 1, got {n}")
    c = ag.as_tensor(c)
    x, h = c, c
    mem = ag.Tensor(np.zeros(c.shape))
    out = []
    for _ in range(n):
        if kind == "GRU":
            h = gru_step(x, h, decoder)
        else:
            h, mem = lstm_step(x, h, mem, decoder)
        out.append(h)
        x = h
    return out


def _elapsed_array(E, params: ModelParams, unit: str | None) -> np.ndarray:
    if isinstance(E, ElapsedTimes):
        unit = unit or E.unit
        E = E.values
    if unit is not None and params.unit is not None and unit != params.unit:
        raise DataError(f"elapsed times are in {unit!r} but the model was trained on {params.unit!r}")
    return np.asarray(E, dtype=np.float64)


def _mlp(params: ModelParams, rep: Tensor, Dem, cfg: ModelConfig, training: bool, rng) -> Tensor:
    if cfg.demographic_size:
        Dem = np.asarray(Dem, dtype=np.float64)
        if Dem.shape != rep.shape[:-1] + (cfg.demographic_size,):
            raise DataError(
                f"demographics shape {Dem.shape}, expected {rep.shape[:-1] + (cfg.demographic_size,)}"
            )
        rep = ag.concat([rep, ag.Tensor(Dem)], axis=-1)
    hidden = ag.relu(ag.add(ag.matmul(rep, params["mlp.W_2"]), params["mlp.b_2"]))
    if training and cfg.dropout_rate > 0:
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        keep = rng.random(hidden.shape) >= cfg.dropout_rate
        hidden = ag.mul(hidden, keep / (1.0 - cfg.dropout_rate))
    logit = ag.add(ag.matmul(hidden, params["mlp.W_1"]), params["mlp.b_1"])
    return ag.sigmoid(ag.reshape(logit, logit.shape[:-1]))


def forward_trace(
    params: ModelParams,
    cfg: ModelConfig,
    X,
    E,
    Dem=None,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    unit: str | None = None,
) -> ForwardTrace:
    """Run the model on a batch ``X[B, T, F]``, ``E[B, T]``, ``Dem[B, D]``."""
    E = _elapsed_array(E, params, unit)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DimensionError(f"expected batched features [B, T, F], got {X.shape}")
    if X.shape[1] < 1:
        raise DataError("need at least one visit")
    Z = embed_sequence(X, E, params.time_cfg, params.get("proj"), use_time=cfg.uses_time)
    H = run_rnn(Z, cfg.cell, params.encoder)
    alpha = beta = None
    if cfg.uses_attention:
        attn = params.attention
        alpha = visit_attention(H, attn)
        beta = feature_attention(H, attn)
        ctx = context_vector(alpha, beta, Z)
    else:
        ctx = H[:, -1, :]
        if "adapter.W" in params.tensors:
            ctx = ag.add(ag.matmul(ctx, params["adapter.W"]), params["adapter.b"])
    decoded: list[Tensor] = []
    rep = ctx
    if cfg.is_ae:
        decoded = decode(ctx, cfg.horizon, params.decoder.forward, cfg.cell.base_kind)
        rep = decoded[-1]
    y_hat = _mlp(params, rep, Dem, cfg, training, rng)
    return ForwardTrace(Z, H, ctx, y_hat, alpha, beta, decoded)


def _as_batch(X, E, Dem):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        E_arr = E.values if isinstance(E, ElapsedTimes) else np.asarray(E, dtype=np.float64)
        Dem_b = None if Dem is None else np.asarray(Dem, dtype=np.float64)[None]
        return X[None], E_arr[None], Dem_b, True
    return X, E, Dem, False


def predict(params, cfg, X, E, Dem=None, *, training=False, rng=None, unit=None) -> Tensor:
    """Probability of the positive outcome; scalar tensor for a single sequence,
    ``[B]`` for a batch."""
    if isinstance(E, ElapsedTimes):
        unit = unit or E.unit
    Xb, Eb, Db, single = _as_batch(X, E, Dem)
    y = forward_trace(params, cfg, Xb, Eb, Db, training=training, rng=rng, unit=unit).y_hat
    return ag.reshape(y, ()) if single else y


def tarnn_forward(X, E, Dem, params: ModelParams, cfg: ModelConfig, **kw) -> Tensor:
    """Next-visit prediction (TA_RNN)."""
    if cfg.variant != "TA_RNN":
        raise UnsupportedVariantError(f"tarnn_forward called with {cfg.variant}")
    return predict(params, cfg, X, E, Dem, **kw)


def tarnn_ae_forward(X, E, Dem, params: ModelParams, cfg: ModelConfig, **kw) -> Tensor:
    """``horizon``-visits-ahead prediction through the decoder (TA_RNN_AE)."""
    if cfg.variant != "TA_RNN_AE":
        raise UnsupportedVariantError(f"tarnn_ae_forward called with {cfg.variant}")
    return predict(params, cfg, X, E, Dem, **kw)


def ablation_forward(variant: str, X, E, Dem, params: ModelParams, cfg: ModelConfig, **kw) -> Tensor:
    variant = parse_variant(variant)
    if variant.startswith("TA_"):
        raise UnsupportedVariantError(f"{variant} is not an ablation variant")
    if variant != cfg.variant:
        raise ConfigError(f"params were built for {cfg.variant}, not {variant}")
    return predict(params, cfg, X, E, Dem, **kw)


# ---------------------------------------------------------------- interpretability


@dataclass
class AttentionReport:
    """Attention weights for a batch of samples.

    ``alpha[b, j]`` weighs visit ``j``; ``beta[b, j, f]`` weighs feature ``f``
    inside visit ``j``; ``combined = alpha[..., None] * beta``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    combined: np.ndarray
    feature_mean: np.ndarray

    def cohort_visit_mean(self) -> np.ndarray:
        return self.alpha.mean(axis=0)

    def cohort_feature_mean(self) -> np.ndarray:
        return self.feature_mean.mean(axis=0)

    def cohort_combined_mean(self) -> np.ndarray:
        return self.combined.mean(axis=0)


def explain(X, E, params: ModelParams, cfg: ModelConfig, Dem=None, unit=None) -> AttentionReport:
    """Extract attention weights.  A single sequence yields arrays without the batch axis."""
    if not cfg.uses_attention:
        raise UnsupportedVariantError(f"{cfg.variant} has no attention weights to explain")
    if isinstance(E, ElapsedTimes):
        unit = unit or E.unit
    Xb, Eb, Db, single = _as_batch(X, E, Dem)
    if cfg.demographic_size and Db is None:
        Db = np.zeros((Xb.shape[0], cfg.demographic_size))
    tr = forward_trace(params, cfg, Xb, Eb, Db, unit=unit)
    alpha, beta = tr.alpha.data, tr.beta.data
    combined = alpha[..., None] * beta
    feature_mean = beta.mean(axis=-2)
    if single:
        return AttentionReport(alpha[0], beta[0], combined[0], feature_mean[0])
    return AttentionReport(alpha, beta, combined, feature_mean)


# ---------------------------------------------------------------- artifact


@dataclass
class ModelArtifact:
    """Everything needed to score raw patient data: weights plus preprocessing state."""

    config: ModelConfig
    params: ModelParams
    feature_names: list[str]
    demographic_names: list[str] = field(default_factory=list)
    exclude_features: list[str] = field(default_factory=list)
    scaler: MinMaxScaler | None = None
    dem_scaler: MinMaxScaler | None = None
    impute_reference: np.ndarray | None = None
    dem_reference: np.ndarray | None = None
    impute_k: int = 5
    scenario: tuple[int, int] = (0, 0)
    threshold: float = 0.5
    seed: int = 0

    @property
    def unit(self) -> str | None:
        return self.params.unit

    def save(self, path) -> None:
        meta = {
            "version": ARTIFACT_VERSION,
            "config": self.config.to_dict(),
            "et_max": self.params.time_cfg.et_max,
            "unit": self.params.unit,
            "feature_names": self.feature_names,
            "demographic_names": self.demographic_names,
            "exclude_features": self.exclude_features,
            "impute_k": self.impute_k,
            "scenario": list(self.scenario),
            "threshold": self.threshold,
            "seed": self.seed,
            "param_names": list(self.params.tensors),
        }
        arrays = {f"param/{k}": v for k, v in self.params.arrays().items()}
        for label, sc in (("scaler", self.scaler), ("dem_scaler", self.dem_scaler)):
            if sc is not None:
                arrays[f"{label}/min"] = sc.min_
                arrays[f"{label}/max"] = sc.max_
        for label in ("impute_reference", "dem_reference"):
            if getattr(self, label) is not None:
                arrays[label] = getattr(self, label)
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        path = Path(path)
        try:
            npz = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read model artifact {path}: {exc}") from None
        with npz:
            if "__meta__" not in npz:
                raise DataError(f"{path} is not a model artifact (no metadata)")
            meta = json.loads(npz["__meta__"].tobytes().decode())
            if meta.get("version") != ARTIFACT_VERSION:
                raise DataError(
                    f"artifact version {meta.get('version')} unsupported (expected {ARTIFACT_VERSION})"
                )
            cfg = ModelConfig.from_dict(meta["config"])
            tensors = {}
            for name in meta["param_names"]:
                tensors[name] = ag.parameter(npz[f"param/{name}"], name=name)
            params = ModelParams(tensors, TimeEmbedConfig(cfg.d_model, meta["et_max"]), meta["unit"])

            def scaler(label):
                if f"{label}/min" not in npz:
                    return None
                return MinMaxScaler(npz[f"{label}/min"], npz[f"{label}/max"])

            ref = npz["impute_reference"] if "impute_reference" in npz else None
            dem_ref = npz["dem_reference"] if "dem_reference" in npz else None
            return cls(
                config=cfg,
                params=params,
                feature_names=meta["feature_names"],
                demographic_names=meta["demographic_names"],
                exclude_features=meta["exclude_features"],
                scaler=scaler("scaler"),
                dem_scaler=scaler("dem_scaler"),
                impute_reference=ref,
                dem_reference=dem_ref,
                impute_k=meta["impute_k"],
                scenario=tuple(meta["scenario"]),
                threshold=meta["threshold"],
                seed=meta["seed"],
            )
