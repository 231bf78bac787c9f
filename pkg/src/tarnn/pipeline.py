"""End-to-end experiment plumbing shared by the CLI and the acceptance suite:
split -> impute -> normalise -> window -> train -> score."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import (
    Dataset,
    MinMaxScaler,
    PatientRecord,
    Visit,
    WindowedSample,
    knn_impute,
    stack_samples,
    window_dataset,
)
from .errors import ConfigError, DataError
from .metrics import evaluate_scores
from .models import ModelArtifact, ModelConfig, explain, forward_trace, parse_variant
from .rnn_cells import CellConfig
from .training import TrainConfig, TrainHistory, train

logger = logging.getLogger(__name__)

CELL_ALIASES = {"gru": "GRU", "lstm": "LSTM", "bigru": "BiGRU", "bilstm": "BiLSTM",
                "bi-gru": "BiGRU", "bi-lstm": "BiLSTM"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Model-side choices for one run; ``d_model=None`` means "number of features"."""

    variant: str = "TA_RNN"
    cell: str = "GRU"
    hidden_size: int = 16
    d_model: int | None = None
    mlp_hidden: int = 16
    dropout_rate: float = 0.0
    use_demographics: bool = True
    impute_k: int = 5
    exclude_features: tuple[str, ...] = ("age",)


def resolve_variant(variant: str, n: int) -> str:
    """Promote a base variant to its autoencoder form when predicting more than one visit ahead."""
    v = parse_variant(variant)
    if n > 1 and not v.endswith("_AE"):
        v += "_AE"
    return v


def resolve_cell(kind: str) -> str:
    return CELL_ALIASES.get(kind.lower(), kind)


# ---------------------------------------------------------------- splitting


def split_patients(ds: Dataset, test_fraction: float = 0.3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random split stratified on each patient's final label."""
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    final = np.array([p.visits[-1].label for p in ds.patients], dtype=int)
    test_idx = []
    for cls in (0, 1):
        idx = np.flatnonzero(final == cls)
        rng.shuffle(idx)
        test_idx.extend(idx[: int(round(test_fraction * idx.size))].tolist())
    test_set = set(test_idx)
    train_idx = [i for i in range(len(ds)) if i not in test_set]
    return ds.subset(train_idx), ds.subset(sorted(test_set))


# ---------------------------------------------------------------- preprocessing


@dataclass
class Preprocessor:
    """KNN imputation and min-max scaling fitted on training patients."""

    scaler: MinMaxScaler
    dem_scaler: MinMaxScaler | None
    impute_reference: np.ndarray
    dem_reference: np.ndarray | None
    k: int = 5

    @classmethod
    def fit(cls, ds: Dataset, k: int = 5) -> "Preprocessor":
        if not ds.patients:
            raise DataError("cannot fit preprocessing on an empty dataset")
        table = np.concatenate([p.feature_matrix() for p in ds.patients])
        ref = knn_impute(table, k)
        dem_scaler = dem_ref = None
        if ds.demographic_names:
            dem = np.stack([p.demographics for p in ds.patients])
            dem_ref = knn_impute(dem, k)
            dem_scaler = MinMaxScaler.fit(dem_ref)
        return cls(MinMaxScaler.fit(ref), dem_scaler, ref, dem_ref, k)

    def transform(self, ds: Dataset) -> Dataset:
        if not ds.patients:
            return ds
        table = np.concatenate([p.feature_matrix() for p in ds.patients])
        table = self.scaler.transform(knn_impute(table, self.k, reference=self.impute_reference))
        dem = None
        if self.dem_scaler is not None:
            dem = np.stack([p.demographics for p in ds.patients])
            dem = self.dem_scaler.transform(knn_impute(dem, self.k, reference=self.dem_reference))
        out, row = [], 0
        for i, p in enumerate(ds.patients):
            visits = []
            for v in p.visits:
                visits.append(Visit(table[row], v.elapsed, v.label))
                row += 1
            demographics = p.demographics if dem is None else dem[i]
            out.append(PatientRecord(p.id, visits, demographics, p.unit))
        return Dataset(out, ds.feature_names, ds.demographic_names, ds.unit, ds.card)


# ---------------------------------------------------------------- fit / score


@dataclass
class FitResult:
    artifact: ModelArtifact
    history: TrainHistory
    n_train: int


def max_elapsed(ds: Dataset) -> float:
    et = max((v.elapsed for p in ds.patients for v in p.visits), default=0.0)
    return et if et > 0 else 1.0


def fit(
    train_ds: Dataset,
    m: int,
    n: int,
    exp: ExperimentConfig,
    train_cfg: TrainConfig,
    threshold: float = 0.5,
) -> FitResult:
    """Preprocess ``train_ds``, window it at scenario ``m -> n`` and train one model."""
    pre = Preprocessor.fit(train_ds, exp.impute_k)
    samples = window_dataset(pre.transform(train_ds).patients, m, n,
                             exp.exclude_features, train_ds.feature_names)
    if len(samples) < train_cfg.batch_size:
        raise DataError(
            f"only {len(samples)} patients have >= {m + n} visits; need at least batch_size={train_cfg.batch_size}"
        )
    F = samples[0].X.shape[1]
    D = len(train_ds.demographic_names) if exp.use_demographics else 0
    variant = resolve_variant(exp.variant, n)
    d_model = exp.d_model or F
    cfg = ModelConfig(
        variant=variant,
        cell=CellConfig(resolve_cell(exp.cell), d_model, exp.hidden_size),
        d_model=d_model,
        mlp_hidden=exp.mlp_hidden,
        demographic_size=D,
        horizon=n if variant.endswith("_AE") else None,
        dropout_rate=exp.dropout_rate,
        l2_lambda=train_cfg.l2_lambda,
    )
    params, history = train(samples, cfg, train_cfg, et_max=max_elapsed(train_ds), unit=train_ds.unit)
    artifact = ModelArtifact(
        config=cfg,
        params=params,
        feature_names=list(train_ds.feature_names),
        demographic_names=list(train_ds.demographic_names) if D else [],
        exclude_features=list(exp.exclude_features),
        scaler=pre.scaler,
        dem_scaler=pre.dem_scaler if D else None,
        impute_reference=pre.impute_reference,
        dem_reference=pre.dem_reference if D else None,
        impute_k=exp.impute_k,
        scenario=(m, n),
        threshold=threshold,
        seed=train_cfg.seed,
    )
    return FitResult(artifact, history, len(samples))


def _preprocessor_of(artifact: ModelArtifact) -> Preprocessor:
    return Preprocessor(artifact.scaler, artifact.dem_scaler, artifact.impute_reference,
                        artifact.dem_reference, artifact.impute_k)


def prepare(artifact: ModelArtifact, ds: Dataset) -> list[WindowedSample]:
    """Apply the artifact's stored preprocessing and windowing to raw patients."""
    if artifact.unit is not None and ds.unit != artifact.unit:
        raise DataError(f"dataset unit {ds.unit!r} does not match model unit {artifact.unit!r}")
    if list(ds.feature_names) != artifact.feature_names:
        raise DataError("dataset feature names differ from the ones the model was trained on")
    m, n = artifact.scenario
    return window_dataset(_preprocessor_of(artifact).transform(ds).patients, m, n,
                          artifact.exclude_features, ds.feature_names)


def score(artifact: ModelArtifact, samples: Sequence[WindowedSample]) -> np.ndarray:
    X, E, Dem, _ = stack_samples(samples)
    cfg = artifact.config
    return forward_trace(artifact.params, cfg, X, E, Dem if cfg.demographic_size else None,
                         unit=artifact.unit).y_hat.data.copy()


def evaluate(artifact: ModelArtifact, ds: Dataset, threshold: float | None = None) -> dict:
    samples = prepare(artifact, ds)
    if not samples:
        raise DataError("no patient in the evaluation data is long enough for the model's scenario")
    y_hat = score(artifact, samples)
    y = np.array([s.label for s in samples])
    out = evaluate_scores(y_hat, y, artifact.threshold if threshold is None else threshold)
    out["n_samples"] = len(samples)
    return out


def attention_report(artifact: ModelArtifact, ds: Dataset):
    samples = prepare(artifact, ds)
    if not samples:
        raise DataError("no patient in the data is long enough for the model's scenario")
    X, E, Dem, _ = stack_samples(samples)
    cfg = artifact.config
    report = explain(X, E, artifact.params, cfg, Dem if cfg.demographic_size else None, unit=artifact.unit)
    return samples, report


def run_experiment(
    ds: Dataset,
    m: int,
    n: int,
    exp: ExperimentConfig,
    train_cfg: TrainConfig,
    split_seed: int = 0,
    test_fraction: float = 0.3,
    threshold: float = 0.5,
) -> dict:
    """Split, fit and evaluate in one call; returns test metrics."""
    train_ds, test_ds = split_patients(ds, test_fraction, split_seed)
    result = fit(train_ds, m, n, exp, train_cfg, threshold)
    metrics = evaluate(result.artifact, test_ds, threshold)
    metrics["final_loss"] = result.history.loss[-1] if len(result.history) else None
    return metrics


def sweep_variants(
    ds: Dataset,
    variants: Sequence[str],
    scenarios: Sequence[tuple[int, int]],
    seeds: Sequence[int],
    exp: ExperimentConfig,
    train_cfg: TrainConfig,
    split_seed: int = 0,
) -> list[dict]:
    """Controlled comparison: every variant sees the same split and seeds."""
    rows = []
    for m, n in scenarios:
        for variant in variants:
            for seed in seeds:
                res = run_experiment(ds, m, n, replace(exp, variant=variant),
                                     replace(train_cfg, seed=seed), split_seed)
                rows.append({**res, "variant": resolve_variant(variant, n), "m": m, "n": n, "seed": seed})
    return rows
