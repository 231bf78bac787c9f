"""Longitudinal patient records: schema, synthetic generator, preprocessing,
windowing and the line-delimited dataset file format."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
UNITS = ("years", "days")
DAYS_PER_YEAR = 365.25


@dataclass
class Visit:
    features: np.ndarray  # NaN marks a missing measurement
    elapsed: float
    label: int


@dataclass
class PatientRecord:
    id: str
    visits: list[Visit]
    demographics: np.ndarray
    unit: str = "years"

    def validate(self) -> None:
        if self.unit not in UNITS:
            raise DataError(f"patient {self.id}: unit {self.unit!r} not in {UNITS}")
        if len(self.visits) < 2:
            raise DataError(f"patient {self.id}: needs at least two visits")
        if self.visits[0].elapsed != 0:
            raise DataError(f"patient {self.id}: first visit must have elapsed time 0")
        for v in self.visits:
            if not (v.elapsed >= 0 and math.isfinite(v.elapsed)):
                raise DataError(f"patient {self.id}: invalid elapsed time {v.elapsed}")
            if v.label not in (0, 1):
                raise DataError(f"patient {self.id}: label {v.label} is not binary")

    @property
    def n_visits(self) -> int:
        return len(self.visits)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([v.features for v in self.visits])

    def elapsed(self) -> np.ndarray:
        return np.array([v.elapsed for v in self.visits])

    def labels(self) -> np.ndarray:
        return np.array([v.label for v in self.visits], dtype=int)


@dataclass
class Dataset:
    patients: list[PatientRecord]
    feature_names: list[str]
    demographic_names: list[str]
    unit: str = "years"
    card: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.patients)

    def subset(self, idx) -> "Dataset":
        return Dataset([self.patients[i] for i in idx], self.feature_names, self.demographic_names, self.unit, self.card)


@dataclass
class WindowedSample:
    X: np.ndarray  # [m, F]
    E: np.ndarray  # [m]
    Dem: np.ndarray  # [D]
    label: int
    scenario: tuple[int, int]
    patient_id: str = ""


# ---------------------------------------------------------------- synthetic data


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic MCI-to-AD style cohort.

    Conversion is a discrete per-visit hazard
    ``sigmoid(hazard_intercept + hazard_severity * severity + hazard_time * cumulative_time)``;
    once a patient converts the label stays 1.  Severity follows a random walk
    indexed by visit, not by time, so with ``hazard_time = 0`` conversion is
    independent of the visit gaps.
    """

    n_patients: int = 200
    min_visits: int = 4
    max_visits: int = 8
    n_features: int = 6
    n_informative: int = 4
    include_age: bool = True
    unit: str = "years"
    gap_min: float = 0.25
    gap_max: float = 3.0
    gap_log_mean: float = 0.0
    gap_log_sd_between: float = 0.6
    gap_log_sd_within: float = 0.25
    severity_baseline_sd: float = 1.0
    severity_step_sd: float = 0.3
    severity_drift: float = 0.0
    apoe_effect: float = 0.3
    hazard_intercept: float = -3.0
    hazard_severity: float = 1.0
    hazard_time: float = 0.5
    conversion_shift: float = 0.5
    feature_noise: float = 0.3
    missing_rate: float = 0.0

    def validate(self) -> None:
        if self.n_patients < 0:
            raise ConfigError("n_patients must be >= 0")
        if not 2 <= self.min_visits <= self.max_visits:
            raise ConfigError("need 2 <= min_visits <= max_visits")
        if self.n_features < 1 or not 0 <= self.n_informative <= self.n_features:
            raise ConfigError("need n_features >= 1 and 0 <= n_informative <= n_features")
        if self.unit not in UNITS:
            raise ConfigError(f"unit must be one of {UNITS}")
        if not 0 < self.gap_min <= self.gap_max:
            raise ConfigError("need 0 < gap_min <= gap_max")
        for name in ("gap_log_sd_between", "gap_log_sd_within", "severity_baseline_sd",
                     "severity_step_sd", "feature_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")


PRESETS: dict[str, dict] = {
    "default": {},
    # label driven by a severity signal that the features measure almost noise-free
    "separable": dict(
        hazard_intercept=-20.0, hazard_severity=40.0, hazard_time=0.0,
        severity_step_sd=0.0, feature_noise=0.05, conversion_shift=1.0,
        n_informative=6, apoe_effect=0.0,
    ),
    # label driven by how much time has passed; features carry no clock
    "time-driven": dict(
        hazard_intercept=-12.5, hazard_severity=0.3, hazard_time=3.5,
        severity_step_sd=0.0, gap_log_sd_between=0.9, gap_log_sd_within=0.1,
        conversion_shift=0.0, apoe_effect=0.0,
    ),
}


def preset(name: str, **overrides) -> GeneratorConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return GeneratorConfig(**{**PRESETS[name], **overrides})


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def generate_synthetic(cfg: GeneratorConfig, seed: int = 0) -> Dataset:
    """Simulate a cohort; identical ``(cfg, seed)`` give identical datasets."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    F = cfg.n_features
    loadings = np.zeros(F)
    loadings[: cfg.n_informative] = rng.uniform(0.5, 1.5, cfg.n_informative)
    offsets = rng.uniform(-1.0, 1.0, F)
    feature_names = (["age"] if cfg.include_age else []) + [f"f{i + 1}" for i in range(F)]
    scale = DAYS_PER_YEAR if cfg.unit == "days" else 1.0

    patients = []
    n_visits_total = n_converted = 0
    for pid in range(cfg.n_patients):
        n_vis = int(rng.integers(cfg.min_visits, cfg.max_visits + 1))
        sex = float(rng.integers(0, 2))
        education = float(np.clip(np.round(rng.normal(15.0, 3.0)), 6, 22))
        apoe4 = float(rng.choice([0, 1, 2], p=[0.55, 0.35, 0.10]))
        base_age = float(rng.uniform(60.0, 85.0))
        pace = rng.normal(cfg.gap_log_mean, cfg.gap_log_sd_between)
        gaps = np.exp(pace + cfg.gap_log_sd_within * rng.standard_normal(n_vis - 1))
        gaps = np.concatenate([[0.0], np.clip(gaps, cfg.gap_min, cfg.gap_max)])
        cum = np.cumsum(gaps)
        severity = rng.normal(cfg.apoe_effect * apoe4, cfg.severity_baseline_sd)
        converted = 0
        visits = []
        for v in range(n_vis):
            if v > 0:
                severity += cfg.severity_drift + cfg.severity_step_sd * rng.standard_normal()
                if not converted:
                    h = cfg.hazard_intercept + cfg.hazard_severity * severity + cfg.hazard_time * cum[v]
                    converted = int(rng.random() < _sigmoid(h))
            feats = offsets + loadings * severity + cfg.conversion_shift * converted * (loadings > 0)
            feats = feats + cfg.feature_noise * rng.standard_normal(F)
            if cfg.missing_rate:
                feats[rng.random(F) < cfg.missing_rate] = np.nan
            if cfg.include_age:
                feats = np.concatenate([[base_age + cum[v]], feats])
            visits.append(Visit(feats, float(gaps[v] * scale), converted))
        n_visits_total += n_vis
        n_converted += converted
        patients.append(PatientRecord(f"P{pid:05d}", visits, np.array([sex, education, apoe4]), cfg.unit))

    card = {
        "generator": "tarnn.synthetic",
        "seed": seed,
        **asdict(cfg),
        "n_visits": n_visits_total,
        "converted_fraction": (n_converted / cfg.n_patients) if cfg.n_patients else 0.0,
    }
    return Dataset(patients, feature_names, ["sex", "education", "apoe4"], cfg.unit, card)


def write_data_card(path, card: dict) -> None:
    lines = [f"{k}: {v}" for k, v in card.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- preprocessing


def knn_impute(table, k: int = 5, reference=None) -> np.ndarray:
    """Fill NaN cells with the mean of the ``k`` nearest rows that observe them.

    Distance between two rows is the Euclidean distance over their co-observed
    features, scaled by ``sqrt(F / n_co_observed)``.  Neighbours come from
    ``reference`` when given (e.g. the training table while imputing test
    data), otherwise from ``table`` itself.  Observed cells are never changed.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    table = np.array(table, dtype=np.float64)
    ref = table if reference is None else np.asarray(reference, dtype=np.float64)
    if table.ndim != 2 or ref.ndim != 2 or table.shape[1] != ref.shape[1]:
        raise DataError(f"imputation tables must be 2-d with matching columns: {table.shape}, {ref.shape}")
    ref_obs = ~np.isnan(ref)
    empty = np.flatnonzero(~ref_obs.any(axis=0))
    if empty.size:
        raise DataError(f"columns with no observed values: {empty.tolist()}")
    F = table.shape[1]
    ref_filled = np.where(ref_obs, ref, 0.0)
    out = table.copy()
    for r in np.flatnonzero(np.isnan(table).any(axis=1)):
        row = table[r]
        obs = ~np.isnan(row)
        co = ref_obs & obs
        n_co = co.sum(axis=1)
        diff = np.where(co, ref_filled - np.where(obs, row, 0.0), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.sqrt((diff * diff).sum(axis=1) * F / n_co)
        dist[n_co == 0] = np.inf
        order = np.argsort(dist, kind="stable")
        for f in np.flatnonzero(~obs):
            donors = order[ref_obs[order, f]][:k]
            out[r, f] = ref[donors, f].mean()
    return out


@dataclass
class MinMaxScaler:
    """Column-wise min-max scaling; constant columns map to 0."""

    min_: np.ndarray
    max_: np.ndarray

    @classmethod
    def fit(cls, table) -> "MinMaxScaler":
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] == 0:
            raise ContractError("scaler needs a non-empty 2-d table")
        with np.errstate(all="ignore"):
            lo, hi = np.nanmin(table, axis=0), np.nanmax(table, axis=0)
        return cls(lo, hi)

    @property
    def range_(self) -> np.ndarray:
        return self.max_ - self.min_

    def transform(self, table) -> np.ndarray:
        table = np.asarray(table, dtype=np.float64)
        rng = self.range_
        safe = np.where(rng > 0, rng, 1.0)
        return np.where(rng > 0, (table - self.min_) / safe, np.where(np.isnan(table), np.nan, 0.0))

    def inverse_transform(self, table) -> np.ndarray:
        table = np.asarray(table, dtype=np.float64)
        return np.where(self.range_ > 0, table * self.range_ + self.min_, self.min_)


def normalize(train, apply_to=None):
    """Fit min-max scaling on ``train`` and apply it to both tables.

    Values outside the training range are not clipped.
    """
    scaler = MinMaxScaler.fit(train)
    other = None if apply_to is None else scaler.transform(apply_to)
    return scaler.transform(train), other, scaler


# ---------------------------------------------------------------- windowing


def window_dataset(
    patients: Sequence[PatientRecord],
    m: int,
    n: int,
    exclude_features: Sequence[str] = (),
    feature_names: Sequence[str] | None = None,
) -> list[WindowedSample]:
    """One sample per patient: the first ``m`` visits as input, the label of
    visit ``m + n`` (1-based) as target.  Patients with fewer than ``m + n``
    visits are skipped."""
    if m < 2 or n < 1:
        raise ContractError(f"need m >= 2 and n >= 1, got m={m}, n={n}")
    keep = None
    if exclude_features:
        if feature_names is None:
            raise ContractError("feature_names are required to exclude features")
        unknown = set(exclude_features) - set(feature_names)
        if unknown:
            raise DataError(f"cannot exclude unknown features {sorted(unknown)}")
        keep = np.array([f not in exclude_features for f in feature_names])
    out = []
    skipped = 0
    for p in patients:
        if p.n_visits < m + n:
            skipped += 1
            continue
        X = np.stack([v.features for v in p.visits[:m]])
        if keep is not None:
            X = X[:, keep]
        E = np.array([v.elapsed for v in p.visits[:m]])
        E[0] = 0.0
        out.append(WindowedSample(X, E, np.asarray(p.demographics, dtype=np.float64),
                                  int(p.visits[m + n - 1].label), (m, n), p.id))
    if skipped:
        logger.info("window %d->%d: skipped %d of %d patients with < %d visits",
                    m, n, skipped, len(patients), m + n)
    return out


def stack_samples(samples: Sequence[WindowedSample]):
    """Batch samples into ``X[B, m, F]``, ``E[B, m]``, ``Dem[B, D]``, ``y[B]``."""
    if not samples:
        raise DataError("no samples to stack")
    lengths = {s.X.shape[0] for s in samples}
    if len(lengths) != 1:
        raise DataError(f"mixed window lengths {sorted(lengths)}")
    X = np.stack([s.X for s in samples])
    if not np.all(np.isfinite(X)):
        raise DataError("windowed features contain missing values; impute first")
    E = np.stack([s.E for s in samples])
    Dem = np.stack([s.Dem for s in samples])
    y = np.array([s.label for s in samples], dtype=np.float64)
    return X, E, Dem, y


# ---------------------------------------------------------------- file format


def _num(x: float):
    return None if math.isnan(x) else float(x)


def _encode_patient(p: PatientRecord) -> dict:
    return {
        "id": p.id,
        "demographics": [_num(x) for x in p.demographics],
        "visits": [
            {"elapsed": v.elapsed, "label": int(v.label), "features": [_num(x) for x in v.features]}
            for v in p.visits
        ],
    }


def save_dataset(dataset: Dataset, path) -> None:
    """Write a header line followed by one JSON object per patient."""
    header = {
        "kind": "header",
        "schema_version": SCHEMA_VERSION,
        "feature_names": list(dataset.feature_names),
        "demographic_names": list(dataset.demographic_names),
        "unit": dataset.unit,
    }
    dump = lambda obj: json.dumps(obj, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump(header) + "\n")
        for p in dataset.patients:
            fh.write(dump(_encode_patient(p)) + "\n")


def _floats(values) -> np.ndarray:
    return np.array([np.nan if x is None else float(x) for x in values], dtype=np.float64)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: malformed header ({exc.msg})") from None
    if header.get("kind") != "header":
        raise DataError(f"{path}:1: first line is not a header record")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DataError(
            f"{path}: schema version {header.get('schema_version')!r} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    unit = header.get("unit")
    if unit is None:
        raise DataError(f"{path}: header has no time unit")
    if unit not in UNITS:
        raise DataError(f"{path}: unit {unit!r} not in {UNITS}")
    feature_names = header.get("feature_names")
    dem_names = header.get("demographic_names", [])
    if not isinstance(feature_names, list):
        raise DataError(f"{path}: header has no feature_names list")
    patients = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            visits = [Visit(_floats(v["features"]), float(v["elapsed"]), int(v["label"])) for v in rec["visits"]]
            p = PatientRecord(str(rec["id"]), visits, _floats(rec["demographics"]), unit)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
        if any(v.features.size != len(feature_names) for v in visits):
            raise DataError(f"{path}:{lineno}: feature count differs from header")
        if p.demographics.size != len(dem_names):
            raise DataError(f"{path}:{lineno}: demographic count differs from header")
        try:
            p.validate()
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        patients.append(p)
    return Dataset(patients, feature_names, dem_names, unit)
