import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from tarnn.data import (
    PRESETS,
    Dataset,
    GeneratorConfig,
    MinMaxScaler,
    PatientRecord,
    Visit,
    generate_synthetic,
    knn_impute,
    load_dataset,
    normalize,
    preset,
    save_dataset,
    stack_samples,
    window_dataset,
    write_data_card,
)
from tarnn.errors import ConfigError, ContractError, DataError


def knn_oracle(table, k, reference=None):
    # row-by-row, cell-by-cell restatement with plain loops
    table = [list(r) for r in table]
    ref = table if reference is None else [list(r) for r in reference]
    F = len(table[0])
    out = [list(r) for r in table]
    for i, row in enumerate(table):
        for f in range(F):
            if not math.isnan(row[f]):
                continue
            cands = []
            for j, other in enumerate(ref):
                if math.isnan(other[f]):
                    continue
                co = [g for g in range(F) if not math.isnan(row[g]) and not math.isnan(other[g])]
                if not co:
                    d = math.inf
                else:
                    d = math.sqrt(sum((row[g] - other[g]) ** 2 for g in co) * F / len(co))
                cands.append((d, j))
            cands.sort()
            out[i][f] = sum(ref[j][f] for _, j in cands[:k]) / len(cands[:k])
    return np.array(out)


def patient(pid, n_visits, F=2, labels=None, gaps=None):
    labels = labels or [0] * n_visits
    gaps = gaps or [0.0] + [1.0] * (n_visits - 1)
    visits = [Visit(np.full(F, float(t)), gaps[t], labels[t]) for t in range(n_visits)]
    return PatientRecord(pid, visits, np.array([1.0, 2.0]))


# ---------------------------------------------------------------- generator


def test_generator_is_deterministic(tmp_path):
    cfg = GeneratorConfig(n_patients=30, missing_rate=0.1)
    save_dataset(generate_synthetic(cfg, seed=5), tmp_path / "a.jsonl")
    save_dataset(generate_synthetic(cfg, seed=5), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    save_dataset(generate_synthetic(cfg, seed=6), tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_generator_empty_cohort():
    ds = generate_synthetic(GeneratorConfig(n_patients=0))
    assert len(ds) == 0 and ds.card["converted_fraction"] == 0.0


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_generated_records_are_valid_and_monotone(name):
    ds = generate_synthetic(preset(name, n_patients=60), seed=1)
    assert ds.feature_names[0] == "age"
    assert ds.demographic_names == ["sex", "education", "apoe4"]
    for p in ds.patients:
        p.validate()
        labels = p.labels()
        assert np.all(np.diff(labels) >= 0)
        assert 4 <= p.n_visits <= 8


def test_days_unit_scales_gaps():
    years = generate_synthetic(GeneratorConfig(n_patients=5), seed=2)
    days = generate_synthetic(GeneratorConfig(n_patients=5, unit="days"), seed=2)
    assert days.unit == "days"
    np.testing.assert_allclose(days.patients[0].elapsed(), years.patients[0].elapsed() * 365.25)


def test_generator_config_errors():
    with pytest.raises(ConfigError):
        generate_synthetic(GeneratorConfig(min_visits=1))
    with pytest.raises(ConfigError):
        generate_synthetic(GeneratorConfig(feature_noise=-1.0))
    with pytest.raises(ConfigError):
        preset("nope")


def _gap_table(ds):
    mean_gap = np.array([p.elapsed()[1:].mean() for p in ds.patients])
    converted = np.array([p.labels()[-1] for p in ds.patients])
    long_gap = mean_gap > np.median(mean_gap)
    return np.array([[np.sum(~long_gap & (converted == 0)), np.sum(~long_gap & (converted == 1))],
                     [np.sum(long_gap & (converted == 0)), np.sum(long_gap & (converted == 1))]])


def test_zero_time_hazard_makes_conversion_independent_of_gaps():
    ds = generate_synthetic(GeneratorConfig(n_patients=3000, hazard_time=0.0, gap_log_sd_between=0.9), seed=3)
    _, p_value, _, _ = chi2_contingency(_gap_table(ds))
    assert p_value > 0.01


def test_positive_time_hazard_is_detected():
    # power check for the statistic used above
    ds = generate_synthetic(GeneratorConfig(n_patients=3000, hazard_time=1.0, gap_log_sd_between=0.9), seed=3)
    _, p_value, _, _ = chi2_contingency(_gap_table(ds))
    assert p_value < 1e-6


def test_data_card(tmp_path):
    ds = generate_synthetic(GeneratorConfig(n_patients=10), seed=4)
    assert ds.card["seed"] == 4 and ds.card["hazard_time"] == 0.5
    assert ds.card["n_visits"] == sum(p.n_visits for p in ds.patients)
    write_data_card(tmp_path / "card.txt", ds.card)
    lines = (tmp_path / "card.txt").read_text().splitlines()
    assert "seed: 4" in lines and "n_patients: 10" in lines


# ---------------------------------------------------------------- imputation


def test_knn_no_missing_unchanged():
    t = np.random.default_rng(0).normal(size=(6, 3))
    assert np.array_equal(knn_impute(t, 2), t)


def test_knn_identical_rows():
    t = np.array([[1.0, 2.0, 3.0]] * 4)
    t[2, 1] = np.nan
    assert knn_impute(t, 3)[2, 1] == 2.0


def test_knn_three_row_hand_case():
    t = np.array([[0.0, 0.0], [10.0, 7.0], [1.0, np.nan]])
    # distances from row 2 over feature 0 only: |1-0|*sqrt(2)=1.41, |1-10|*sqrt(2)=12.7
    assert knn_impute(t, 1)[2, 1] == 0.0
    np.testing.assert_array_equal(knn_impute(t, 1), knn_oracle(t, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(12, 4))
    mask = rng.random(t.shape) < 0.25
    mask[0] = False  # keep every column observable
    t[mask] = np.nan
    got = knn_impute(t, k)
    np.testing.assert_allclose(got, knn_oracle(t, k), rtol=0, atol=1e-12)
    assert np.array_equal(got[~mask], t[~mask])


def test_knn_with_reference():
    ref = np.array([[0.0, 5.0], [3.0, 9.0]])
    t = np.array([[2.9, np.nan]])
    assert knn_impute(t, 1, reference=ref)[0, 1] == 9.0
    np.testing.assert_array_equal(knn_impute(t, 1, reference=ref), knn_oracle(t, 1, ref))


def test_knn_fully_missing_column():
    t = np.array([[1.0, np.nan], [2.0, np.nan]])
    with pytest.raises(DataError, match=r"\[1\]"):
        knn_impute(t, 1)


# ---------------------------------------------------------------- normalisation


def test_normalize_examples():
    train = np.array([[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]])
    tn, other, scaler = normalize(train, np.array([[12.0, 4.0]]))
    np.testing.assert_array_equal(tn[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(tn[:, 1], [0.0, 0.0, 0.0])
    assert other[0, 0] == pytest.approx(1.2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e4))
def test_normalize_inverse_roundtrip(seed, scale):
    rng = np.random.default_rng(seed)
    train = rng.normal(scale=scale, size=(8, 3))
    x = rng.normal(scale=scale, size=(5, 3))
    s = MinMaxScaler.fit(train)
    back = s.inverse_transform(s.transform(x))
    assert np.all(np.abs(back - x) <= 1e-12 * np.maximum(1.0, np.abs(x)))


def test_constant_column_inverse_is_the_constant():
    s = MinMaxScaler.fit(np.array([[2.0], [2.0]]))
    assert s.inverse_transform(s.transform(np.array([[2.0]])))[0, 0] == 2.0


# ---------------------------------------------------------------- windowing


def test_seven_visits_m6_n1_uses_visit_seven():
    p = patient("a", 7, labels=[0, 0, 0, 0, 0, 0, 1])
    (s,) = window_dataset([p], 6, 1)
    assert s.label == 1 and s.X.shape == (6, 2) and s.scenario == (6, 1)


def test_short_patient_skipped():
    assert window_dataset([patient("a", 3)], 6, 1) == []


def test_m2_n2_label_from_visit_four():
    # non-monotone labels only so visits 4 and 5 are distinguishable
    p = patient("a", 5, labels=[0, 0, 0, 1, 0])
    (s,) = window_dataset([p], 2, 2)
    assert s.label == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(2, 14))
def test_window_never_leaks_label_visit(m, n, T):
    # feature value == visit index, so the index audit is direct
    p = patient("a", T)
    out = window_dataset([p], m, n)
    if T < m + n:
        assert out == []
        return
    (s,) = out
    assert s.X[:, 0].tolist() == list(range(m))
    assert s.X.max() < m + n - 1
    assert s.E[0] == 0.0


def test_exclude_features_by_name():
    p = PatientRecord("a", [Visit(np.array([70.0, 1.0, 2.0]), 0.0, 0), Visit(np.array([71.0, 3.0, 4.0]), 1.0, 0),
                            Visit(np.array([72.0, 5.0, 6.0]), 1.0, 1)], np.zeros(2))
    (s,) = window_dataset([p], 2, 1, ["age"], ["age", "f1", "f2"])
    assert s.X.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    with pytest.raises(DataError):
        window_dataset([p], 2, 1, ["bmi"], ["age", "f1", "f2"])


def test_window_contract():
    with pytest.raises(ContractError):
        window_dataset([patient("a", 5)], 1, 1)
    with pytest.raises(ContractError):
        window_dataset([patient("a", 5)], 2, 0)


def test_stack_rejects_missing_values():
    p = patient("a", 4)
    p.visits[0].features[0] = np.nan
    with pytest.raises(DataError):
        stack_samples(window_dataset([p], 2, 1))


# ---------------------------------------------------------------- file format


def test_dataset_roundtrip_with_missing(tmp_path):
    ds = generate_synthetic(GeneratorConfig(n_patients=15, missing_rate=0.2, unit="days"), seed=9)
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.unit == "days"
    assert back.feature_names == ds.feature_names and back.demographic_names == ds.demographic_names
    assert len(back) == len(ds)
    n_missing = 0
    for a, b in zip(ds.patients, back.patients):
        assert a.id == b.id
        assert np.array_equal(a.feature_matrix(), b.feature_matrix(), equal_nan=True)
        assert np.array_equal(a.elapsed(), b.elapsed())
        assert np.array_equal(a.labels(), b.labels())
        assert np.array_equal(a.demographics, b.demographics)
        n_missing += int(np.isnan(b.feature_matrix()).sum())
    assert n_missing > 0
    save_dataset(back, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def _write(path, header, *records):
    path.write_text("\n".join(json.dumps(r) for r in (header, *records)) + "\n")


def test_wrong_version_rejected(tmp_path):
    path = tmp_path / "d.jsonl"
    _write(path, {"kind": "header", "schema_version": 99, "feature_names": ["a"], "unit": "years"})
    with pytest.raises(DataError, match="version"):
        load_dataset(path)


def test_missing_unit_rejected(tmp_path):
    path = tmp_path / "d.jsonl"
    _write(path, {"kind": "header", "schema_version": 1, "feature_names": ["a"], "demographic_names": []})
    with pytest.raises(DataError, match="unit"):
        load_dataset(path)


def test_malformed_line_reports_line_number(tmp_path):
    ds = generate_synthetic(GeneratorConfig(n_patients=3), seed=0)
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=":3"):
        load_dataset(path)


def test_missing_file():
    with pytest.raises(DataError):
        load_dataset("/nonexistent/data.jsonl")
