import numpy as np
import pytest

from tarnn.data import GeneratorConfig, generate_synthetic, knn_impute, preset
from tarnn.errors import ConfigError, DataError
from tarnn.pipeline import (
    ExperimentConfig,
    Preprocessor,
    evaluate,
    fit,
    prepare,
    resolve_cell,
    resolve_variant,
    split_patients,
    sweep_variants,
)
from tarnn.training import TrainConfig

FAST = TrainConfig(epochs=2, batch_size=8)
SMALL = ExperimentConfig(hidden_size=3, mlp_hidden=3)


def test_resolve_helpers():
    assert resolve_variant("ta-rnn", 1) == "TA_RNN"
    assert resolve_variant("a-rnn", 3) == "A_RNN_AE"
    assert resolve_variant("T_RNN_AE", 2) == "T_RNN_AE"
    assert resolve_cell("bi-lstm") == "BiLSTM"


def test_split_is_disjoint_stratified_and_seeded():
    ds = generate_synthetic(GeneratorConfig(n_patients=200), seed=0)
    tr, te = split_patients(ds, 0.3, seed=1)
    ids_tr, ids_te = {p.id for p in tr.patients}, {p.id for p in te.patients}
    assert not ids_tr & ids_te and len(ids_tr | ids_te) == 200
    final = lambda d: np.mean([p.visits[-1].label for p in d.patients])
    assert abs(final(tr) - final(te)) < 0.05
    assert [p.id for p in split_patients(ds, 0.3, seed=1)[1].patients] == [p.id for p in te.patients]
    with pytest.raises(ConfigError):
        split_patients(ds, 1.0)


def test_preprocessor_uses_training_statistics_only():
    ds = generate_synthetic(GeneratorConfig(n_patients=60, missing_rate=0.2), seed=2)
    tr, te = split_patients(ds, 0.3, seed=0)
    pre = Preprocessor.fit(tr, k=3)
    train_table = np.concatenate([p.feature_matrix() for p in tr.patients])
    np.testing.assert_array_equal(pre.impute_reference, knn_impute(train_table, 3))
    np.testing.assert_array_equal(pre.scaler.min_, pre.impute_reference.min(axis=0))
    out = pre.transform(te)
    test_table = np.concatenate([p.feature_matrix() for p in te.patients])
    expected = pre.scaler.transform(knn_impute(test_table, 3, reference=pre.impute_reference))
    np.testing.assert_array_equal(np.concatenate([p.feature_matrix() for p in out.patients]), expected)
    assert not np.isnan(expected).any()


def test_fit_and_evaluate_roundtrip(tmp_path):
    ds = generate_synthetic(GeneratorConfig(n_patients=80), seed=3)
    tr, te = split_patients(ds)
    res = fit(tr, 3, 1, SMALL, FAST)
    art = res.artifact
    assert art.params.time_cfg.et_max == max(v.elapsed for p in tr.patients for v in p.visits)
    assert art.params.time_cfg.d_model == len(ds.feature_names) - 1  # age excluded
    metrics = evaluate(art, te)
    assert metrics["n_samples"] == len(prepare(art, te))
    art.save(tmp_path / "m.npz")
    from tarnn.models import ModelArtifact
    assert evaluate(ModelArtifact.load(tmp_path / "m.npz"), te) == metrics


def test_prepare_checks_unit_and_features():
    ds = generate_synthetic(GeneratorConfig(n_patients=60), seed=4)
    art = fit(ds, 3, 1, SMALL, FAST).artifact
    days = generate_synthetic(GeneratorConfig(n_patients=10, unit="days"), seed=4)
    with pytest.raises(DataError, match="unit"):
        prepare(art, days)
    other = generate_synthetic(GeneratorConfig(n_patients=10, n_features=3, n_informative=2), seed=4)
    with pytest.raises(DataError, match="feature"):
        prepare(art, other)


def test_fit_needs_a_batch_of_windows():
    ds = generate_synthetic(GeneratorConfig(n_patients=6), seed=5)
    with pytest.raises(DataError):
        fit(ds, 3, 1, SMALL, TrainConfig(batch_size=16))


def test_sweep_rows_keep_scenario_and_shared_seeds():
    ds = generate_synthetic(preset("default", n_patients=70, min_visits=5), seed=6)
    rows = sweep_variants(ds, ["ta-rnn", "a-rnn"], [(2, 1), (2, 2)], [0, 1], SMALL, FAST)
    assert len(rows) == 8
    assert {(r["variant"], r["m"], r["n"]) for r in rows} == {
        ("TA_RNN", 2, 1), ("A_RNN", 2, 1), ("TA_RNN_AE", 2, 2), ("A_RNN_AE", 2, 2)}
    assert all(r["n_samples"] > 0 for r in rows)
    for variant in ("TA_RNN", "A_RNN"):
        assert sorted(r["seed"] for r in rows if r["variant"] == variant) == [0, 1]
