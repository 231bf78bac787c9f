"""Acceptance criteria, one test each, at their stated tolerances.

Run alone with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

import oracle
from tarnn import autograd as ag
from tarnn.attention import context_vector, feature_attention, init_attention_params, visit_attention
from tarnn.autograd import Tensor, grad_check
from tarnn.cli import main
from tarnn.data import GeneratorConfig, MinMaxScaler, generate_synthetic, load_dataset, preset, save_dataset
from tarnn.metrics import ConfusionCounts, auc_roc, f_beta
from tarnn.models import ModelArtifact, ModelConfig, explain, init_params, predict, tarnn_forward
from tarnn.pipeline import ExperimentConfig, evaluate, fit, run_experiment, split_patients, sweep_variants
from tarnn.rnn_cells import CELL_KINDS, CellConfig, gru_step, init_cell_params, run_rnn
from tarnn.time_embedding import ElapsedTimes, TimeEmbedConfig, embed_sequence
from tarnn.training import TrainConfig, batch_loss, weighted_bce

pytestmark = pytest.mark.acceptance


def test_1_gradient_correctness(criterion):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    errors = {}

    X = rng.normal(size=(2, 3, 5))
    E = np.array([[0.0, 0.7, 1.9], [0.0, 2.2, 0.4]])
    proj = ag.parameter(rng.normal(size=(5, 4)))
    w = Tensor(rng.normal(size=(2, 3, 4)))
    errors["embedding+projection"] = grad_check(
        lambda _: ag.tsum(ag.mul(ag.tanh(embed_sequence(X, E, TimeEmbedConfig(4, 3.0), proj)), w)), [proj])

    for kind in CELL_KINDS:
        cfg = CellConfig(kind, 3, 3)
        p = init_cell_params(cfg, rng)
        Z = ag.parameter(rng.normal(size=(2, 3)))
        wk = Tensor(rng.normal(size=(2, cfg.width)))
        params = [Z] + [t for d in p.directions() for t in d.values()]
        errors[kind] = grad_check(lambda _: ag.tsum(ag.mul(run_rnn(Z, cfg, p), wk)), params)

    attn = init_attention_params(4, 3, rng)
    H = ag.parameter(rng.normal(size=(3, 4)))
    Zt = ag.parameter(rng.normal(size=(3, 3)))
    wa = Tensor(rng.normal(size=3))
    errors["attention"] = grad_check(
        lambda _: ag.tsum(ag.mul(context_vector(visit_attention(H, attn), feature_attention(H, attn), Zt), wa)),
        [H, Zt, attn.W_alpha, attn.b_alpha, attn.W_beta, attn.b_beta])

    Xb = rng.normal(size=(2, 3, 4))
    Eb = np.array([[0.0, 1.0, 0.5], [0.0, 0.3, 2.0]])
    Dem = rng.normal(size=(2, 2))
    y = np.array([1.0, 0.0])
    for variant, horizon in (("TA_RNN", None), ("TA_RNN_AE", 2)):
        cfg = ModelConfig(variant, CellConfig("GRU", 4, 5), 4, 3, 2, horizon)
        p = init_params(cfg, 4, et_max=2.0, seed=1)
        errors[variant] = grad_check(lambda _: batch_loss(p, cfg, Xb, Eb, Dem, y, 0.7), list(p))

    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    ok = worst < 1e-4 and elapsed < 30
    criterion(ok, f"max rel error {worst:.2e} over {len(errors)} checks (< 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok, errors


def test_2_attention_normalisation(criterion):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        t, width, d = (int(v) for v in rng.integers(1, 8, size=3))
        p = init_attention_params(width, d, rng)
        for v in (p.W_alpha, p.b_alpha, p.W_beta, p.b_beta):
            v.data[...] = rng.normal(scale=rng.uniform(0.1, 5.0), size=v.shape)
        H = rng.normal(scale=rng.uniform(0.1, 5.0), size=(t, width))
        alpha = visit_attention(H, p).data
        beta = feature_attention(H, p).data
        worst = max(worst, abs(alpha.sum() - 1.0), np.abs(beta.sum(axis=1) - 1.0).max())
    # combined explain matrix over a batch of random sequences
    cfg = ModelConfig("TA_RNN", CellConfig("BiGRU", 4, 3), 4, 3)
    params = init_params(cfg, 4, 2.0, seed=2)
    X = rng.normal(size=(200, 5, 4))
    E = np.concatenate([np.zeros((200, 1)), rng.uniform(0, 2, (200, 4))], axis=1)
    combined = explain(X, E, params, cfg).combined
    worst_combined = np.abs(combined.sum(axis=(1, 2)) - 1.0).max()
    ok = worst <= 1e-9 and worst_combined <= 1e-9 and combined.min() >= 0
    criterion(ok, f"max |sum-1| alpha/beta {worst:.1e}, combined {worst_combined:.1e} (<= 1e-9)")
    assert ok


def test_3_forward_oracle(criterion):
    cfg = ModelConfig("TA_RNN", CellConfig("GRU", 1, 1), 1, 1)
    p = init_params(cfg, 1, et_max=2.0, seed=3)
    for k, v in {"mlp.W_2": 0.8, "mlp.b_2": 0.1, "mlp.W_1": -1.3, "mlp.b_1": 0.2}.items():
        p[k].data[...] = v
    x = 0.6
    # T=1: TE(0) = 0 for d_model 1, alpha = beta = 1, so c = x
    expected = 1.0 / (1.0 + math.exp(-(-1.3 * max(0.0, 0.8 * x + 0.1) + 0.2)))
    got = tarnn_forward([[x]], ElapsedTimes([0.0]), None, p, cfg).item()
    scalar_err = abs(got - expected)

    rng = np.random.default_rng(3)
    cell = CellConfig("GRU", 3, 4)
    cp = init_cell_params(cell, rng)
    Z = rng.normal(size=(3, 3))
    h = Tensor(np.zeros(4))
    manual = []
    for t in range(3):
        h = gru_step(Tensor(Z[t]), h, cp.forward)
        manual.append(h.data)
    bit_exact = np.array_equal(run_rnn(Z, cell, cp).data, np.stack(manual))

    # wider cross-check against the pure-Python reference
    big = ModelConfig("TA_RNN", CellConfig("GRU", 3, 4), 3, 4, 2)
    bp = init_params(big, 3, 2.5, seed=4)
    X = rng.normal(size=(4, 3))
    E = [0.0, 0.5, 1.2, 0.8]
    Dem = rng.normal(size=2)
    P = {k: v.data.tolist() for k, v in bp.tensors.items()}
    ref_err = abs(predict(bp, big, X, E, Dem).item() - oracle.forward(P, "TA_RNN", "GRU", 4, 3, 2.5, X.tolist(), E, Dem.tolist()))

    ok = scalar_err <= 1e-10 and bit_exact and ref_err <= 1e-10
    criterion(ok, f"scalar chain error {scalar_err:.1e} (<= 1e-10), T=3 GRU bit-exact={bit_exact}, "
                  f"reference model error {ref_err:.1e}")
    assert ok


def test_4_loss_and_metric_units(criterion):
    bce = weighted_bce([1], [0.5], 0.7)
    f2 = f_beta(ConfusionCounts(tp=5, fp=5, tn=0, fn=0), 2.0)
    auc = auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    ok = abs(bce - 0.485203) <= 1e-6 and abs(f2 - 0.833333) <= 1e-6 and auc == 0.75
    criterion(ok, f"bce {bce:.7f} (0.485203 +- 1e-6), F2 {f2:.7f} (0.833333 +- 1e-6), AUC {auc!r} (== 0.75)")
    assert ok


def test_5_training_sanity(criterion):
    t0 = time.perf_counter()
    ds = generate_synthetic(preset("separable", n_patients=200), seed=0)
    train_ds, test_ds = split_patients(ds, 0.3, seed=0)
    result = fit(train_ds, 3, 1, ExperimentConfig(), TrainConfig(epochs=50, batch_size=16, seed=0))
    f2 = evaluate(result.artifact, test_ds)["f2"]
    loss = result.history.loss
    decreasing = all(b < a for a, b in zip(loss[:5], loss[1:5]))
    elapsed = time.perf_counter() - t0
    ok = decreasing and f2 >= 0.90 and elapsed < 120
    criterion(ok, f"first-5-epoch loss decreasing={decreasing}, test F2 {f2:.3f} (>= 0.90), {elapsed:.1f}s (< 120s)")
    assert ok


def test_6_ablation_direction(criterion):
    ds = generate_synthetic(preset("time-driven", n_patients=300), seed=11)
    rows = sweep_variants(ds, ["ta-rnn", "a-rnn", "t-rnn"], [(3, 1)], [0, 1, 2, 3, 4],
                          ExperimentConfig(), TrainConfig(epochs=50, batch_size=16))
    mean = {v: float(np.mean([r["f2"] for r in rows if r["variant"] == v])) for v in ("TA_RNN", "A_RNN", "T_RNN")}
    ok = mean["TA_RNN"] >= mean["A_RNN"] + 0.05
    criterion(ok, f"mean F2 TA {mean['TA_RNN']:.3f} vs A {mean['A_RNN']:.3f} (needs +0.05); "
                  f"T {mean['T_RNN']:.3f} reported only (TA >= T: {mean['TA_RNN'] >= mean['T_RNN']})")
    assert ok


def test_7_delta_monotonicity(criterion):
    ds = generate_synthetic(preset("default", n_patients=200), seed=0)
    sens = []
    for delta in (0.5, 0.7, 0.9):
        res = run_experiment(ds, 3, 1, ExperimentConfig(), TrainConfig(epochs=30, batch_size=16, seed=0, delta=delta))
        sens.append(res["sensitivity"])
    ok = all(b >= a for a, b in zip(sens, sens[1:]))
    criterion(ok, "sensitivity at delta 0.5/0.7/0.9 = " + "/".join(f"{s:.3f}" for s in sens) + " (non-decreasing)")
    assert ok


def test_8_cli_reproducibility(criterion, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    outputs = []
    for run in ("a", "b"):
        assert main(["generate", "--patients", "120", "--seed", "7", "--out", f"{run}/data.jsonl"]) == 0
        assert main(["train", "--data", f"{run}/data.jsonl", "--m", "3", "--n", "1", "--epochs", "5",
                     "--seeds", "0,1", "--out-dir", f"{run}/model"]) == 0
        assert main(["evaluate", "--model", f"{run}/model/model_seed0.npz", f"{run}/model/model_seed1.npz",
                     "--data", f"{run}/model/test_split.jsonl", "--out", f"{run}/metrics.csv"]) == 0
        outputs.append((tmp_path / run / "metrics.csv").read_bytes())
    ok = outputs[0] == outputs[1]
    criterion(ok, f"metrics.csv byte-identical across two runs ({len(outputs[0])} bytes)")
    assert ok


def test_9_round_trips(criterion, tmp_path):
    ds = generate_synthetic(GeneratorConfig(n_patients=40, missing_rate=0.15), seed=9)
    save_dataset(ds, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl")
    data_ok = (back.feature_names == ds.feature_names and back.unit == ds.unit and all(
        a.id == b.id
        and np.array_equal(a.feature_matrix(), b.feature_matrix(), equal_nan=True)
        and np.array_equal(a.elapsed(), b.elapsed())
        and np.array_equal(a.labels(), b.labels())
        and np.array_equal(a.demographics, b.demographics)
        for a, b in zip(ds.patients, back.patients)) and len(back) == len(ds))

    train_ds, test_ds = split_patients(ds)
    art = fit(train_ds, 3, 1, ExperimentConfig(variant="ta-rnn", cell="bilstm", hidden_size=4),
              TrainConfig(epochs=3, batch_size=8)).artifact
    art.save(tmp_path / "m.npz")
    loaded = ModelArtifact.load(tmp_path / "m.npz")
    from tarnn.pipeline import prepare, score
    model_ok = np.array_equal(score(art, prepare(art, test_ds)), score(loaded, prepare(loaded, test_ds)))

    rng = np.random.default_rng(9)
    table = rng.normal(scale=100.0, size=(50, 6))
    scaler = MinMaxScaler.fit(table)
    x = rng.normal(scale=100.0, size=(20, 6))
    inv_err = float(np.abs(scaler.inverse_transform(scaler.transform(x)) - x).max())
    norm_ok = inv_err <= 1e-12 * max(1.0, float(np.abs(x).max()))

    ok = data_ok and model_ok and norm_ok
    criterion(ok, f"dataset lossless={data_ok}, artifact predictions bit-identical={model_ok}, "
                  f"inverse-transform max error {inv_err:.1e}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
