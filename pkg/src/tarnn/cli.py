"""Command line entry point: ``tarnn {generate,train,evaluate,ablate,explain}``.

Settings are resolved as flags > ``--config`` file (``key=value`` lines) >
built-in defaults, and the effective settings are written next to the outputs.

Exit codes: 0 success, 2 usage/configuration, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import ConfigError, DataError, NumericError, TarnnError, UndefinedMetricError
from .models import ModelArtifact
from .pipeline import (
    ExperimentConfig,
    attention_report,
    evaluate,
    fit,
    resolve_variant,
    split_patients,
    sweep_variants,
)
from .training import TrainConfig

logger = logging.getLogger("tarnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

METRIC_FIELDS = ["f2", "sensitivity", "auc", "tp", "fp", "tn", "fn", "n_samples"]


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _scenarios(text: str) -> list[tuple[int, int]]:
    out = []
    for part in str(text).split(","):
        try:
            m, n = part.split(":")
            out.append((int(m), int(n)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"scenario {part!r} is not of the form m:n") from None
    return out


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _fmt(x) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6f}"


# ---------------------------------------------------------------- parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--variant", default="ta-rnn",
                   help="ta-rnn, ta-rnn-ae, a-rnn, t-rnn, a-rnn-ae, t-rnn-ae (AE form implied when n > 1)")
    g.add_argument("--cell", default="gru", help="gru, lstm, bigru or bilstm")
    g.add_argument("--hidden", type=int, default=16, help="RNN hidden size")
    g.add_argument("--d-model", type=int, default=None,
                   help="embedding size (default: number of features; otherwise a projection is learned)")
    g.add_argument("--mlp-hidden", type=int, default=16)
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--no-demographics", action="store_true")
    g.add_argument("--exclude", type=_str_list, default="age", help="comma-separated features left out of X")
    g.add_argument("--impute-k", type=int, default=5)
    t = p.add_argument_group("training")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--delta", type=float, default=0.7, help="positive-class weight of the loss")
    t.add_argument("--l2", type=float, default=0.0)
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--test-fraction", type=float, default=0.3)
    t.add_argument("--threshold", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tarnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset and its data card")
    g.add_argument("--config")
    g.add_argument("--patients", type=int, default=None, help="number of patients (required)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", default="default", choices=sorted(data_mod.PRESETS))
    g.add_argument("--unit", default=None, choices=data_mod.UNITS)
    g.add_argument("--features", type=int, default=None, help="longitudinal features besides age")
    g.add_argument("--min-visits", type=int, default=None)
    g.add_argument("--max-visits", type=int, default=None)
    g.add_argument("--missing-rate", type=float, default=None)
    g.add_argument("--hazard-time", type=float, default=None)
    g.add_argument("--out", default="dataset.jsonl")

    t = sub.add_parser("train", help="preprocess, window and train one model per seed")
    t.add_argument("--config")
    t.add_argument("--data", default=None, help="dataset file (required)")
    t.add_argument("--out-dir", default="run")
    t.add_argument("--m", type=int, default=3, help="input visits")
    t.add_argument("--n", type=int, default=1, help="visits ahead to predict")
    t.add_argument("--seeds", type=_int_list, default="0")
    _add_model_flags(t)

    e = sub.add_parser("evaluate", help="score model artifacts on a dataset")
    e.add_argument("--config")
    e.add_argument("--model", nargs="+", default=None, help="model artifact(s) (required)")
    e.add_argument("--data", default=None, help="dataset file (required)")
    e.add_argument("--threshold", type=float, default=None, help="override the artifact's threshold")
    e.add_argument("--out", default="metrics.csv")

    a = sub.add_parser("ablate", help="compare TA / A / T variants over shared seeds")
    a.add_argument("--config")
    a.add_argument("--data", default=None, help="dataset file (required)")
    a.add_argument("--out-dir", default="ablation")
    a.add_argument("--variants", type=_str_list, default="ta-rnn,a-rnn,t-rnn")
    a.add_argument("--scenarios", type=_scenarios, default="3:1")
    a.add_argument("--seeds", type=_int_list, default="0,1,2,3,4")
    _add_model_flags(a)

    x = sub.add_parser("explain", help="write attention weights as CSV (and optional heatmaps)")
    x.add_argument("--config")
    x.add_argument("--model", default=None, help="model artifact (required)")
    x.add_argument("--data", default=None, help="dataset file (required)")
    x.add_argument("--out-dir", default="explain")
    x.add_argument("--heatmap", action="store_true", help="also write PNG heatmaps")
    return parser


def _read_config(path: str) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        overrides = {}
        for key, value in _read_config(args.config).items():
            if key not in actions or key in ("config", "help"):
                parser.error(f"unknown config key {key!r} for {args.command}")
            if isinstance(actions[key], argparse._StoreTrueAction):
                overrides[key] = value.lower() in ("1", "true", "yes", "on")
            elif actions[key].nargs == "+":
                overrides[key] = value.split()
            else:
                overrides[key] = value
        subparser.set_defaults(**overrides)
        args = parser.parse_args(argv)
    required = {"generate": ["patients"], "train": ["data"], "evaluate": ["model", "data"],
                "ablate": ["data"], "explain": ["model", "data"]}[args.command]
    missing = [r for r in required if getattr(args, r) is None]
    if missing:
        parser.error(f"{args.command}: missing required option(s): "
                     + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def _write_effective(args: argparse.Namespace, path: Path) -> None:
    lines = []
    for k, v in sorted(vars(args).items()):
        if isinstance(v, list):
            v = ",".join(":".join(map(str, x)) if isinstance(x, tuple) else str(x) for x in v)
        lines.append(f"{k}={v}")
    path.write_text("\n".join(lines) + "\n")


def _experiment(args) -> tuple[ExperimentConfig, TrainConfig]:
    exp = ExperimentConfig(
        variant=args.variant,
        cell=args.cell,
        hidden_size=args.hidden,
        d_model=args.d_model,
        mlp_hidden=args.mlp_hidden,
        dropout_rate=args.dropout,
        use_demographics=not args.no_demographics,
        impute_k=args.impute_k,
        exclude_features=tuple(args.exclude),
    )
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                            delta=args.delta, l2_lambda=args.l2)
    return exp, train_cfg


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    overrides = {"n_patients": args.patients}
    for flag, field in (("unit", "unit"), ("features", "n_features"), ("min_visits", "min_visits"),
                        ("max_visits", "max_visits"), ("missing_rate", "missing_rate"),
                        ("hazard_time", "hazard_time")):
        if getattr(args, flag) is not None:
            overrides[field] = getattr(args, flag)
    cfg = data_mod.preset(args.preset, **overrides)
    if cfg.n_informative > cfg.n_features:
        cfg.n_informative = cfg.n_features
    ds = data_mod.generate_synthetic(cfg, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.save_dataset(ds, out)
    data_mod.write_data_card(out.with_suffix(".card.txt"), {"preset": args.preset, **ds.card})
    logger.info("wrote %d patients to %s", len(ds), out)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = data_mod.load_dataset(args.data)
    exp, train_cfg = _experiment(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective(args, out_dir / "effective_config.txt")
    train_ds, test_ds = split_patients(ds, args.test_fraction, args.split_seed)
    data_mod.save_dataset(train_ds, out_dir / "train_split.jsonl")
    data_mod.save_dataset(test_ds, out_dir / "test_split.jsonl")
    for seed in args.seeds:
        result = fit(train_ds, args.m, args.n, exp, replace(train_cfg, seed=seed), args.threshold)
        art = result.artifact
        art.save(out_dir / f"model_seed{seed}.npz")
        result.history.write_csv(out_dir / f"history_seed{seed}.csv")
        logger.info("seed %d: %s on %d windows, final loss %.5f", seed, art.config.variant,
                    result.n_train, result.history.loss[-1] if result.history.loss else float("nan"))
    with open(out_dir / "scaler.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "min", "max"])
        for name, lo, hi in zip(art.feature_names, art.scaler.min_, art.scaler.max_):
            w.writerow([name, repr(float(lo)), repr(float(hi))])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = data_mod.load_dataset(args.data)
    rows = []
    for path in args.model:
        art = ModelArtifact.load(path)
        res = evaluate(art, ds, args.threshold)
        m, n = art.scenario
        rows.append({"model": Path(path).name, "variant": art.config.variant, "scenario": f"{m}->{n}",
                     "seed": art.seed, **res})
    if any(r["auc"] is None for r in rows):
        logger.warning("AUC undefined: evaluation labels contain a single class")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["model", "variant", "scenario", "seed"] + METRIC_FIELDS
    summary = {}
    for key in ("f2", "sensitivity", "auc"):
        vals = [r[key] for r in rows if r[key] is not None]
        summary[key] = (
            statistics.fmean(vals) if vals else None,
            statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None),
        )
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r["model"], r["variant"], r["scenario"], r["seed"]] + [_fmt(r[k]) for k in METRIC_FIELDS])
        for i, label in enumerate(("mean", "sd")):
            w.writerow([label, "", "", ""] + [_fmt(summary[k][i]) if k in summary else "" for k in METRIC_FIELDS])
    report = {"runs": rows, "summary": {k: {"mean": v[0], "sd": v[1]} for k, v in summary.items()}}
    out.with_suffix(".json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"F2 {_fmt(summary['f2'][0])} +- {_fmt(summary['f2'][1])}  "
          f"sensitivity {_fmt(summary['sensitivity'][0])}  AUC {_fmt(summary['auc'][0])}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    ds = data_mod.load_dataset(args.data)
    exp, train_cfg = _experiment(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective(args, out_dir / "effective_config.txt")
    rows = sweep_variants(ds, args.variants, args.scenarios, args.seeds, exp, train_cfg, args.split_seed)
    with open(out_dir / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "scenario", "seed"] + METRIC_FIELDS)
        for r in rows:
            w.writerow([r["variant"], f"{r['m']}->{r['n']}", r["seed"]] + [_fmt(r[k]) for k in METRIC_FIELDS])
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model"] + [f"{m}->{n}" for m, n in args.scenarios])
        for variant in args.variants:
            cells = []
            for m, n in args.scenarios:
                name = resolve_variant(variant, n)
                f2 = [r["f2"] for r in rows if r["variant"] == name and (r["m"], r["n"]) == (m, n)]
                sd = statistics.stdev(f2) if len(f2) > 1 else 0.0
                cells.append(f"{statistics.fmean(f2):.3f} ± {sd:.3f}")
            w.writerow([variant.upper()] + cells)
    print((out_dir / "ablation.csv").read_text(), end="")
    return EXIT_OK


def cmd_explain(args) -> int:
    art = ModelArtifact.load(args.model)
    ds = data_mod.load_dataset(args.data)
    samples, rep = attention_report(art, ds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective(args, out_dir / "effective_config.txt")
    T, d = rep.beta.shape[1:]
    kept = [f for f in art.feature_names if f not in art.exclude_features]
    dims = kept if d == len(kept) else [f"dim{i + 1}" for i in range(d)]
    visits = [f"visit{j + 1}" for j in range(T)]
    ids = [s.patient_id for s in samples]

    def write(name, head, body):
        with open(out_dir / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            w.writerows(body)

    write("alpha.csv", ["sample"] + visits,
          [[i] + [repr(float(x)) for x in row] for i, row in zip(ids, rep.alpha)])
    for name, mat in (("beta.csv", rep.beta), ("combined.csv", rep.combined)):
        write(name, ["sample", "visit"] + dims,
              [[i, j + 1] + [repr(float(x)) for x in mat[b, j]] for b, i in enumerate(ids) for j in range(T)])
    write("feature_mean.csv", ["sample"] + dims,
          [[i] + [repr(float(x)) for x in row] for i, row in zip(ids, rep.feature_mean)])
    write("cohort_visit_mean.csv", ["visit", "weight"],
          [[v, repr(float(x))] for v, x in zip(visits, rep.cohort_visit_mean())])
    write("cohort_feature_mean.csv", ["feature", "weight"],
          [[f, repr(float(x))] for f, x in zip(dims, rep.cohort_feature_mean())])
    if args.heatmap:
        _heatmaps(rep, visits, dims, out_dir)
    return EXIT_OK


def _heatmaps(rep, visits, dims, out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(visits, rep.cohort_visit_mean())
    ax.set_ylabel("mean visit weight")
    fig.tight_layout()
    fig.savefig(out_dir / "visit_weights.png", dpi=120)
    plt.close(fig)
    fig, ax = plt.subplots(figsize=(1 + 0.5 * len(dims), 1 + 0.5 * len(visits)))
    im = ax.imshow(rep.cohort_combined_mean(), aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(dims)), dims, rotation=90)
    ax.set_yticks(range(len(visits)), visits)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out_dir / "combined_heatmap.png", dpi=120)
    plt.close(fig)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "explain": cmd_explain}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TarnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
