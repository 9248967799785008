"""Command-line entry point.

Subcommands: synth, featurize, train, recommend, evaluate, baseline,
gradcheck.  Options can come from a JSON config file (flags win), and the
HLRP_SEED environment variable supplies a default seed when neither a
flag nor the config provides one.  Exit code 0 on success, 1 with a
one-line diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .baseline import baseline_recommend
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .evaluation import evaluate
from .features import build_schema, featurize, min_max_scale, parse_holdings
from .gradcheck import run_gradcheck
from .pipeline import (ModelRecommender, baseline_for_query, build_query_from,
                       fit_quarter, ground_truth, query_for_model)
from .predictor import TrainConfig, recommend_holders
from .sage import AggregatorKind
from .synthetic import SyntheticConfig, generate_synthetic, write_holdings_csv

_TRAIN_KEYS = ("learning_rate", "embedding_dim", "layers", "aggregator", "epochs",
               "negative_ratio", "seed", "test_fraction", "hidden_dim", "mlp_hidden",
               "training_mode")
_PATH_KEYS = ("data", "checkpoint", "report", "loss_out", "out_dir")
_OTHER_KEYS = ("num_segments", "ks", "synthetic")
_KNOWN_KEYS = set(_TRAIN_KEYS) | set(_PATH_KEYS) | set(_OTHER_KEYS)


def default_run_config() -> dict:
    cfg = {key: getattr(TrainConfig(), key) for key in _TRAIN_KEYS}
    cfg["aggregator"] = cfg["aggregator"].value
    cfg["num_segments"] = 4
    cfg["ks"] = [50, 100, 200]
    cfg["synthetic"] = dataclasses.asdict(SyntheticConfig())
    return cfg


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    unknown = sorted(set(cfg) - _KNOWN_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    synth = cfg.get("synthetic", {})
    bad = sorted(set(synth) - {f.name for f in dataclasses.fields(SyntheticConfig)})
    if bad:
        raise ValueError(f"unknown synthetic config keys: {', '.join(bad)}")
    return cfg


def _pick(flag_value, config, key, fallback):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return fallback


def _resolve_seed(flag_value, config) -> int:
    if flag_value is not None:
        return flag_value
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get("HLRP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"HLRP_SEED must be an integer, got '{env}'") from None
    return 0


def load_snapshots(paths) -> dict:
    snapshots = {}
    for path in paths:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for quarter, snap in parse_holdings(fh).items():
                if quarter in snapshots:
                    raise ValueError(f"quarter {quarter} appears in more than one data file")
                snapshots[quarter] = snap
    if not snapshots:
        raise ValueError("no holdings rows found in the data files")
    return snapshots


def _pick_snapshot(snapshots, quarter, what):
    if quarter is None:
        if len(snapshots) == 1:
            return next(iter(snapshots.values()))
        raise ValueError(
            f"--{what} needed: data holds quarters {', '.join(sorted(snapshots))}")
    snap = snapshots.get(quarter)
    if snap is None:
        raise ValueError(f"quarter {quarter} not present in the data "
                         f"(available: {', '.join(sorted(snapshots))})")
    return snap


def _train_config(args, config) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(_pick(args.lr, config, "learning_rate", 0.01)),
        embedding_dim=int(_pick(args.embedding_dim, config, "embedding_dim", 128)),
        layers=int(_pick(args.layers, config, "layers", 2)),
        aggregator=AggregatorKind.from_name(
            _pick(args.aggregator, config, "aggregator", "gcn")),
        epochs=int(_pick(args.epochs, config, "epochs", 200)),
        negative_ratio=float(_pick(args.negative_ratio, config, "negative_ratio", 1.0)),
        seed=_resolve_seed(args.seed, config),
        test_fraction=float(_pick(args.test_fraction, config, "test_fraction", 0.1)),
        hidden_dim=_pick(args.hidden_dim, config, "hidden_dim", None),
        mlp_hidden=int(_pick(args.mlp_hidden, config, "mlp_hidden", 64)),
        training_mode=_pick(args.training_mode, config, "training_mode", "joint"),
    )


def _synth_config(args, config) -> SyntheticConfig:
    block = dict(config.get("synthetic", {}))
    block["seed"] = _resolve_seed(args.seed if args.seed is not None else block.get("seed"),
                                  {})
    for flag, key in (("holders", "num_holders"), ("funds", "num_funds"),
                      ("styles", "num_styles"), ("within", "within_style_edge_prob"),
                      ("cross", "cross_style_edge_prob"), ("persistence", "persistence"),
                      ("new_holder_fraction", "new_holder_fraction"),
                      ("attr_fidelity", "attr_fidelity"), ("quarter", "quarter"),
                      ("next_quarter", "next_quarter")):
        val = getattr(args, flag)
        if val is not None:
            block[key] = val
    return SyntheticConfig(**block)


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------

def cmd_synth(args, config) -> int:
    synth_config = _synth_config(args, config)
    data = generate_synthetic(synth_config)
    out_dir = Path(_pick(args.out_dir, config, "out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for quarter, rows in ((synth_config.quarter, data.positions_t),
                          (synth_config.next_quarter, data.positions_t1)):
        path = out_dir / f"holdings_{quarter}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_holdings_csv(rows, fh)
        paths.append(path)
    styles_path = out_dir / "styles.json"
    with open(styles_path, "w", encoding="utf-8") as fh:
        json.dump({"holder_styles": data.holder_styles,
                   "fund_styles": data.fund_styles,
                   "fund_attributes": {k: list(v) for k, v in data.fund_attributes.items()}},
                  fh, indent=2, sort_keys=True)
    for path in paths + [styles_path]:
        print(path)
    return 0


def cmd_featurize(args, config) -> int:
    snapshots = load_snapshots(args.data or _config_data(config))
    snap = _pick_snapshot(snapshots, args.quarter, "quarter")
    schema = build_schema([snap])
    holder_fm, fund_fm = featurize(snap, schema)
    holder_scaled, holder_scaler = min_max_scale(holder_fm)
    fund_scaled, fund_scaler = min_max_scale(fund_fm)
    print(f"quarter={snap.quarter} holders={snap.num_holders} funds={snap.num_funds} "
          f"features={schema.width}")
    if args.out:
        np.savez(args.out,
                 holder=holder_scaled.values, fund=fund_scaled.values,
                 columns=np.array([f"{f}={v}" for f, v in schema.columns]),
                 holder_min=holder_scaler.col_min, holder_max=holder_scaler.col_max,
                 fund_min=fund_scaler.col_min, fund_max=fund_scaler.col_max)
        print(args.out)
    return 0


def cmd_train(args, config) -> int:
    snapshots = load_snapshots(args.data or _config_data(config))
    snap = _pick_snapshot(snapshots, args.quarter, "quarter")
    train_config = _train_config(args, config)
    model = fit_quarter(snap, train_config)
    ckpt_path = _pick(args.checkpoint_out, config, "checkpoint", None)
    if ckpt_path is None:
        raise ValueError("train needs --checkpoint-out (or a 'checkpoint' config entry)")
    save_checkpoint(ckpt_path, model)
    loss_path = _pick(args.loss_out, config, "loss_out", None)
    if loss_path:
        with open(loss_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss\n")
            for i, loss in enumerate(model.training_loss_curve, start=1):
                fh.write(f"{i},{loss!r}\n")
        print(loss_path)
    final = model.training_loss_curve[-1] if model.training_loss_curve else float("nan")
    print(f"trained quarter={snap.quarter} aggregator={train_config.aggregator.value} "
          f"epochs={train_config.epochs} final_loss={final:.6f} test_auc={model.test_auc:.6f}")
    print(ckpt_path)
    return 0


def cmd_recommend(args, config) -> int:
    ckpt_path = _pick(args.checkpoint, config, "checkpoint", None)
    if ckpt_path is None:
        raise ValueError("recommend needs --checkpoint")
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    snapshots = load_snapshots(args.data or _config_data(config))
    snap = _pick_snapshot(snapshots, args.quarter or model.train_quarter, "quarter")
    query = query_for_model(model, snap)
    fund = query.fund_pos.get(args.fund)
    if fund is None:
        raise ValueError(f"unknown fund id '{args.fund}' in quarter {snap.quarter}")
    picks = recommend_holders(model, query.graph, query.holder_feats, query.fund_feats,
                              fund, args.top, exclude_existing=args.new_only)
    for rank, (idx, prob) in enumerate(picks, start=1):
        print(f"{rank}\t{query.holder_ids[idx]}\t{prob:.10f}")
    return 0


def cmd_baseline(args, config) -> int:
    snapshots = load_snapshots(args.data or _config_data(config))
    snap = _pick_snapshot(snapshots, args.quarter, "quarter")
    num_segments = int(_pick(args.segments, config, "num_segments", 4))
    schema = build_schema([snap])
    holder_fm, fund_fm = featurize(snap, schema)
    holder_scaled, holder_scaler = min_max_scale(holder_fm)
    fund_scaled, fund_scaler = min_max_scale(fund_fm)
    query = build_query_from(schema,
                             {"holder": holder_scaler, "fund": fund_scaler},
                             snap.quarter, snap)
    fund = query.fund_pos.get(args.fund)
    if fund is None:
        raise ValueError(f"unknown fund id '{args.fund}' in quarter {snap.quarter}")
    rec = baseline_for_query(query, snap, diverse=args.diverse,
                             num_segments=num_segments)
    picks = rec.rank(fund, args.top, args.new_only)
    sims = dict(baseline_recommend(query.fund_feats[fund], query.holder_feats,
                                   query.graph.num_holders))
    for rank, idx in enumerate(picks, start=1):
        print(f"{rank}\t{query.holder_ids[idx]}\t{sims[idx]:.10f}")
    return 0


def cmd_evaluate(args, config) -> int:
    snapshots = load_snapshots(args.data or _config_data(config))
    snap_t = _pick_snapshot(snapshots, args.train_quarter, "train-quarter")
    snap_t1 = _pick_snapshot(snapshots, args.truth_quarter, "truth-quarter")
    ks = args.ks or config.get("ks", [50, 100, 200])
    num_segments = int(_pick(args.segments, config, "num_segments", 4))
    variants = (["all_holders", "newly_added"] if args.variant == "both"
                else ["newly_added" if args.variant == "newly_added" else "all_holders"])

    recommenders = []
    if args.checkpoint:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint))
        query = query_for_model(model, snap_t, snap_t1)
        recommenders.append(("model", ModelRecommender(model, query)))
        base_query = query
    else:
        schema = build_schema([snap_t])
        holder_fm, fund_fm = featurize(snap_t, schema)
        _, holder_scaler = min_max_scale(holder_fm)
        _, fund_scaler = min_max_scale(fund_fm)
        base_query = build_query_from(schema,
                                      {"holder": holder_scaler, "fund": fund_scaler},
                                      snap_t.quarter, snap_t, snap_t1)
    if args.baseline or not args.checkpoint:
        rec = baseline_for_query(base_query, snap_t, snap_t1, diverse=args.diverse,
                                 num_segments=num_segments)
        name = "baseline_diverse" if args.diverse else "baseline"
        recommenders.append((name, rec))

    gt_t = ground_truth(snap_t, base_query)
    gt_t1 = ground_truth(snap_t1, base_query)
    reports = []
    for name, rec in recommenders:
        for variant in variants:
            report = evaluate(rec, gt_t1, ks=ks, variant=variant,
                              prior_truth=gt_t if variant == "newly_added" else None)
            report.recommender = name
            reports.append(report)
            print(report.to_text())
    report_path = _pick(args.report_out, config, "report", None)
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump({"reports": [r.to_json_dict() for r in reports]},
                      fh, indent=2, sort_keys=True)
        print(report_path)
    return 0


def cmd_gradcheck(args, config) -> int:
    seed = _resolve_seed(args.seed, config)
    report = run_gradcheck(seeds=(seed,), tolerance=args.tolerance)
    worst = {}
    for row in report.rows:
        key = (row.kind, row.param)
        worst[key] = max(worst.get(key, 0.0), row.max_rel_error)
    for (kind, param), err in sorted(worst.items()):
        print(f"{kind}\t{param}\tmax_rel_error={err:.3e}")
    if not report.ok:
        print(f"gradcheck FAILED: worst error {report.worst:.3e} "
              f"exceeds {report.tolerance:.1e}", file=sys.stderr)
        return 1
    print(f"gradcheck OK: worst error {report.worst:.3e} within {report.tolerance:.1e}")
    return 0


def _config_data(config):
    data = config.get("data")
    if data is None:
        raise ValueError("no --data given and the config holds no 'data' entry")
    return [data] if isinstance(data, str) else list(data)


# ---------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------

def _add_data_flags(p):
    p.add_argument("--data", action="append", help="holdings CSV (repeatable)")
    p.add_argument("--quarter", help="quarter label, e.g. 2021Q3")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="holderrec",
        description="Holder-fund recommendations via graph representation learning")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default configuration as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic two-quarter dataset")
    p.add_argument("--out-dir")
    p.add_argument("--holders", type=int)
    p.add_argument("--funds", type=int)
    p.add_argument("--styles", type=int)
    p.add_argument("--within", type=float)
    p.add_argument("--cross", type=float)
    p.add_argument("--persistence", type=float)
    p.add_argument("--new-holder-fraction", type=float, dest="new_holder_fraction")
    p.add_argument("--attr-fidelity", type=float, dest="attr_fidelity")
    p.add_argument("--quarter")
    p.add_argument("--next-quarter", dest="next_quarter")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="build and scale node features for one quarter")
    _add_data_flags(p)
    p.add_argument("--out", help="write matrices to this .npz file")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train the encoder and edge scorer on one quarter")
    _add_data_flags(p)
    p.add_argument("--checkpoint-out", dest="checkpoint_out")
    p.add_argument("--loss-out", dest="loss_out")
    p.add_argument("--aggregator", choices=[k.value for k in AggregatorKind])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--embedding-dim", type=int, dest="embedding_dim")
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--mlp-hidden", type=int, dest="mlp_hidden")
    p.add_argument("--negative-ratio", type=float, dest="negative_ratio")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--training-mode", choices=["joint", "separate"], dest="training_mode")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recommend", help="rank holders for one fund")
    _add_data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--fund", required=True)
    p.add_argument("--top", type=int, default=50)
    p.add_argument("--new-only", action="store_true", dest="new_only",
                   help="exclude holders already invested in the fund")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("baseline", help="cosine content-similarity ranking for one fund")
    _add_data_flags(p)
    p.add_argument("--fund", required=True)
    p.add_argument("--top", type=int, default=50)
    p.add_argument("--new-only", action="store_true", dest="new_only")
    p.add_argument("--diverse", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--segments", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="temporal next-quarter evaluation")
    p.add_argument("--data", action="append")
    p.add_argument("--train-quarter", dest="train_quarter")
    p.add_argument("--truth-quarter", dest="truth_quarter")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--diverse", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--segments", type=int)
    p.add_argument("--ks", type=lambda s: [int(k) for k in s.split(",")])
    p.add_argument("--variant", choices=["all", "newly_added", "both"], default="all")
    p.add_argument("--report-out", dest="report_out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(json.dumps(default_run_config(), indent=2, sort_keys=True))
        return 0
    if args.command is None:
        parser.print_help()
        return 1
    try:
        config = load_config(args.config) if args.config else {}
        return args.func(args, config)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
