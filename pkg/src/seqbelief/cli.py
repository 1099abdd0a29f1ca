"""Command-line surface: synthesize, ingest, train, predict, evaluate,
sweep, and attention reporting.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import DataError, SplitSpec, parse_dataset, serialize_dataset, split_dataset, standardize_features
from .embed import EmbedderConfig, EmbedError, embed_dataset
from .evaluation import CostModel, evaluation_report
from .genmodel import SYNTH_D_E, ShapeDistribution, init_gen_params, synth_dataset
from .predict import ThresholdPolicy, predict_sequence, read_trajectories, tune_threshold, write_trajectories
from .training import Checkpoint, TrainConfig, em_fit, sweep, write_history_csv

DEFAULT_SYNTH_GAIN = 0.5


def _cmd_synth(args) -> int:
    if args.params:
        ckpt = Checkpoint.load(args.params)
        gen = ckpt.gen
    else:
        rng = np.random.default_rng(args.seed)
        gen = init_gen_params(
            args.d_s, SYNTH_D_E, args.d_emb, tuple(args.hidden), rng,
            sigma_obs=args.sigma_obs, gain=DEFAULT_SYNTH_GAIN,
        )
    out = Path(args.out)
    sidecar = Path(args.sidecar) if args.sidecar else out.with_suffix(out.suffix + ".latents")
    synth_dataset(gen, args.n, out, sidecar, seed=args.seed, shape=ShapeDistribution())
    if args.params_out:
        from .data import Scaler

        scaler = Scaler(
            mean=np.zeros(31), std=np.ones(31),
            hq_vocab=[], trademark_vocab=[], d_emb=args.d_emb,
        )
        # pseudo-checkpoint carrying the generating parameters for oracle use
        from .training import CHECKPOINT_VERSION, init_model

        cfg = TrainConfig(
            d_s=args.d_s, d_emb=args.d_emb, hidden_dims=tuple(args.hidden),
            sigma_obs=args.sigma_obs, seed=args.seed, dropout=0.0,
        )
        _, inf = init_model(cfg, SYNTH_D_E)
        Checkpoint(CHECKPOINT_VERSION, cfg, gen, inf, scaler).save(args.params_out)
    print(f"wrote {args.n} companies to {out} (latents in {sidecar})")
    return 0


def _cmd_ingest(args) -> int:
    records = parse_dataset(args.inp)
    cfg = EmbedderConfig(
        mode=args.embedder,
        d_emb=args.d_emb,
        remote_endpoint=args.endpoint,
        cache_dir=args.cache_dir,
    )
    embed_dataset(records, cfg)
    scaler = standardize_features(records, records, d_emb=args.d_emb)
    serialize_dataset(records, args.out)
    manifest_path = args.manifest or str(Path(args.out).with_suffix(".manifest.json"))
    Path(manifest_path).write_text(json.dumps(scaler.to_manifest()))
    if args.split:
        fracs = [float(x) for x in args.split.split(",")]
        if len(fracs) != 3:
            raise DataError("--split expects train,valid,test fractions")
        tr, va, te = split_dataset(
            records, SplitSpec(*fracs, seed=args.seed, stratify=True)
        )
        base = Path(args.out)
        for name, part in (("train", tr), ("valid", va), ("test", te)):
            serialize_dataset(part, base.with_suffix(f".{name}.jsonl"))
    print(f"embedded {len(records)} companies -> {args.out}; manifest -> {manifest_path}")
    return 0


def _load_train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        if "hidden_dims" in base:
            base["hidden_dims"] = tuple(base["hidden_dims"])
    overrides = {
        "learning_rate": args.lr,
        "d_s": args.d_s,
        "d_emb": args.d_emb,
        "w": args.w,
        "max_rounds": args.max_rounds,
        "seed": args.seed,
    }
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    return TrainConfig(**base)


def _cmd_train(args) -> int:
    train = parse_dataset(args.train)
    valid = parse_dataset(args.valid)
    cfg = _load_train_config(args)
    ckpt, history = em_fit(train, valid, cfg, progress=True)
    ckpt.save(args.out)
    if args.history:
        write_history_csv(history, args.history)
    print(f"checkpoint -> {args.out}")
    return 0


def _cmd_predict(args) -> int:
    records = parse_dataset(args.data)
    ckpt = Checkpoint.load(args.checkpoint)
    trajs = [predict_sequence(rec, ckpt) for rec in records]
    write_trajectories(trajs, args.out)
    print(f"wrote {len(trajs)} trajectories to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    trajs = read_trajectories(args.pred)
    truth = {r.company_id: r.label for r in parse_dataset(args.truth)}
    rates, labels = [], []
    for t in trajs:
        if t["company_id"] not in truth:
            raise DataError(f"company {t['company_id']} missing from truth file")
        rates.append(t["entries"][-1]["rate_mean"])
        labels.append(truth[t["company_id"]])
    if args.tune_on:
        tune_rows = read_trajectories(args.tune_on)
        tune_truth = {r.company_id: r.label for r in parse_dataset(args.tune_truth or args.truth)}
        tr = [t["entries"][-1]["rate_mean"] for t in tune_rows]
        tl = [tune_truth[t["company_id"]] for t in tune_rows]
        threshold = tune_threshold(tr, tl)
    else:
        threshold = args.threshold
    cost = CostModel(**json.loads(Path(args.cost_model).read_text())) if args.cost_model else CostModel()
    preds = [1 if r >= threshold else 0 for r in rates]
    report = evaluation_report(labels, preds, scores=rates, cost_model=cost)
    report["threshold"] = threshold
    out = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(out)
    print(out)
    return 0


def _cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    train = parse_dataset(args.train)
    valid = parse_dataset(args.valid)
    base = _load_train_config(args)
    rows = sweep(grid, train, valid, base)
    fieldnames = list(rows[0].keys())
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def _cmd_attention_report(args) -> int:
    trajs = read_trajectories(args.trajectories)
    by_expert: dict[str, list[float]] = defaultdict(list)
    by_call_index: dict[int, list[float]] = defaultdict(list)
    for t in trajs:
        final = t["entries"][-1]
        weights = final["status_attention"]
        for idx, (etype, wt) in enumerate(zip(t["expert_types"], weights), start=1):
            by_expert[etype].append(wt)
            by_call_index[idx].append(wt)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "key", "mean_attention", "n"])
        for etype in sorted(by_expert):
            vals = by_expert[etype]
            writer.writerow(["expert_type", etype, float(np.mean(vals)), len(vals)])
        for idx in sorted(by_call_index):
            vals = by_call_index[idx]
            writer.writerow(["call_index", str(idx), float(np.mean(vals)), len(vals)])
    print(f"attention report -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqbelief")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="sample a synthetic dataset from the generative model")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sidecar")
    sp.add_argument("--params", help="checkpoint supplying generating parameters")
    sp.add_argument("--params-out", help="write the generating parameters as a checkpoint")
    sp.add_argument("--d-s", type=int, default=8)
    sp.add_argument("--d-emb", type=int, default=16)
    sp.add_argument("--hidden", type=int, nargs="*", default=[32])
    sp.add_argument("--sigma-obs", type=float, default=1.0)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("ingest", help="embed texts and standardize features")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--embedder", choices=["mock", "remote"], default="mock")
    sp.add_argument("--endpoint")
    sp.add_argument("--d-emb", type=int, default=768)
    sp.add_argument("--manifest")
    sp.add_argument("--cache-dir")
    sp.add_argument("--split", help="train,valid,test fractions, e.g. 0.8,0.1,0.1")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_ingest)

    sp = sub.add_parser("train", help="alternating-optimization training")
    sp.add_argument("--train", required=True)
    sp.add_argument("--valid", required=True)
    sp.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    sp.add_argument("--out", required=True)
    sp.add_argument("--history")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--d-s", type=int, dest="d_s")
    sp.add_argument("--d-emb", type=int, dest="d_emb")
    sp.add_argument("--w", type=float)
    sp.add_argument("--max-rounds", type=int, dest="max_rounds")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("predict", help="belief trajectories for a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_predict)

    sp = sub.add_parser("eval", help="score trajectories against labels")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--tune-on", dest="tune_on", help="validation trajectory file for threshold tuning")
    sp.add_argument("--tune-truth", dest="tune_truth")
    sp.add_argument("--cost-model", dest="cost_model")
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("sweep", help="grid search over training configs")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--valid", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--d-s", type=int, dest="d_s")
    sp.add_argument("--d-emb", type=int, dest="d_emb")
    sp.add_argument("--w", type=float)
    sp.add_argument("--max-rounds", type=int, dest="max_rounds")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("attention-report", help="mean attention by expert type and call index")
    sp.add_argument("--trajectories", required=True)
    sp.add_argument("--data")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_attention_report)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DataError, EmbedError, ad.GraphError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
