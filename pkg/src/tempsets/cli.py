"""Command-line entry point: preprocess, train, eval, predict, synth, gradcheck.

Every command is reproducible from its inputs, config file and seed alone.
A JSON config file supplies training defaults and individual flags override
it.  Set TEMPSETS_LOG_LEVEL (DEBUG/INFO/WARNING) for progress logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import baselines as bl
from . import data as dt
from . import metrics as mt
from . import synth as sy
from . import training as tr
from .base import NotFittedError
from .model import ABLATIONS, DNNTSP

log = logging.getLogger("tempsets")

_TRAIN_FLAGS = {
    "lr": float,
    "epochs": int,
    "batch_size": int,
    "l2": float,
    "embed_dim": int,
    "conv_out_dim": int,
    "conv_layers": int,
    "heads": int,
    "seed": int,
    "ablation": str,
    "graph_mode": str,
    "train_fraction": float,
    "select_k": int,
    "workers": int,
}
_TRAIN_BOOL_FLAGS = ("feature_norm", "agg_normalize")


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with TrainConfig fields")
    for name, typ in _TRAIN_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if name == "ablation":
            parser.add_argument(flag, choices=[a.replace("_", "-") for a in ABLATIONS])
        elif name == "graph_mode":
            parser.add_argument(flag, choices=["dynamic", "static"])
        else:
            parser.add_argument(flag, type=typ)
    for name in _TRAIN_BOOL_FLAGS:
        parser.add_argument(
            "--" + name.replace("_", "-"), action=argparse.BooleanOptionalAction
        )


def _build_config(args) -> tr.TrainConfig:
    fields: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            fields.update(json.load(fh))
    for name in list(_TRAIN_FLAGS) + list(_TRAIN_BOOL_FLAGS):
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    if isinstance(fields.get("ablation"), str):
        fields["ablation"] = fields["ablation"].replace("-", "_")
    return tr.TrainConfig(**fields)


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_preprocess(args) -> int:
    records = dt.load_jsonl(args.input)
    vocab = dt.build_vocab(records, coverage=args.coverage)
    sequences = dt.preprocess(records, vocab, min_history=args.min_history, t_max=args.t_max)
    ratios = tuple(_parse_float_list(args.ratios))
    if len(ratios) != 3:
        raise ValueError(f"--ratios needs three comma-separated values, got {args.ratios!r}")
    dataset = dt.split_users(sequences, ratios=ratios, seed=args.seed, vocab=vocab)
    meta = dict(
        dataset.meta,
        coverage=args.coverage,
        min_history=args.min_history,
        t_max=args.t_max,
        source=os.path.basename(str(args.input)),
    )
    dataset = dt.Dataset(dataset.vocab, dataset.train, dataset.valid, dataset.test, meta)
    dt.save_dataset(dataset, args.out)
    log.info("preprocess: %d users -> %s", len(sequences), args.out)
    print(
        f"vocab={len(vocab)} train={len(dataset.train)} "
        f"valid={len(dataset.valid)} test={len(dataset.test)}"
    )
    return 0


def cmd_train(args) -> int:
    dataset = dt.load_dataset(args.dataset)
    config = _build_config(args)
    estimator = DNNTSP(**config.to_dict())
    estimator.fit(dataset)
    estimator.save(args.checkpoint)
    if args.log:
        tr.write_log_csv(estimator.log_, args.log)
    best = estimator.log_[estimator.best_epoch_ - 1]
    print(
        f"trained {config.epochs} epochs; best epoch {estimator.best_epoch_} "
        f"(recall@{config.select_k}={best[f'recall@{config.select_k}']})"
    )
    return 0


def _eval_split(dataset: dt.Dataset, name: str) -> list:
    if name not in ("valid", "test"):
        raise ValueError(f"--split must be valid or test, got {name!r}")
    return getattr(dataset, name)


def cmd_eval(args) -> int:
    dataset = dt.load_dataset(args.dataset)
    if args.train_fraction is not None:
        dataset = dt.subsample_train(dataset, args.train_fraction, seed=args.seed or 0)
    if args.baseline:
        predictor = bl.make_baseline(args.baseline)
        predictor.fit(dataset.train, dataset.num_elements)
        label = args.baseline
    else:
        if not args.checkpoint:
            raise ValueError("eval needs --checkpoint or --baseline")
        predictor = DNNTSP.load(args.checkpoint)
        if args.ablation:
            predictor.set_params(ablation=args.ablation.replace("-", "_"))
        label = f"checkpoint:{args.checkpoint}"
    sequences = _eval_split(dataset, args.split)
    report = mt.evaluate(predictor, sequences, ks=_parse_int_list(args.k), keep_per_user=args.per_user)
    if args.out_json:
        report.to_json(args.out_json)
    if args.out_csv:
        report.to_csv(args.out_csv)
    print(f"# {label} on {args.split} ({report.num_users} users)")
    print("k,recall,ndcg,phr")
    for k in sorted(report.per_k):
        row = report.per_k[k]
        print(f"{k},{row['recall']},{row['ndcg']},{row['phr']}")
    return 0


def cmd_predict(args) -> int:
    predictor = DNNTSP.load(args.checkpoint)
    if predictor.vocab_ is None:
        raise ValueError("checkpoint carries no vocabulary; cannot map raw element ids")
    with open(args.history, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "sets" not in doc:
        raise ValueError(f"{args.history}: expected a JSON object with a 'sets' field")
    index_of = predictor.vocab_.index_of
    history = []
    for s in doc["sets"]:
        mapped = frozenset(index_of[e] for e in s if e in index_of)
        if mapped:
            history.append(mapped)
    if not history:
        raise ValueError("history contains no known elements after vocabulary mapping")
    scores = predictor.predict_proba(history)
    ranked = mt.topk(scores, args.k)
    out = {
        "user": doc.get("user"),
        "top_k": [
            {"element": predictor.vocab_.raw_of[j], "probability": float(scores[j])}
            for j in ranked
        ],
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_synth(args) -> int:
    if args.kind == "repeat":
        records = sy.gen_repeat(
            users=args.users,
            num_elements=args.elements,
            steps=args.steps,
            p_repeat=args.p_repeat,
            seed=args.seed,
            basket_size=args.basket_size,
            noise=args.noise,
        )
    else:
        records = sy.gen_cooccur(
            users=args.users,
            num_elements=args.elements,
            steps=args.steps,
            pair_strength=args.pair_strength,
            seed=args.seed,
            cues_per_set=args.cues_per_set,
        )
    sy.write_jsonl(records, args.out)
    print(f"wrote {len(records)} users to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    config = _build_config(args)
    report = tr.run_grad_audit(config)
    for name, entry in sorted(report["tensors"].items()):
        status = "ok" if entry["passed"] else "FAIL"
        print(f"{name}: max_rel_err={entry['max_rel_err']:.3e} {status}")
    print(f"max_rel_err={report['max_rel_err']:.3e} {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempsets", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="JSONL records -> preprocessed dataset JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--coverage", type=float, default=0.8)
    p.add_argument("--min-history", type=int, default=2)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--ratios", default="0.7,0.1,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="dataset + config -> checkpoint + CSV log")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="checkpoint or baseline -> metrics report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=sorted(bl.BASELINES))
    p.add_argument("--ablation", choices=[a.replace("_", "-") for a in ABLATIONS])
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", default="10,20,30,40")
    p.add_argument("--split", default="test")
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.add_argument("--per-user", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="checkpoint + one user's history -> top-K elements")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", required=True, help="JSON file {user, sets: [[raw ids]]}")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate planted-structure JSONL data")
    p.add_argument("--kind", choices=["repeat", "cooccur"], required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--elements", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--p-repeat", type=float, default=0.8)
    p.add_argument("--pair-strength", type=float, default=0.9)
    p.add_argument("--basket-size", type=int, default=4)
    p.add_argument("--noise", type=int, default=1)
    p.add_argument("--cues-per-set", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the full loss")
    _add_config_args(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TEMPSETS_LOG_LEVEL", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (dt.DataError, NotFittedError, tr.TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
