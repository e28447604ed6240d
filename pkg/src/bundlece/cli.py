"""Command line interface.

Subcommands: generate | mine | augment | sample-negatives | train | eval |
diagnose | verify. Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

from .bundling import (
    MiningConfig,
    SamplingConfig,
    augment_bundles,
    load_rules,
    mine_all,
    topk_bundle,
)
from .data import Dataset, read_bundles, read_instances, write_bundles, write_instances
from .errors import ConfigurationError, TrainingAbortedError
from .losses import CompatMode, LossSpec, LossVariant
from .scorer import load_model, save_model
from .synth import GeneratorConfig, generate_synthetic
from .training import DEFAULT_DIMS, TrainConfig, evaluate, train
from .verify import SUITES, run_suites


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 instead of argparse's default 2
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="bundlece", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic comparison-QA dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-bundles", type=int, default=2000)
    p.add_argument("--dev-bundles", type=int, default=500)
    p.add_argument("--entities", type=int, default=12)
    p.add_argument("--attributes", type=int, default=8)
    p.add_argument("--min-value", type=int, default=1)
    p.add_argument("--max-value", type=int, default=20)
    p.add_argument("--max-distractors", type=int, default=2)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("mine", help="cluster near-duplicate questions into bundles")
    p.add_argument("--input", required=True, help="instances JSONL")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--max-cluster-size", type=int, default=4)
    p.add_argument("--out", required=True, help="bundles JSONL")
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("augment", help="generate contrastive questions into bundles")
    p.add_argument("--input", required=True, help="instances JSONL")
    p.add_argument("--rules", default=None, help="override rule tables JSON")
    p.add_argument("--out", required=True, help="bundles JSONL")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser(
        "sample-negatives", help="bundle sampled negative answers per instance"
    )
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="instances JSONL")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--nucleus-p", type=float, default=0.9)
    p.add_argument("--nucleus-steps", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bundles JSONL")
    p.set_defaults(func=_cmd_sample_negatives)

    p = sub.add_parser("train", help="train the toy scorer")
    p.add_argument("--data", default=None, help="instances JSONL")
    p.add_argument("--bundles", default=None, help="bundles JSONL")
    p.add_argument("--loss", default=None, choices=[v.value for v in LossVariant])
    p.add_argument("--compat", default=None, choices=[m.value for m in CompatMode])
    p.add_argument("--alpha1", type=float, default=None)
    p.add_argument("--alpha2", type=float, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--ul-per-token", type=_parse_bool, default=None, metavar="BOOL")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-model", default=None)
    p.add_argument("--config", default=None, help="JSON config; flags override it")
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="instances JSONL")
    p.add_argument("--bundles", default=None, help="bundles JSONL")
    p.add_argument("--mode", default="independent", choices=["independent", "joint"])
    p.add_argument("--compat", default="ln", choices=[m.value for m in CompatMode])
    p.add_argument("--predictions", default=None, help="predictions JSONL path")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("diagnose", help="posterior spread diagnostics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="instances JSONL")
    p.add_argument("--bundles", default=None, help="bundles JSONL")
    p.add_argument("--nucleus-p", type=float, default=0.9)
    p.add_argument("--nucleus-steps", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("verify", help="run exact property suites")
    p.add_argument(
        "--suite",
        action="append",
        default=None,
        choices=[s.name for s in SUITES] + ["all"],
    )
    p.set_defaults(func=_cmd_verify)
    return parser


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _cmd_generate(args) -> int:
    cfg = GeneratorConfig(
        seed=args.seed,
        n_train_bundles=args.train_bundles,
        n_dev_bundles=args.dev_bundles,
        entity_pool_size=args.entities,
        attribute_pool_size=args.attributes,
        value_lo=args.min_value,
        value_hi=args.max_value,
        max_distractors=args.max_distractors,
    )
    train_ds, dev_ds = generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_instances(os.path.join(args.out, "instances.jsonl"), train_ds.instances)
    write_bundles(os.path.join(args.out, "bundles.jsonl"), train_ds.bundles)
    write_instances(os.path.join(args.out, "dev-instances.jsonl"), dev_ds.instances)
    write_bundles(os.path.join(args.out, "dev-bundles.jsonl"), dev_ds.bundles)
    print(
        f"wrote {len(train_ds.bundles)} train / {len(dev_ds.bundles)} dev bundles to {args.out}"
    )
    return 0


def _cmd_mine(args) -> int:
    instances = read_instances(args.input)
    cfg = MiningConfig(
        jaccard_threshold=args.threshold, max_cluster_size=args.max_cluster_size
    )
    bundles = mine_all(instances, cfg)
    write_bundles(args.out, bundles)
    print(f"mined {len(bundles)} bundles from {len(instances)} instances")
    return 0


def _cmd_augment(args) -> int:
    instances = read_instances(args.input)
    rules = load_rules(args.rules)
    bundles = augment_bundles(instances, rules)
    write_bundles(args.out, bundles)
    print(f"generated {len(bundles)} bundles from {len(instances)} instances")
    return 0


def _cmd_sample_negatives(args) -> int:
    model = load_model(args.model)
    instances = read_instances(args.input)
    cfg = SamplingConfig(
        k=args.k,
        nucleus_p=args.nucleus_p,
        nucleus_steps=args.nucleus_steps,
        seed=args.seed,
    )
    bundles = []
    skipped = []
    for inst in instances:
        bundle = topk_bundle(model, inst, cfg)
        if bundle is None:
            skipped.append(inst.id)
        else:
            bundles.append(bundle)
    write_bundles(args.out, bundles)
    print(f"sampled bundles for {len(bundles)} instances")
    for inst_id in skipped:
        print(f"no distinct negative for instance {inst_id}", file=sys.stderr)
    return 0


_TRAIN_DEFAULTS = {
    "loss": "mle",
    "compat": "ln",
    "alpha1": 1.0,
    "alpha2": 1.0,
    "lambda1": 0.5,
    "lambda2": 0.5,
    "ul_per_token": True,
    "lr": 1e-2,
    "epochs": 20,
    "seed": 0,
    "data": None,
    "bundles": None,
    "init_model": None,
    "dims": list(DEFAULT_DIMS),
}


def _cmd_train(args) -> int:
    config = dict(_TRAIN_DEFAULTS)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(config)
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        config.update(file_cfg)
    for key in (
        "data", "bundles", "loss", "compat", "alpha1", "alpha2", "lambda1",
        "lambda2", "ul_per_token", "lr", "epochs", "seed", "init_model",
    ):
        value = getattr(args, key)
        if value is not None:
            config[key] = value

    if not config["data"]:
        raise _UsageError("train requires --data (or a config with a data path)")
    instances = read_instances(config["data"])
    bundles = read_bundles(config["bundles"]) if config["bundles"] else []
    dataset = Dataset.build(instances, bundles)

    spec = LossSpec(
        variant=LossVariant(config["loss"]),
        alpha1=config["alpha1"],
        alpha2=config["alpha2"],
        lambda1=config["lambda1"],
        lambda2=config["lambda2"],
        mode=CompatMode(config["compat"]),
        ul_per_token=config["ul_per_token"],
    )
    train_cfg = TrainConfig(
        loss=spec,
        learning_rate=config["lr"],
        epochs=config["epochs"],
        seed=config["seed"],
        dims=tuple(config["dims"]),
    )
    init = load_model(config["init_model"]) if config["init_model"] else None
    model, history = train(train_cfg, dataset, init_model=init)
    save_model(args.out, model)
    history_path = os.path.splitext(args.out)[0] + ".history.json"
    with open(history_path, "w", encoding="utf-8") as fh:
        json.dump({"config": {k: config[k] for k in sorted(config)}, "epochs": history}, fh)
    print(f"trained {config['loss']} for {config['epochs']} epochs -> {args.out}")
    return 0


def _load_eval_dataset(model, data_path, bundles_path) -> Dataset:
    if not data_path and not bundles_path:
        raise _UsageError("provide --data and/or --bundles")
    instances = read_instances(data_path) if data_path else []
    bundles = read_bundles(bundles_path) if bundles_path else []
    return Dataset(instances=tuple(instances), bundles=tuple(bundles), vocab=model.vocab)


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    dataset = _load_eval_dataset(model, args.data, args.bundles)
    report = evaluate(
        model,
        dataset,
        mode=args.mode,
        compat_mode=CompatMode(args.compat),
        predictions_path=args.predictions,
    )
    report.save(args.out)
    print(
        f"em={report.em:.4f} f1={report.f1:.4f} consistency={report.consistency:.4f} "
        f"({report.n_instances} questions, {report.n_bundles} bundles)"
    )
    return 0


def _cmd_diagnose(args) -> int:
    model = load_model(args.model)
    dataset = _load_eval_dataset(model, args.data, args.bundles)
    cfg = SamplingConfig(
        k=1, nucleus_p=args.nucleus_p, nucleus_steps=args.nucleus_steps, seed=args.seed
    )
    report = evaluate(model, dataset, diagnostics_cfg=cfg)
    report.save(args.out)
    print(
        f"entropy10_mean={report.entropy10_mean:.4f} "
        f"top2_ratio_mean={report.top2_ratio_mean:.4f}"
    )
    return 0


def _cmd_verify(args) -> int:
    names = args.suite or ["all"]
    if "all" in names:
        names = []
    return 0 if run_suites(names) else 1


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help exits 0 through here
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, TrainingAbortedError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
