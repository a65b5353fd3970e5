"""Command-line entry point: ``idian {prepare,train,experiment,evaluate,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import IdianError, NumericError
from .experiment import (ExperimentConfig, load_config, run_experiment, run_prepare, run_train,
                         with_overrides, write_json)

log = logging.getLogger("idian")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, seed=args.seed, variant=getattr(args, "variant", None),
                          out=args.out, missing_rate=args.missing_rate)


def cmd_prepare(args) -> int:
    cfg = _config(args)
    out = run_prepare(cfg, cfg.run.base_seed, Path(cfg.run.output_dir) / cfg.run.name / "data")
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    variant = cfg.run.variants[0]
    out = run_train(cfg, variant, cfg.run.base_seed,
                    Path(cfg.run.output_dir) / cfg.run.name / variant)
    print(out)
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    print(run_experiment(cfg))
    return 0


def cmd_evaluate(args) -> int:
    from .data import load_csv
    from .metrics import evaluate
    from .networks import load_checkpoint

    model, header = load_checkpoint(args.checkpoint)
    test = load_csv(args.test, "target", model.n_classes)
    extra = header.get("extra", {})
    eval_seed = args.eval_seed if args.eval_seed is not None else extra.get("eval_seed", 0)
    report = evaluate(model, test, eval_seed, extra.get("imputation", True))
    payload = {"checkpoint": str(args.checkpoint), "test": str(args.test), "eval": report.as_dict(),
               "config_hash": header.get("config_hash", "")}
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload["eval"], indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_all

    results = run_all(args.seed or 0)
    worst = max(results.values())
    for name, err in results.items():
        print(f"{'PASS' if err < TOLERANCE else 'FAIL'}  {name:28s} {err:.3e}")
    if worst >= TOLERANCE:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e} >= {TOLERANCE}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idian", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=False):
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--seed", type=int, help="base seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--missing-rate", type=float, help="target missing rate override (0..1)")
        if variant:
            p.add_argument("--variant", help="run only this variant")

    common(sub.add_parser("prepare", help="write scaled, masked datasets to CSV"))
    common(sub.add_parser("train", help="train and evaluate one run, saving a checkpoint"), variant=True)
    common(sub.add_parser("experiment", help="every variant x repeat, with summary"), variant=True)

    ev = sub.add_parser("evaluate", help="checkpoint + test CSV -> metrics JSON")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--eval-seed", type=int)
    ev.add_argument("--out")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss and update")
    gc.add_argument("--seed", type=int, default=0)
    return parser


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "experiment": cmd_experiment,
            "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except IdianError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
