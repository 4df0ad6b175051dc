"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import InputError, NonFiniteLoss, NumericalError

logger = logging.getLogger("eeg_gcnn")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eeg-gcnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort (manifest + signals)")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--duration", type=float, help="seconds per subject")
    p.add_argument("--alpha-separation", type=float)
    p.add_argument("--coupling-separation", type=float)

    p = sub.add_parser("preprocess", help="montage, resample, filter every recording")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("featurize", help="window, band powers and coherence graphs")
    _common(p)
    p.add_argument("--preprocessed", required=True)
    p.add_argument("--out", required=True, help="feature store directory")

    p = sub.add_parser("train", help="10-fold subject-disjoint training")
    _common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True, help="runs directory")
    p.add_argument("--arch", choices=["shallow", "deep", "fcnn"])
    p.add_argument("--subsample", type=float, default=1.0,
                   help="fraction of training subjects kept per fold")

    p = sub.add_parser("evaluate", help="held-out metrics, ROC, embeddings, KS tests")
    _common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--models", help="comma-separated run names (default: all)")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "arch", None):
        cfg.architecture = args.arch
    if args.command == "synth":
        for attr, key in (("n_per_class", "n_per_class"), ("duration", "duration_s"),
                          ("alpha_separation", "alpha_separation"),
                          ("coupling_separation", "coupling_separation")):
            val = getattr(args, attr)
            if val is not None:
                setattr(cfg.synth, key, val)
    return cfg


def run(args) -> object:
    cfg = _config(args)
    if args.command == "synth":
        return {"manifest": str(pipeline.cmd_synth(args.out, cfg))}
    if args.command == "preprocess":
        idx = pipeline.cmd_preprocess(args.manifest, args.out, cfg)
        return {"subjects": len(idx["subjects"])}
    if args.command == "featurize":
        return pipeline.cmd_featurize(args.preprocessed, args.out, cfg)
    if args.command == "train":
        return pipeline.cmd_train(args.store, args.out, cfg, args.arch, args.subsample)
    if args.command == "evaluate":
        models = args.models.split(",") if args.models else None
        report = pipeline.cmd_evaluate(args.store, args.runs, args.out, cfg, models)
        return {name: row["table"] for name, row in report["rows"].items()}
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except pipeline.CommandFailed as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except NonFiniteLoss as exc:
        logger.error("numerical failure in fold %s: %s", exc.fold_index, exc)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (InputError, FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as exc:
        logger.error("input error: %s", exc)
        return EXIT_INPUT
    print(json.dumps(result, indent=1, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
