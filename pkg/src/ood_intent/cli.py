"""Command line entry point: ``ood-intent <subcommand> --config exp.toml``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ALL_METHODS, ExperimentConfig, load_config
from .noising import NoiseKind, build_noise_distribution, noise_corpus
from .synthetic import emit_synthetic_benchmark

log = logging.getLogger("ood_intent")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.output:
        cfg.output = args.output
    if args.seeds:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if args.methods:
        cfg.methods = [m.strip() for m in args.methods.split(",")]
    for name in ("train", "valid", "test", "ood", "schema", "label_mode", "holdout_k", "pretrained"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.data, name, value)
    if args.p_noise is not None:
        cfg.p_noise = args.p_noise
    if args.no_cache:
        cfg.cache = False
    return cfg.validate()


def _per_seed(fn):
    def run(cfg: ExperimentConfig) -> int:
        for seed in cfg.seeds:
            fn(cfg, seed)
        return 0
    return run


def _report(cfg: ExperimentConfig) -> int:
    rep = pipeline.report(cfg)
    sys.stdout.write(rep.to_table())
    return 1 if rep.incomplete else 0


def _run(cfg: ExperimentConfig) -> int:
    rep = pipeline.run_experiment(cfg)
    sys.stdout.write(rep.to_table())
    return 1 if rep.incomplete else 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--output", help="output directory")
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2,3,4")
    p.add_argument("--methods", help=f"comma-separated subset of: {', '.join(ALL_METHODS)}")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--ood", help="separate OOD file to split between valid and test")
    p.add_argument("--schema", help="column names, e.g. label,text")
    p.add_argument("--label-mode", dest="label_mode", choices=("fine", "coarse"))
    p.add_argument("--holdout-k", dest="holdout_k", type=float, help="class coverage percent for holdout OOD")
    p.add_argument("--pretrained", help="GloVe-style vector file")
    p.add_argument("--p-noise", dest="p_noise", type=float)
    p.add_argument("--no-cache", action="store_true", help="retrain models even if checkpoints exist")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ood-intent", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    stages = {
        "prepare": _per_seed(pipeline.prepare),
        "train": _per_seed(pipeline.train),
        "score": _per_seed(pipeline.score),
        "eval": _per_seed(pipeline.evaluate_seed),
        "report": _report,
        "run": _run,
    }
    for name, fn in stages.items():
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(handler=lambda args, fn=fn: fn(_config(args)))

    p = sub.add_parser("synth", help="write the disjoint-vocabulary benchmark as TSV files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=3000)
    p.add_argument("--n-valid", type=int, default=600)
    p.add_argument("--n-test", type=int, default=600)
    p.add_argument("--n-ood", type=int, default=300, help="OOD utterances in each of valid and test")
    p.set_defaults(handler=_synth)

    p = sub.add_parser("noise", help="write a noised copy of a prepared training split")
    _add_common(p)
    p.add_argument("--kind", choices=[k.value for k in NoiseKind], default="uniroot")
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--out", required=True, help="destination TSV (text column only)")
    p.set_defaults(handler=_noise)
    return parser


def _synth(args) -> int:
    emit_synthetic_benchmark(args.seed, args.n_train, args.n_valid, args.n_test, args.n_ood, args.n_ood,
                             out_dir=args.out)
    return 0


def _noise(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0]
    bundle, vocab = pipeline.load_prepared(cfg, seed)
    dist = build_noise_distribution(vocab, args.kind)
    noised = noise_corpus(bundle.train_id, dist, cfg.p_noise, seed, args.epoch)
    with open(args.out, "w", encoding="utf-8") as fh:
        for u in noised:
            fh.write(" ".join(u.tokens) + "\n")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001 - reported as a nonzero exit
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())
