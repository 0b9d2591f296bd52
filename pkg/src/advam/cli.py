"""Command line entry point: ``advam synth|train|eval|sweep``."""
import argparse
import logging
import math
import os
import sys

from . import data, evalkit, models, trainer
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_DIGEST = 6

log = logging.getLogger("advam")


class _DigestMismatch(Exception):
    pass


def _alpha_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed alpha list {text!r}") from None
    if not values or any(math.isnan(v) or v < 0 for v in values):
        raise argparse.ArgumentTypeError(f"alpha values must be numbers >= 0, got {text!r}")
    return values


def _assignment(text):
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    return section, name.strip(), value.strip()


def _overrides(args):
    out = {}
    for section, key, value in args.set or []:
        out.setdefault(section, {})[key] = value
    train = out.setdefault("train", {})
    for flag in ("alpha", "lr", "epochs", "seed", "batch_size"):
        value = getattr(args, flag, None)
        if value is not None:
            train[flag] = value
    if getattr(args, "mode", None) == "ce":
        train["alpha"] = 0.0
        train["d_updates_enabled"] = False
    return out


def _config(args):
    return load_config(args.config, _overrides(args))


def _load_corpus(path, cfg=None):
    corpus = data.read_corpus(path)
    if cfg is not None and corpus.digest != cfg.corpus_digest():
        raise _DigestMismatch(
            f"corpus {path} was built from a different [data] section "
            f"({corpus.digest[:12]} vs config {cfg.corpus_digest()[:12]})"
        )
    return corpus


def cmd_synth(args):
    cfg = _config(args)
    out = args.out or cfg.paths.corpus
    corpus = data.synthesize_corpus(cfg.data)
    try:
        data.write_corpus(out, corpus)
    except OSError as exc:
        raise data.DataError(f"cannot write corpus {out}: {exc}") from None
    print(f"wrote {out} ({'/'.join(map(str, corpus.counts()))} utterances, digest {corpus.digest})")


def cmd_train(args):
    cfg = _config(args)
    corpus = _load_corpus(args.corpus or cfg.paths.corpus, cfg)
    result = trainer.train(cfg, corpus, out_dir=args.out, resume=args.resume)
    final = "n/a" if not result.dev_accuracy else f"{result.final_dev_accuracy:.4f}"
    print(f"mode {args.mode} digest {result.digest} final dev accuracy {final}")


def cmd_eval(args):
    corpus = data.read_corpus(args.corpus)
    expected = _config(args).digest() if args.config else None
    ckpt = models.load_checkpoint(args.checkpoint, expected_digest=expected,
                                  expected_corpus=corpus.digest)
    split = data.prepare_split(corpus, args.split, ckpt.nets.arch["frames"])
    report = evalkit.evaluate(ckpt.nets, split, args.split, ckpt.config_digest, ckpt.corpus_digest,
                              ckpt.meta.get("seed", 0))
    text = report.to_text()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(args):
    cfg = _config(args)
    corpus = _load_corpus(args.corpus or cfg.paths.corpus, cfg)
    os.makedirs(args.out, exist_ok=True)
    rows = evalkit.alpha_sweep(cfg, corpus, args.alphas, args.seeds, out_dir=args.out)
    for r in rows:
        print(f"alpha {r.alpha:g}: dev accuracy {r.mean_dev_acc:.4f} +- {r.sd_dev_acc:.4f} "
              f"over {r.seed_count} seed(s)")


def build_parser():
    parser = argparse.ArgumentParser(prog="advam", description=__doc__)
    parser.add_argument("-q", "--quiet", action="store_true", help="only print warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file with [data] [model] [train] [paths]")
        p.add_argument("--set", action="append", type=_assignment, metavar="SECTION.KEY=VALUE",
                       help="override one config value; may repeat")

    p = sub.add_parser("synth", help="synthesize the corpus container")
    common(p)
    p.add_argument("--out", help="corpus path (default: paths.corpus)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train DA (adversarial) or CE (baseline) models")
    common(p)
    p.add_argument("--corpus", help="corpus path (default: paths.corpus)")
    p.add_argument("--out", default="run", help="run directory for checkpoints and metrics")
    p.add_argument("--mode", choices=("da", "ce"), default="da")
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frame accuracy of a checkpoint on one split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=data.SPLITS, default="dev")
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="dev accuracy over a grid of alpha values")
    common(p)
    p.add_argument("--corpus", help="corpus path (default: paths.corpus)")
    p.add_argument("--out", default="sweep", help="directory for per-run metrics and sweep.csv")
    p.add_argument("--alphas", type=_alpha_list, default=list(evalkit.DEFAULT_ALPHAS))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seeds", 1) < 1:
        parser.print_usage(sys.stderr)
        print("advam: error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (_DigestMismatch, models.CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_DIGEST
    except data.DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (trainer.NumericAbort, ArithmeticError) as exc:
        log.error("numeric abort: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
