"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 self-check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from . import checks, trainer
from .model import (PRESETS, config_from_text, init_params, param_count,
                    preset, generate)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grassflow",
        description="Attention-free Grassmann sequence models: train, "
                    "evaluate, generate, benchmark, self-check.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a UTF-8 text corpus")
    p.add_argument("--data", required=True, help="path to UTF-8 corpus file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--preset", default="grassmann-desk",
                       help="model preset name (default: grassmann-desk)")
    group.add_argument("--config", help="path to canonical-text model config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=16)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("generate", help="sample a continuation from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-new", type=int, default=128)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="runtime scaling of the mixing mechanisms")
    p.add_argument("--lengths", default="256,512,1024,2048",
                   help="comma-separated sequence lengths")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("check", help="run self-check suites")
    p.add_argument("--gradcheck", action="store_true")
    p.add_argument("--geometry", action="store_true")
    p.add_argument("--causality", action="store_true")

    p = sub.add_parser("params", help="parameter count for a preset")
    p.add_argument("--preset", required=True,
                   help="one of: %s" % ", ".join(sorted(PRESETS)))
    return parser


def _cmd_train(args) -> int:
    if args.config:
        cfg = config_from_text(Path(args.config).read_text())
    else:
        cfg = preset(args.preset)
    corpus = trainer.load_corpus(args.data)
    model = init_params(cfg, seed=args.seed)
    tcfg = trainer.TrainConfig(block_size=cfg.max_len,
                               batch_size=args.batch_size,
                               epochs=args.epochs, seed=args.seed)
    result = trainer.train(model, corpus, tcfg, args.out)
    for rec in result.log:
        print(rec.line())
    print("best checkpoint: %s (val ppl %.4f)"
          % (result.best_ckpt, result.best_val_ppl))
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = trainer.load_checkpoint(args.ckpt)
    corpus = trainer.load_corpus(args.data)
    ppl = trainer.evaluate(model, corpus.valid_tokens,
                           model.config.max_len)
    print("validation perplexity: %.6f" % ppl)
    return EXIT_OK


def _cmd_generate(args) -> int:
    model = trainer.load_checkpoint(args.ckpt)
    prompt = trainer.encode(args.prompt)
    out = generate(model, prompt, args.max_new,
                   temperature=args.temperature, seed=args.seed)
    sys.stdout.write(bytes(out).decode("utf-8", errors="replace") + "\n")
    return EXIT_OK


def _cmd_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",") if x]
    report = bench_mod.scaling_report(lengths, seed=args.seed,
                                      out_path=args.out)
    for row in report.rows:
        print("%-18s L=%-6d median %.6f s"
              % (row.mechanism, row.length, row.median_seconds))
    for mech in bench_mod.MECHANISMS:
        for lo, hi, ratio in report.doubling_ratios(mech):
            print("%-18s %d -> %d ratio %.3f" % (mech, lo, hi, ratio))
    print("report written to %s" % args.out)
    return EXIT_OK


def _cmd_check(args) -> int:
    which = [name for name in ("gradcheck", "geometry", "causality")
             if getattr(args, name)]
    if not which:
        which = ["gradcheck", "geometry", "causality"]
    results = checks.run_all(which)
    failed = 0
    for name, ok, detail in results:
        print("%-34s %s  (%s)" % (name, "PASS" if ok else "FAIL", detail))
        failed += 0 if ok else 1
    if failed:
        print("%d check(s) failed" % failed)
        return EXIT_CHECK
    print("all %d checks passed" % len(results))
    return EXIT_OK


def _cmd_params(args) -> int:
    cfg = preset(args.preset)
    total, breakdown = param_count(cfg)
    for name, count in breakdown.items():
        print("%-24s %12d" % (name, count))
    print("%-24s %12d  (%.2fM)" % ("total", total, total / 1e6))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "generate": _cmd_generate,
    "bench": _cmd_bench,
    "check": _cmd_check,
    "params": _cmd_params,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors and 0 for --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (KeyboardInterrupt, BrokenPipeError):
        return EXIT_RUNTIME
    except Exception as exc:  # surface as a diagnostic, not a traceback
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
