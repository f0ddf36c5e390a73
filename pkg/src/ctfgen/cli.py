"""``ctfgen`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime error.  ``CTFGEN_LOG`` set to
``error``, ``info`` or ``debug`` controls log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, scm

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
OUTPUT_SCHEMA_VERSION = 1
log = logging.getLogger("ctfgen")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def float_list(text: str) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return np.array(values)


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctfgen", description="Counterfactual generation across shifted domains.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="sample an observational dataset from a ground-truth domain")
    g.add_argument("--domain", required=True, choices=scm.DOMAINS, help="which ground-truth domain to sample")
    g.add_argument("--n", required=True, type=positive_int, help="number of rows")
    g.add_argument("--d", required=True, type=positive_int, help="covariate dimension")
    g.add_argument("--seed", required=True, type=int, help="random seed")
    g.add_argument("--with-latents", action="store_true", help="also write the latent context and noise columns")
    g.add_argument("--out", required=True, type=Path, help="output CSV path (a .meta.json sidecar is written too)")

    t = sub.add_parser("train", help="fit the generative networks and the posterior")
    t.add_argument("--config", required=True, type=Path, help="JSON training config")
    t.add_argument("--source", required=True, type=Path, help="source-domain dataset CSV")
    t.add_argument("--target", required=True, type=Path, help="target-domain dataset CSV")
    t.add_argument("--out", required=True, type=Path, help="output directory for checkpoints and metrics")

    i = sub.add_parser("infer", help="draw counterfactual samples for one factual observation")
    i.add_argument("--ckpt", required=True, type=Path, help="trained checkpoint (with posterior)")
    i.add_argument("--x-fact", required=True, type=float_list, help="factual covariate, comma-separated")
    i.add_argument("--y-fact", required=True, type=float_list, help="factual source effect, comma-separated")
    i.add_argument("--x-intv", required=True, type=float_list, help="intervened covariate, comma-separated")
    i.add_argument("--num-samples", required=True, type=nonneg_int, help="number of counterfactual draws")
    i.add_argument("--seed", required=True, type=int, help="random seed")
    i.add_argument("--out", type=Path, help="write CSV here instead of stdout")

    e = sub.add_parser("eval", help="score a checkpoint with the paired two-sample protocol")
    e.add_argument("--ckpt", required=True, type=Path, help="trained checkpoint (with posterior)")
    e.add_argument("--pairs", required=True, type=positive_int, help="number of covariate pairs")
    e.add_argument("--samples", required=True, type=positive_int, help="samples per pair on each side")
    e.add_argument("--alpha", required=True, type=float, help="test level")
    e.add_argument("--seed", required=True, type=int, help="random seed")
    e.add_argument("--report", required=True, type=Path, help="JSON report path (a per-pair CSV is written too)")
    e.add_argument("--jobs", type=positive_int, default=1, help="worker processes for pair evaluation")
    e.add_argument("--bootstrap-iters", type=positive_int, default=500, help="wild bootstrap draws per test")

    sub.add_parser("selftest", help="run quick correctness checks against independent oracles")
    return p


def _require_file(path: Path, flag: str) -> None:
    if not path.is_file():
        raise UsageError(f"{flag}: no such file {path}")


def cmd_gen_data(args) -> int:
    ds = scm.generate_dataset(args.domain, args.n, args.d, args.seed, args.with_latents, args.out)
    log.info("wrote %d rows to %s", len(ds), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import TrainConfig, train

    for flag, path in (("--config", args.config), ("--source", args.source), ("--target", args.target)):
        _require_file(path, flag)
    config = TrainConfig.load(args.config)
    source = scm.load_dataset(args.source)
    target = scm.load_dataset(args.target)
    train(config, source, target, args.out)
    log.info("training finished; outputs in %s", args.out)
    return EXIT_OK


def _load_model(path: Path):
    from .checkpoint import load_checkpoint

    _require_file(path, "--ckpt")
    ckpt = load_checkpoint(path)
    if ckpt.posterior is None:
        raise RuntimeError(f"{path} has no posterior network; use the final checkpoint of a training run")
    return ckpt


def cmd_infer(args) -> int:
    from .evaluate import counterfactual_sample

    ckpt = _load_model(args.ckpt)
    d = ckpt.bundle.d
    for flag, value, width in (("--x-fact", args.x_fact, d), ("--y-fact", args.y_fact, 2 * d),
                               ("--x-intv", args.x_intv, d)):
        if value.size != width:
            raise UsageError(f"{flag}: expected {width} values for d={d}, got {value.size}")
    rng = np.random.default_rng(args.seed)
    samples = counterfactual_sample(ckpt.bundle, ckpt.posterior, args.x_fact, args.y_fact, args.x_intv,
                                    args.num_samples, rng)
    lines = [",".join(f"y_{j}" for j in range(2 * d))]
    lines += [",".join(repr(float(v)) for v in row) for row in samples]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
        meta = {"schema_version": OUTPUT_SCHEMA_VERSION, "d": d, "num_samples": args.num_samples,
                "seed": args.seed, "ckpt": str(args.ckpt)}
        scm.sidecar_path(args.out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import emit_report, evaluate

    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must lie in (0, 1)")
    ckpt = _load_model(args.ckpt)
    report = evaluate(ckpt.bundle, ckpt.posterior, num_pairs=args.pairs, k=args.samples, alpha=args.alpha,
                      seed=args.seed, bootstrap_iters=args.bootstrap_iters, jobs=args.jobs)
    emit_report(report, args.report)
    lo, hi = report.ci_95
    print(f"score {report.score:.4f} (95% CI {lo:.4f}-{hi:.4f}) over {report.num_pairs} pairs")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def configure_logging() -> None:
    level = os.environ.get("CTFGEN_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
