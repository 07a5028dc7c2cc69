"""Command-line entry point: ``nerd-lab <subcommand> [flags]``.

Exit codes: 0 success, 1 user error, 2 numeric failure, 3 analysis
completed with skipped sections.
"""

import argparse
import logging
import os
import sys
import warnings

from . import pipeline
from .config import DEFAULT_OUT_DIR, OUT_ENV_VAR, resolve_config
from .errors import NerdLabError, NumericFailureError

EXIT_OK, EXIT_USER, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3

COMMANDS = ("gen-data", "train", "fit", "analyze", "report")


def _u64(text):
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    common.add_argument("--jobs", type=_positive, help="worker processes")
    common.add_argument("--subjects", metavar="LIST",
                        help="a count (first N subjects) or comma-separated subject ids")
    common.add_argument("--family", choices=("nerd", "control", "both"))
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV_VAR} or {DEFAULT_OUT_DIR})")
    common.add_argument("--checkpoint-stride", type=_positive, metavar="N",
                        help="save a checkpoint every N epochs (both families)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="nerd-lab",
        description="Train, fit and analyze diffusion models of neurofeedback on synthetic cohorts.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "gen-data": "generate a synthetic cohort",
        "train": "train NERD and control models per subject",
        "fit": "score checkpoints against subject data and freeze e*",
        "analyze": "run the analyses on frozen models",
        "report": "write an index of all artifacts",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def _parse_subjects(text):
    """Return ``("count", n)``, ``("ids", [...])`` or ``None``."""
    if text is None:
        return None
    text = text.strip()
    if text.isdigit():
        n = int(text)
        if n < 1:
            raise NerdLabError("--subjects count must be >= 1")
        return ("count", n)
    ids = [s.strip() for s in text.split(",") if s.strip()]
    if not ids:
        raise NerdLabError("--subjects is empty")
    return ("ids", ids)


def config_from_args(args, environ=None):
    environ = os.environ if environ is None else environ
    flags = {"seed": args.seed, "jobs": args.jobs, "family": args.family}
    subj = _parse_subjects(args.subjects)
    if args.out is not None:
        flags["out_dir"] = args.out
    elif environ.get(OUT_ENV_VAR):
        flags["out_dir"] = environ[OUT_ENV_VAR]
    if args.checkpoint_stride is not None:
        flags["nerd"] = {"checkpoint_stride": args.checkpoint_stride}
        flags["control"] = {"checkpoint_stride": args.checkpoint_stride}
    if subj is not None and subj[0] == "ids":
        flags["subjects"] = subj[1]
    cfg = resolve_config(args.config, flags)
    if subj is not None and subj[0] == "count":
        if args.command == "gen-data":
            # a count on gen-data sets the cohort size
            cfg = resolve_config(args.config, {**flags, "dataset": {"n_subjects": subj[1]}})
        else:
            from .envsim import subject_label

            cfg = resolve_config(args.config, {**flags, "subjects": [subject_label(i) for i in range(subj[1])]})
    return cfg


def run(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args, environ)
        if args.command == "gen-data":
            _, msg = pipeline.cmd_gen_data(cfg)
            code = EXIT_OK
        elif args.command == "train":
            _, msg = pipeline.cmd_train(cfg)
            code = EXIT_OK
        elif args.command == "fit":
            _, msg = pipeline.cmd_fit(cfg)
            code = EXIT_OK
        elif args.command == "analyze":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep, msg = pipeline.cmd_analyze(cfg)
            code = EXIT_PARTIAL if rep.skipped else EXIT_OK
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, msg = pipeline.cmd_report(cfg)
            code = EXIT_OK
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NerdLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    print(msg)
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
