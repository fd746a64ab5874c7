import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

from hadamard import __version__
from hadamard.cli import commands
from hadamard.config import settings
from hadamard.core.constants import (
    DATASET_TRAIN_FILE,
    DATASET_VAL_FILE,
    EXIT_RUNTIME,
    EXIT_USAGE,
)
from hadamard.core.enums import GradMode
from hadamard.core.logging import configure_logging, get_logger
from hadamard.core.metrics import write_metrics
from hadamard.domain.exceptions import DomainException, UnknownTokenError

logger = get_logger(__name__)

# domain error codes that mean the caller asked for something invalid
USAGE_ERROR_CODES = frozenset(
    {
        "UNKNOWN_TOKEN",
        "EMPTY_QUESTION",
        "QUESTION_TOO_LONG",
        "TOKEN_OUT_OF_RANGE",
        "EMPTY_DATASET",
    }
)


def positive_int(value: str) -> int:
    number = int(value)
    if number <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return number


def seed(value: str) -> int:
    number = int(value, 0)
    if not 0 <= number < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=settings.log_level)
    common.add_argument("--log-format", choices=["json", "console"], default=settings.log_format)
    common.add_argument(
        "--metrics-file",
        type=Path,
        help="Write prometheus metrics in textfile-collector format when the command ends",
    )

    parser = argparse.ArgumentParser(
        prog="hadamard",
        description="Train an MLB visual question answering model and explain its joint.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", parents=[common], help="Generate the synthetic dataset")
    gen.add_argument("--out", type=Path, default=settings.data_dir)
    gen.add_argument("--seed", type=seed, default=settings.seed)
    gen.add_argument("--train", type=positive_int, default=settings.train_count)
    gen.add_argument("--val", type=positive_int, default=settings.val_count)
    gen.set_defaults(handler=commands.cmd_gen_data)

    train = subparsers.add_parser("train", parents=[common], help="Train and write a checkpoint")
    train.add_argument("--data", type=Path, default=settings.data_dir)
    train.add_argument("--out", type=Path, required=True, help="Checkpoint path")
    train.add_argument("--seed", type=seed, default=settings.init_seed, help="Initialization seed")
    train.add_argument("--shuffle-seed", type=seed, default=settings.shuffle_seed)
    train.add_argument("--epochs", type=positive_int, default=settings.epochs)
    train.add_argument("--batch-size", type=positive_int, default=settings.batch_size)
    train.add_argument("--lr", type=float, default=settings.learning_rate)
    train.add_argument("--workers", type=positive_int, default=settings.workers)
    train.set_defaults(handler=commands.cmd_train)

    explain = subparsers.add_parser(
        "explain", parents=[common], help="Write saliency maps for one image-question pair"
    )
    explain.add_argument("--ckpt", type=Path, required=True)
    explain.add_argument("--out", type=Path, required=True, help="Output directory")
    explain.add_argument(
        "--mode",
        type=GradMode,
        choices=list(GradMode),
        metavar="{standard,guided}",
        default=settings.explain_mode,
    )
    explain.add_argument(
        "--freeze-joint",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Treat the joint output as a constant (default) or let it move with its input",
    )
    source = explain.add_mutually_exclusive_group(required=True)
    source.add_argument("--index", type=int, help="Sample index in the dataset split")
    source.add_argument("--image", type=Path, help="Binary PPM scene")
    explain.add_argument("--data", type=Path, default=settings.data_dir)
    explain.add_argument(
        "--split", choices=[DATASET_TRAIN_FILE, DATASET_VAL_FILE], default=DATASET_VAL_FILE
    )
    explain.add_argument(
        "--question", help=f"Question text; known words: {commands.vocabulary_help()}"
    )
    explain.set_defaults(handler=commands.cmd_explain)

    check = subparsers.add_parser("selfcheck", parents=[common], help="Run the verification suite")
    check.add_argument("--trials", type=positive_int, default=settings.selfcheck_trials)
    check.add_argument("--step", type=float, default=settings.gradcheck_step)
    check.add_argument("--tolerance", type=float, default=settings.gradcheck_tolerance)
    check.set_defaults(handler=commands.cmd_selfcheck)

    evaluate = subparsers.add_parser("eval", parents=[common], help="Accuracy and localization")
    evaluate.add_argument("--ckpt", type=Path, required=True)
    evaluate.add_argument("--data", type=Path, default=settings.data_dir)
    evaluate.add_argument(
        "--split", choices=[DATASET_TRAIN_FILE, DATASET_VAL_FILE], default=DATASET_VAL_FILE
    )
    evaluate.add_argument(
        "--mode",
        type=GradMode,
        choices=list(GradMode),
        metavar="{standard,guided}",
        default=settings.explain_mode,
    )
    evaluate.add_argument(
        "--localization",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Also measure attention mass and token saliency on attribute questions",
    )
    evaluate.set_defaults(handler=commands.cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.command == "explain" and args.image is not None and args.question is None:
        parser.print_usage(sys.stderr)
        print("hadamard explain: --image requires --question", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level, args.log_format)
    try:
        return args.handler(args)
    except UnknownTokenError as e:
        logger.warning("unknown_token", token=e.token)
        print(f"error: unknown token '{e.token}'", file=sys.stderr)
        return EXIT_USAGE
    except DomainException as e:
        logger.error("command_failed", command=args.command, code=e.code, message=e.message)
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_USAGE if e.code in USAGE_ERROR_CODES else EXIT_RUNTIME
    except ValueError as e:
        logger.warning("validation_error", command=args.command, message=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error("command_failed", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if args.metrics_file is not None:
            write_metrics(args.metrics_file)


if __name__ == "__main__":
    sys.exit(main())
