import argparse
import json
from pathlib import Path

import numpy as np

from hadamard.cli.selfcheck import format_table, run_selfcheck
from hadamard.core.constants import (
    ALPHA_FILE_TEMPLATE,
    CELL_PIXELS,
    DATASET_TRAIN_FILE,
    DATASET_VAL_FILE,
    EXIT_OK,
    EXIT_RUNTIME,
    HEATMAP_FILE,
    INPUT_IMAGE_FILE,
    PGM_MAXVAL,
    SALIENT_FILE,
    STD_EPS,
    TOKENS_FILE,
)
from hadamard.core.logging import get_logger
from hadamard.domain.model.hyper import HyperParams
from hadamard.domain.model.mlb import forward
from hadamard.domain.services.explainer import Explanation, explain
from hadamard.domain.services.localization import localization_report
from hadamard.domain.services.trainer import TrainConfig, evaluate, init_params, train
from hadamard.infrastructure.imaging.pnm import (
    read_ppm,
    upsample_nearest,
    write_pgm,
    write_ppm,
    write_saliency_pgm,
)
from hadamard.infrastructure.storage.checkpoint import load_checkpoint, save_checkpoint
from hadamard.infrastructure.storage.dataset_file import read_dataset
from hadamard.schemas.report import ExplainReport
from hadamard.schemas.training import EpochMetrics
from hadamard.synth.dataset import build_dataset
from hadamard.synth.questions import ANSWERS, TOKEN_IDS, detokenize, tokenize

logger = get_logger(__name__)


def cmd_gen_data(args: argparse.Namespace) -> int:
    summary = build_dataset(args.out, args.seed, args.train, args.val)
    print(
        f"wrote {summary.train_count} train and {summary.val_count} val samples "
        f"to {summary.out_dir} (seed {args.seed})"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    samples = read_dataset(args.data / DATASET_TRAIN_FILE)
    val_path = args.data / DATASET_VAL_FILE
    val = read_dataset(val_path) if val_path.exists() else None

    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        init_seed=args.seed,
        shuffle_seed=args.shuffle_seed,
        workers=args.workers,
    )
    params = init_params(HyperParams(), config.init_seed)

    def report(metrics: EpochMetrics) -> None:
        print(json.dumps(metrics.as_line()), flush=True)

    params, _ = train(
        params,
        samples,
        config,
        val=val,
        on_epoch=report,
        log_level=args.log_level,
        log_format=args.log_format,
    )
    save_checkpoint(params, args.out)
    return EXIT_OK


def _load_input(args: argparse.Namespace) -> tuple[np.ndarray, list[int]]:
    if args.image is not None:
        return read_ppm(args.image), tokenize(args.question)
    samples = read_dataset(args.data / args.split)
    if not 0 <= args.index < len(samples):
        raise ValueError(f"--index {args.index} outside 0..{len(samples) - 1}")
    sample = samples[args.index]
    return sample.image, list(sample.token_ids)


def standardize_lattice(values: np.ndarray) -> np.ndarray:
    if np.ptp(values) == 0.0:
        return np.zeros_like(values)
    return (values - values.mean()) / max(values.std(), STD_EPS)


def write_explanation(
    out_dir: Path, image: np.ndarray, explanation: Explanation, report: ExplainReport
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_saliency_pgm(out_dir / HEATMAP_FILE, explanation.visual.heatmap)
    write_pgm(out_dir / SALIENT_FILE, explanation.visual.salient.astype(np.uint8) * PGM_MAXVAL)
    for glimpse, alpha in enumerate(explanation.comparison.alpha_maps, start=1):
        write_saliency_pgm(
            out_dir / ALPHA_FILE_TEMPLATE.format(glimpse=glimpse),
            upsample_nearest(standardize_lattice(alpha), CELL_PIXELS),
        )
    write_ppm(out_dir / INPUT_IMAGE_FILE, image)
    (out_dir / TOKENS_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")


def cmd_explain(args: argparse.Namespace) -> int:
    params = load_checkpoint(args.ckpt)
    image, token_ids = _load_input(args)
    trace = forward(params, image, token_ids)
    explanation = explain(trace, args.mode, freeze_joint=args.freeze_joint)

    report = ExplainReport(
        tokens=detokenize(token_ids),
        z=None if explanation.tokens is None else explanation.tokens.z.tolist(),
        answer=ANSWERS[trace.answer],
        probs=trace.probs.tolist(),
        mode=args.mode,
        alpha_maps=explanation.comparison.alpha_maps.tolist(),
        agreement=explanation.comparison.agreement,
    )
    write_explanation(args.out, image, explanation, report)
    logger.info(
        "explanation_written",
        out=str(args.out),
        answer=report.answer,
        agreement=round(explanation.comparison.agreement, 4),
        salient_fraction=round(float(explanation.visual.salient.mean()), 4),
    )
    print(report.answer)
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace) -> int:
    results = run_selfcheck(args.trials, args.step, args.tolerance)
    print(format_table(results))
    passed = all(result.passed for result in results)
    logger.info("selfcheck_completed", checks=len(results), passed=passed)
    return EXIT_OK if passed else EXIT_RUNTIME


def cmd_eval(args: argparse.Namespace) -> int:
    params = load_checkpoint(args.ckpt)
    samples = read_dataset(args.data / args.split)
    report = evaluate(params, samples)
    if args.localization:
        report = report.model_copy(
            update={"localization": localization_report(params, samples, args.mode)}
        )
    print(report.model_dump_json())
    return EXIT_OK


def vocabulary_help() -> str:
    return " ".join(sorted(TOKEN_IDS))
