"""How well attention and token saliency land on what the question is about."""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from hadamard.autodiff.tensor import Tensor
from hadamard.core.enums import GradMode, QuestionKind
from hadamard.core.logging import get_logger
from hadamard.domain.exceptions import ShapeMismatchError, UndefinedStandardScoreError
from hadamard.domain.model.mlb import forward
from hadamard.domain.model.params import ModelParams
from hadamard.domain.services.explainer import alpha_maps, textual_explanation
from hadamard.domain.services.postprocess import token_scores
from hadamard.schemas.training import LocalizationReport
from hadamard.synth.sample import Sample

logger = get_logger(__name__)


@dataclass(frozen=True)
class SampleLocalization:
    masses: Tensor  # per glimpse
    baseline: float
    token_gap: float | None

    @property
    def attention_hit(self) -> bool:
        return bool(np.any(self.masses > self.baseline))

    @property
    def token_hit(self) -> bool:
        return self.token_gap is not None and self.token_gap > 0.0


def attention_mass(maps: Tensor, mask: np.ndarray) -> Tensor:
    """Probability mass each glimpse puts on the masked lattice cells."""
    if maps.shape[1:] != mask.shape:
        raise ShapeMismatchError(f"alpha maps {maps.shape} vs mask {mask.shape}")
    return np.clip(maps[:, mask].sum(axis=1), 0.0, 1.0)


def uniform_baseline(mask: np.ndarray) -> float:
    return float(mask.sum()) / mask.size


def noun_function_gap(z: Tensor, noun_positions: Sequence[int]) -> float | None:
    nouns = np.zeros(len(z), dtype=bool)
    nouns[list(noun_positions)] = True
    if nouns.all() or not nouns.any():
        return None
    return float(z[nouns].mean() - z[~nouns].mean())


def localize(
    params: ModelParams, sample: Sample, mode: GradMode = GradMode.GUIDED
) -> tuple[int, SampleLocalization]:
    trace = forward(params, sample.image, sample.token_ids)
    try:
        z = token_scores(textual_explanation(trace, mode)).z
        gap = noun_function_gap(z, sample.noun_positions)
    except UndefinedStandardScoreError:
        gap = None
    return trace.answer, SampleLocalization(
        masses=attention_mass(alpha_maps(trace), sample.relevance_mask),
        baseline=uniform_baseline(sample.relevance_mask),
        token_gap=gap,
    )


def summarize(records: Iterable[SampleLocalization]) -> LocalizationReport:
    records = list(records)
    if not records:
        return LocalizationReport(
            samples=0,
            mean_mass=0.0,
            mean_baseline=0.0,
            attention_hit_rate=0.0,
            mean_token_gap=0.0,
            token_gap_hit_rate=0.0,
        )
    gaps = [r.token_gap for r in records if r.token_gap is not None]
    return LocalizationReport(
        samples=len(records),
        mean_mass=float(np.mean([r.masses.max() for r in records])),
        mean_baseline=float(np.mean([r.baseline for r in records])),
        attention_hit_rate=sum(r.attention_hit for r in records) / len(records),
        mean_token_gap=float(np.mean(gaps)) if gaps else 0.0,
        token_gap_hit_rate=sum(r.token_hit for r in records) / len(records),
    )


def localization_report(
    params: ModelParams, samples: Sequence[Sample], mode: GradMode = GradMode.GUIDED
) -> LocalizationReport:
    """Aggregate over correctly answered attribute (non-count) questions."""
    records = []
    for sample in samples:
        if sample.kind == QuestionKind.COUNT:
            continue
        answer, record = localize(params, sample, mode)
        if answer == sample.answer_id:
            records.append(record)
    report = summarize(records)
    logger.info(
        "localization_measured",
        samples=report.samples,
        attention_hit_rate=report.attention_hit_rate,
        token_gap_hit_rate=report.token_gap_hit_rate,
    )
    return report
