from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from hadamard.core.constants import DATASET_TRAIN_FILE, DATASET_VAL_FILE, VOCAB_FILE
from hadamard.core.logging import get_logger
from hadamard.core.metrics import scenes_rerolled_total
from hadamard.domain.exceptions import EmptyDatasetError, PlacementError
from hadamard.infrastructure.storage.dataset_file import write_dataset, write_vocab
from hadamard.synth.questions import KIND_ORDER, generate_question
from hadamard.synth.rng import Rng64
from hadamard.synth.sample import Sample
from hadamard.synth.scene import DEFAULT_IMAGE_SIZE, SceneSpec, generate_scene, render

logger = get_logger(__name__)

# validation split draws from its own stream
VAL_SEED_OFFSET = 1


@dataclass(frozen=True)
class DatasetSummary:
    out_dir: Path
    train_count: int
    val_count: int
    kinds: dict[str, int]


def _scene_with_reroll(rng: Rng64, image_size: int) -> SceneSpec:
    while True:
        try:
            return generate_scene(rng, image_size)
        except PlacementError as e:
            scenes_rerolled_total.inc()
            logger.info("scene_rerolled", reason=e.message)


def generate_samples(
    count: int, rng: Rng64, image_size: int = DEFAULT_IMAGE_SIZE
) -> list[Sample]:
    """Question kinds are assigned round-robin so every split is balanced within one."""
    samples = []
    for index in range(count):
        scene = _scene_with_reroll(rng, image_size)
        question = generate_question(scene, rng, KIND_ORDER[index % len(KIND_ORDER)])
        samples.append(
            Sample(
                image=render(scene),
                token_ids=question.token_ids,
                answer_id=question.answer_id,
                relevance_mask=question.relevance_mask,
                kind=question.kind,
                noun_positions=question.noun_positions,
            )
        )
    return samples


def build_dataset(out_dir: Path, seed: int, train_count: int, val_count: int) -> DatasetSummary:
    if train_count <= 0 or val_count <= 0:
        raise EmptyDatasetError(f"Split sizes must be positive, got {train_count} and {val_count}")
    out_dir.mkdir(parents=True, exist_ok=True)

    train = generate_samples(train_count, Rng64(seed))
    val = generate_samples(val_count, Rng64(seed + VAL_SEED_OFFSET))

    write_dataset(out_dir / DATASET_TRAIN_FILE, train)
    write_dataset(out_dir / DATASET_VAL_FILE, val)
    write_vocab(out_dir / VOCAB_FILE)

    kinds = Counter(sample.kind.value for sample in train)
    logger.info(
        "dataset_built",
        out_dir=str(out_dir),
        seed=seed,
        train=train_count,
        val=val_count,
        kinds=dict(kinds),
    )
    return DatasetSummary(
        out_dir=out_dir, train_count=train_count, val_count=val_count, kinds=dict(kinds)
    )
