import re
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from hadamard.core.constants import CELL_PIXELS
from hadamard.core.enums import Color, QuestionKind, Shape
from hadamard.domain.exceptions import UnknownTokenError
from hadamard.synth.rng import Rng64
from hadamard.synth.scene import SceneObject, SceneSpec, object_mask

FUNCTION_WORDS = ("what", "is", "the", "how", "many", "are", "there")
VOCABULARY: tuple[str, ...] = (
    "what",
    "color",
    "is",
    "the",
    "shape",
    "object",
    "how",
    "many",
    "objects",
    "are",
    "there",
    *(shape.value for shape in Shape),
    *(color.value for color in Color),
)
COUNT_WORDS = {2: "two", 3: "three"}
ANSWERS: tuple[str, ...] = (
    *(color.value for color in Color),
    *(shape.value for shape in Shape),
    *COUNT_WORDS.values(),
)

TOKEN_IDS = {token: index for index, token in enumerate(VOCABULARY)}
ANSWER_IDS = {answer: index for index, answer in enumerate(ANSWERS)}
CONTENT_WORDS = frozenset({*(s.value for s in Shape), *(c.value for c in Color), "objects"})
KIND_ORDER = (QuestionKind.COLOR_OF_SHAPE, QuestionKind.SHAPE_OF_COLOR, QuestionKind.COUNT)


@dataclass(frozen=True)
class Question:
    token_ids: tuple[int, ...]
    answer_id: int
    relevance_mask: np.ndarray  # S x S bool
    kind: QuestionKind
    noun_positions: tuple[int, ...]


def tokenize(text: str) -> list[int]:
    words = re.findall(r"[a-z]+", text.lower())
    for word in words:
        if word not in TOKEN_IDS:
            raise UnknownTokenError(word)
    return [TOKEN_IDS[word] for word in words]


def detokenize(token_ids: Sequence[int]) -> list[str]:
    return [VOCABULARY[i] for i in token_ids]


def noun_positions(token_ids: Sequence[int]) -> tuple[int, ...]:
    return tuple(i for i, token in enumerate(token_ids) if VOCABULARY[token] in CONTENT_WORDS)


def relevance_mask(obj: SceneObject | None, image_size: int) -> np.ndarray:
    """Lattice cells whose pixel block holds at least one pixel of ``obj``."""
    lattice = image_size // CELL_PIXELS
    if obj is None:
        return np.zeros((lattice, lattice), dtype=bool)
    pixels = object_mask(obj, image_size)
    return pixels.reshape(lattice, CELL_PIXELS, lattice, CELL_PIXELS).any(axis=(1, 3))


def generate_question(
    scene: SceneSpec, rng: Rng64, kind: QuestionKind | None = None
) -> Question:
    if kind is None:
        kind = KIND_ORDER[rng.below(len(KIND_ORDER))]

    target: SceneObject | None = None
    if kind == QuestionKind.COUNT:
        words = ["how", "many", "objects", "are", "there"]
        answer = COUNT_WORDS[len(scene.objects)]
    else:
        target = scene.objects[rng.below(len(scene.objects))]
        if kind == QuestionKind.COLOR_OF_SHAPE:
            words = ["what", "color", "is", "the", target.shape.value]
            answer = target.color.value
        else:
            words = ["what", "shape", "is", "the", target.color.value, "object"]
            answer = target.shape.value

    token_ids = tuple(TOKEN_IDS[word] for word in words)
    return Question(
        token_ids=token_ids,
        answer_id=ANSWER_IDS[answer],
        relevance_mask=relevance_mask(target, scene.image_size),
        kind=kind,
        noun_positions=noun_positions(token_ids),
    )


def answer_question(scene: SceneSpec, token_ids: Sequence[int]) -> int:
    """Evaluate a templated question against the scene, independently of generation."""
    words = detokenize(token_ids)
    if words[:2] == ["how", "many"]:
        return ANSWER_IDS[COUNT_WORDS[len(scene.objects)]]
    if words[:2] == ["what", "color"]:
        (obj,) = [o for o in scene.objects if o.shape.value == words[-1]]
        return ANSWER_IDS[obj.color.value]
    (obj,) = [o for o in scene.objects if o.color.value == words[-2]]
    return ANSWER_IDS[obj.shape.value]
