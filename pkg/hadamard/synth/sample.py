from dataclasses import dataclass

import numpy as np

from hadamard.autodiff.tensor import Tensor
from hadamard.core.enums import QuestionKind


@dataclass(frozen=True)
class Sample:
    """One VQA instance with its ground-truth relevance on the lattice."""

    image: Tensor  # 3 x H x W in [0, 1]
    token_ids: tuple[int, ...]
    answer_id: int
    relevance_mask: np.ndarray  # S x S bool, empty for count questions
    kind: QuestionKind
    noun_positions: tuple[int, ...]
