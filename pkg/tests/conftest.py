import numpy as np
import pytest

from hadamard.domain.model.hyper import HyperParams
from hadamard.domain.model.mlb import ForwardTrace, forward
from hadamard.domain.model.params import ModelParams, param_shapes
from hadamard.synth.dataset import build_dataset

TINY_HYPER = HyperParams(
    question_dim=4,
    joint_dim=6,
    visual_channels=4,
    glimpses=2,
    lattice=2,
    embed_dim=3,
    max_tokens=5,
    vocab_size=10,
    answer_count=5,
)


def make_params(hyper: HyperParams, seed: int, scale: float = 0.5) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {name: rng.normal(0.0, scale, shape) for name, shape in param_shapes(hyper).items()}
    return ModelParams(hyper=hyper, tensors=tensors)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_hyper():
    return TINY_HYPER


@pytest.fixture
def tiny_params():
    return make_params(TINY_HYPER, seed=0)


@pytest.fixture
def tiny_image():
    size = TINY_HYPER.image_size
    return np.random.default_rng(7).uniform(0.0, 1.0, (3, size, size))


@pytest.fixture
def tiny_question():
    return [1, 4, 4, 7]


@pytest.fixture
def tiny_trace(tiny_params, tiny_image, tiny_question) -> ForwardTrace:
    return forward(tiny_params, tiny_image, tiny_question)


@pytest.fixture
def mini_dataset(tmp_path):
    out_dir = tmp_path / "data"
    build_dataset(out_dir, seed=42, train_count=12, val_count=6)
    return out_dir
