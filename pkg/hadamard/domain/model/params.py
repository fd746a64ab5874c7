from collections.abc import Iterator, Mapping
from dataclasses import dataclass

from hadamard.autodiff.tensor import Tensor, as_tensor
from hadamard.domain.exceptions import ShapeMismatchError
from hadamard.domain.model.hyper import HyperParams

CONV1_CHANNELS = 16
CONV2_CHANNELS = 32
KERNEL_SIZE = 3
IMAGE_CHANNELS = 3


def param_shapes(hyper: HyperParams) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every learnable tensor, in serialization order."""
    n, d, m = hyper.question_dim, hyper.joint_dim, hyper.visual_channels
    k = KERNEL_SIZE
    return {
        "embedding": (hyper.vocab_size, hyper.embed_dim),
        "enc_w": (hyper.embed_dim, n),
        "enc_u": (n, n),
        "enc_b": (n,),
        "conv1_k": (CONV1_CHANNELS, IMAGE_CHANNELS, k, k),
        "conv1_b": (CONV1_CHANNELS,),
        "conv2_k": (CONV2_CHANNELS, CONV1_CHANNELS, k, k),
        "conv2_b": (CONV2_CHANNELS,),
        "conv3_k": (m, CONV2_CHANNELS, k, k),
        "conv3_b": (m,),
        "att_uq": (n, d),
        "att_uq_b": (d,),
        "att_vf": (m, d),
        "att_vf_b": (d,),
        "att_p": (d, hyper.glimpses),
        "att_p_b": (hyper.glimpses,),
        "joint_wq": (n, d),
        "joint_wq_b": (d,),
        "joint_vv": (hyper.glimpses * m, d),
        "joint_vv_b": (d,),
        "out_p": (d, hyper.answer_count),
        "out_p_b": (hyper.answer_count,),
    }


def is_bias(name: str) -> bool:
    return name.endswith("_b")


@dataclass(frozen=True)
class ModelParams:
    """All learnable tensors of the model, validated against the hyperparameter table."""

    hyper: HyperParams
    tensors: Mapping[str, Tensor]

    def __post_init__(self) -> None:
        expected = param_shapes(self.hyper)
        missing = expected.keys() - self.tensors.keys()
        extra = self.tensors.keys() - expected.keys()
        if missing or extra:
            raise ShapeMismatchError(
                f"Parameter names differ: missing={sorted(missing)}, unexpected={sorted(extra)}"
            )
        frozen = {}
        for name, shape in expected.items():
            value = as_tensor(self.tensors[name])
            if value.shape != shape:
                raise ShapeMismatchError(f"{name}: expected {shape}, got {value.shape}")
            frozen[name] = value
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def replace(self, updates: Mapping[str, Tensor]) -> "ModelParams":
        return ModelParams(hyper=self.hyper, tensors={**self.tensors, **updates})
