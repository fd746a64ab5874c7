from pydantic import BaseModel, ConfigDict, Field

from hadamard.core.constants import CELL_PIXELS

# declared order of the serialized fields
HYPER_FIELD_ORDER = (
    "question_dim",
    "joint_dim",
    "visual_channels",
    "glimpses",
    "lattice",
    "embed_dim",
    "max_tokens",
    "vocab_size",
    "answer_count",
)


class HyperParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    question_dim: int = Field(default=48, gt=0, description="N, question vector size")
    joint_dim: int = Field(default=64, gt=0, description="d, low-rank joint size")
    visual_channels: int = Field(default=32, gt=0, description="M, feature channels")
    glimpses: int = Field(default=2, gt=0, description="G")
    lattice: int = Field(default=14, gt=0, description="S, side of the feature lattice")
    embed_dim: int = Field(default=16, gt=0, description="D, word embedding size")
    max_tokens: int = Field(default=8, gt=0, description="rho_max")
    vocab_size: int = Field(default=32, gt=0)
    answer_count: int = Field(default=9, gt=0, description="|Omega|")

    @property
    def image_size(self) -> int:
        # two stride-2 stages in the feature extractor
        return CELL_PIXELS * self.lattice

    @property
    def positions(self) -> int:
        return self.lattice * self.lattice

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in HYPER_FIELD_ORDER)

    @classmethod
    def from_tuple(cls, values: tuple[int, ...]) -> "HyperParams":
        return cls(**dict(zip(HYPER_FIELD_ORDER, values, strict=True)))
