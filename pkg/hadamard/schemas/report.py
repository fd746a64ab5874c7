from pydantic import BaseModel, Field, model_validator

from hadamard.core.enums import CheckStatus, GradMode


class ExplainReport(BaseModel):
    """Contents of tokens.json, plus the lattice maps kept for callers."""

    tokens: list[str]
    z: list[float] | None
    answer: str
    probs: list[float]
    mode: GradMode
    alpha_maps: list[list[list[float]]] = Field(default_factory=list, exclude=True)
    agreement: float | None = Field(default=None, exclude=True)

    @model_validator(mode="after")
    def check_token_count(self) -> "ExplainReport":
        if self.z is not None and len(self.z) != len(self.tokens):
            raise ValueError(f"{len(self.z)} scores for {len(self.tokens)} tokens")
        return self


class CheckResult(BaseModel):
    name: str
    status: CheckStatus
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == CheckStatus.PASS
