from pydantic import BaseModel, Field


class EpochMetrics(BaseModel):
    epoch: int = Field(..., ge=1)
    loss: float
    acc: float = Field(..., ge=0, le=1)
    val_acc: float | None = Field(default=None, ge=0, le=1)
    duration_seconds: float = Field(default=0.0, ge=0)

    def as_line(self) -> dict:
        """The per-epoch JSON line printed by ``hadamard train``."""
        return self.model_dump(include={"epoch", "loss", "acc", "val_acc"}, exclude_none=True)


class LocalizationReport(BaseModel):
    samples: int = Field(..., ge=0, description="Correctly answered attribute questions")
    mean_mass: float = Field(..., ge=0, le=1)
    mean_baseline: float = Field(..., ge=0, le=1)
    attention_hit_rate: float = Field(..., ge=0, le=1)
    mean_token_gap: float
    token_gap_hit_rate: float = Field(..., ge=0, le=1)


class EvalReport(BaseModel):
    samples: int = Field(..., ge=0)
    accuracy: float = Field(..., ge=0, le=1)
    per_kind: dict[str, float]
    localization: LocalizationReport | None = None
