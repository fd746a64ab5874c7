from dataclasses import dataclass

import numpy as np

from hadamard.autodiff.ops import backward
from hadamard.autodiff.tensor import Tensor
from hadamard.core.enums import GradMode
from hadamard.core.logging import get_logger
from hadamard.core.metrics import explanations_total
from hadamard.domain.exceptions import (
    ShapeMismatchError,
    TraceIncompleteError,
    UndefinedStandardScoreError,
)
from hadamard.domain.model.mlb import ForwardTrace
from hadamard.domain.services.postprocess import (
    TokenSaliency,
    VisualSaliency,
    heatmap_attention_agreement,
    token_scores,
    visual_saliency,
)

logger = get_logger(__name__)

_REQUIRED_NODES = ("image", "q_embeds", "alpha", "q_joint", "v_joint", "f_joint")


def _require_nodes(trace: ForwardTrace) -> None:
    for name in _REQUIRED_NODES:
        node_id = getattr(trace, name, None)
        if node_id is None or not 0 <= node_id < len(trace.tape):
            raise TraceIncompleteError(f"Trace has no usable '{name}' node")


def legacy_layer_loss(v_val: Tensor, f_val: Tensor) -> tuple[float, Tensor]:
    """Half squared distance of V from a frozen F, and the seed it induces at V."""
    v_val, f_val = np.asarray(v_val, dtype=np.float64), np.asarray(f_val, dtype=np.float64)
    if v_val.shape != f_val.shape:
        raise ShapeMismatchError(f"V {v_val.shape} vs F {f_val.shape}")
    residual = v_val - f_val
    return 0.5 * float(np.sum(residual * residual)), residual


def _residual_seed(trace: ForwardTrace, own: str, other: str, freeze_joint: bool) -> Tensor:
    own_val = trace.value(getattr(trace, own))
    residual = own_val - trace.value(trace.f_joint)
    if freeze_joint:
        return residual
    # F = own o other also moves with own: d/d(own) of 1/2|own - F|^2
    return residual * (1.0 - trace.value(getattr(trace, other)))


def visual_explanation(
    trace: ForwardTrace,
    mode: GradMode = GradMode.GUIDED,
    freeze_joint: bool = True,
) -> Tensor:
    """(V - F) dV/dI at the image leaf; F enters only through the seed."""
    _require_nodes(trace)
    seed = _residual_seed(trace, "v_joint", "q_joint", freeze_joint)
    grads = backward(trace.tape, trace.v_joint, seed, mode)
    explanations_total.labels(mode=mode.value).inc()
    return grads.get(trace.image, np.zeros_like(trace.value(trace.image)))


def textual_explanation(
    trace: ForwardTrace,
    mode: GradMode = GradMode.GUIDED,
    freeze_joint: bool = True,
) -> Tensor:
    """(Q - F) dQ/dq at the rho x D embedded question."""
    _require_nodes(trace)
    seed = _residual_seed(trace, "q_joint", "v_joint", freeze_joint)
    grads = backward(trace.tape, trace.q_joint, seed, mode)
    explanations_total.labels(mode=mode.value).inc()
    return grads.get(trace.q_embeds, np.zeros_like(trace.value(trace.q_embeds)))


@dataclass(frozen=True)
class AttentionComparison:
    alpha_maps: Tensor  # G x S x S
    heatmap: Tensor  # H x W
    agreement: float


def alpha_maps(trace: ForwardTrace) -> Tensor:
    alpha = trace.value(trace.alpha)
    lattice = int(round(np.sqrt(alpha.shape[1])))
    return alpha.reshape(alpha.shape[0], lattice, lattice)


def compare_with_attention(trace: ForwardTrace, heatmap: Tensor) -> AttentionComparison:
    maps = alpha_maps(trace)
    return AttentionComparison(
        alpha_maps=maps,
        heatmap=heatmap,
        agreement=heatmap_attention_agreement(heatmap, maps),
    )


def attention_comparison(
    trace: ForwardTrace, mode: GradMode = GradMode.GUIDED
) -> AttentionComparison:
    """Each glimpse on the lattice next to the pixel heatmap of the visual explanation."""
    _require_nodes(trace)
    return compare_with_attention(trace, visual_saliency(visual_explanation(trace, mode)).heatmap)


@dataclass(frozen=True)
class Explanation:
    mode: GradMode
    visual: VisualSaliency
    tokens: TokenSaliency | None
    comparison: AttentionComparison


def explain(
    trace: ForwardTrace,
    mode: GradMode = GradMode.GUIDED,
    freeze_joint: bool = True,
) -> Explanation:
    """Both explanations plus post-processing for one trace."""
    visual = visual_saliency(visual_explanation(trace, mode, freeze_joint))
    try:
        tokens: TokenSaliency | None = token_scores(
            textual_explanation(trace, mode, freeze_joint)
        )
    except UndefinedStandardScoreError as e:
        logger.warning("token_scores_undefined", reason=e.message, tokens=len(trace.token_ids))
        tokens = None

    comparison = compare_with_attention(trace, visual.heatmap)
    logger.debug(
        "explanation_computed",
        mode=mode.value,
        answer=trace.answer,
        agreement=comparison.agreement,
    )
    return Explanation(mode=mode, visual=visual, tokens=tokens, comparison=comparison)
