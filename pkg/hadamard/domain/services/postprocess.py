from dataclasses import dataclass

import numpy as np

from hadamard.autodiff.tensor import Tensor
from hadamard.core.constants import STD_EPS
from hadamard.domain.exceptions import ShapeMismatchError, UndefinedStandardScoreError


@dataclass(frozen=True)
class VisualSaliency:
    raw: Tensor
    normalized: Tensor
    heatmap: Tensor
    salient: Tensor  # H x W bool, see salient_mask


@dataclass(frozen=True)
class TokenSaliency:
    per_token_abs: Tensor
    z: Tensor


def _is_constant(values: Tensor) -> bool:
    return bool(np.ptp(values) == 0.0)


def normalize_pixels(raw: Tensor) -> Tensor:
    """Standard-score each channel over its own H*W values (population std).

    Constant channels map to zeros; near-constant ones divide by the STD_EPS floor.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ShapeMismatchError(f"Expected a C x H x W map, got {raw.shape}")
    normalized = np.zeros_like(raw)
    for channel, values in enumerate(raw):
        mu = values.mean()
        sigma = values.std()
        if _is_constant(values):
            continue
        normalized[channel] = (values - mu) / max(sigma, STD_EPS)
    return normalized


def collapse_heatmap(normalized: Tensor) -> Tensor:
    """L2 norm over channels: one non-negative H x W map."""
    return np.sqrt(np.sum(np.square(normalized), axis=0))


def token_scores(raw: Tensor) -> TokenSaliency:
    """Sum |grad| over the embedding axis per token, then standard-score across tokens."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ShapeMismatchError(f"Expected a rho x D gradient, got {raw.shape}")
    if raw.shape[0] < 2:
        raise UndefinedStandardScoreError("undefined standard score: fewer than two tokens")

    per_token = np.abs(raw).sum(axis=1)
    mu = per_token.mean()
    sigma = per_token.std()
    if _is_constant(per_token):
        raise UndefinedStandardScoreError("undefined standard score: token scores are constant")
    return TokenSaliency(per_token_abs=per_token, z=(per_token - mu) / max(sigma, STD_EPS))


def salient_mask(heatmap: Tensor, k: float = 2.0) -> Tensor:
    """Pixels whose heatmap value lies more than ``k`` standard deviations above the mean."""
    if _is_constant(heatmap):
        return np.zeros(heatmap.shape, dtype=bool)
    return (heatmap - heatmap.mean()) / max(heatmap.std(), STD_EPS) > k


def visual_saliency(raw: Tensor) -> VisualSaliency:
    normalized = normalize_pixels(raw)
    heatmap = collapse_heatmap(normalized)
    return VisualSaliency(
        raw=raw, normalized=normalized, heatmap=heatmap, salient=salient_mask(heatmap)
    )


def pool_to_lattice(heatmap: Tensor, lattice: int) -> Tensor:
    height, width = heatmap.shape
    if height % lattice or width % lattice:
        raise ShapeMismatchError(f"{heatmap.shape} does not tile a {lattice}x{lattice} lattice")
    return heatmap.reshape(lattice, height // lattice, lattice, width // lattice).mean(axis=(1, 3))


def heatmap_attention_agreement(heatmap: Tensor, alpha_maps: Tensor) -> float:
    """Cosine similarity of the lattice-pooled heatmap with the glimpse-summed attention."""
    lattice = alpha_maps.shape[-1]
    pooled = pool_to_lattice(heatmap, lattice).reshape(-1)
    attended = np.asarray(alpha_maps).sum(axis=0).reshape(-1)
    norm = np.linalg.norm(pooled) * np.linalg.norm(attended)
    if norm == 0.0:
        return 0.0
    return float(pooled @ attended / norm)
