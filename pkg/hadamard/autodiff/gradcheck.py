"""Central finite-difference verification of the Standard-mode backward sweep."""

from collections.abc import Callable

import numpy as np

from hadamard.autodiff.ops import backward, const_node
from hadamard.autodiff.tape import NodeId, Tape
from hadamard.autodiff.tensor import Tensor, as_tensor
from hadamard.core.constants import GRADCHECK_DENOM_FLOOR, ROUNDOFF_SAFETY
from hadamard.core.enums import GradMode, OpKind
from hadamard.core.logging import get_logger
from hadamard.domain.exceptions import ShapeMismatchError

logger = get_logger(__name__)

# Builds a scalar (single-entry) node from the leaf holding x.
Objective = Callable[[Tape, NodeId], NodeId]


def evaluate_objective(objective: Objective, x: Tensor) -> float:
    tape = Tape()
    out = objective(tape, const_node(tape, x, name="x"))
    value = tape.value(out)
    if value.size != 1:
        raise ShapeMismatchError(f"Objective must produce a scalar, got {value.shape}")
    return float(value.reshape(-1)[0])


def analytic_gradient(objective: Objective, x: Tensor) -> Tensor:
    tape = Tape()
    leaf = const_node(tape, x, name="x")
    out = objective(tape, leaf)
    seed = np.ones_like(tape.value(out))
    grads = backward(tape, out, seed, GradMode.STANDARD)
    return grads.get(leaf, np.zeros_like(tape.value(leaf)))


def numeric_gradient(objective: Objective, x: Tensor, h: float) -> Tensor:
    base = np.array(x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_grad = grad.reshape(-1)
    for j in range(flat_base.size):
        shifted = flat_base.copy()
        shifted[j] = flat_base[j] + h
        f_plus = evaluate_objective(objective, shifted.reshape(base.shape))
        shifted[j] = flat_base[j] - h
        f_minus = evaluate_objective(objective, shifted.reshape(base.shape))
        flat_grad[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(
    analytic: Tensor, numeric: Tensor, floor: float = GRADCHECK_DENOM_FLOOR
) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def roundoff_floor(value: float, h: float, tolerance: float) -> float:
    """Denominator floor below which a central difference cannot resolve ``tolerance``.

    Evaluating f near ``value`` loses about eps * |f| to rounding, so the difference
    quotient carries an absolute error of order eps * |f| / h.
    """
    noise = ROUNDOFF_SAFETY * np.finfo(np.float64).eps * max(abs(value), 1.0) / h
    return max(GRADCHECK_DENOM_FLOOR, float(noise / tolerance))


def grad_check(objective: Objective, x, h: float = 1e-5, tolerance: float | None = None) -> float:
    """Max relative error between the analytic and central-difference gradients at ``x``.

    The objective must be deterministic and ``x`` should sit farther than ``h`` from any
    ReLU kink.

    With ``tolerance`` set, the denominator floor rises to ``roundoff_floor`` so entries
    that round-off alone swamps are not scored.
    """
    x = as_tensor(x)
    floor = GRADCHECK_DENOM_FLOOR
    if tolerance is not None:
        floor = roundoff_floor(evaluate_objective(objective, x), h, tolerance)
    analytic = analytic_gradient(objective, x)
    error = relative_error(analytic, numeric_gradient(objective, x, h), floor)
    logger.debug("grad_check_completed", size=int(x.size), step=h, max_rel_error=error)
    return error


def min_relu_margin(tape: Tape) -> float:
    """Smallest |input| over every ReLU on the tape (inf when there is none)."""
    margins = [
        float(np.min(np.abs(tape.value(node.inputs[0]))))
        for node in tape
        if node.op == OpKind.RELU
    ]
    return min(margins, default=float("inf"))
