import time
from collections.abc import Sequence

import numpy as np

from hadamard.autodiff import rules
from hadamard.autodiff.rules import conv_output_extent
from hadamard.autodiff.tape import NodeId, Tape
from hadamard.autodiff.tensor import Tensor, as_tensor
from hadamard.core.enums import GradMode, OpKind
from hadamard.core.metrics import backward_duration_seconds
from hadamard.domain.exceptions import (
    InvalidExtentError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)


def _apply(tape: Tape, op: OpKind, inputs: tuple[NodeId, ...], **attrs) -> NodeId:
    rule = rules.RULES[op]
    value = rule.forward([tape.value(i) for i in inputs], attrs)
    return tape.append(op, inputs, value, attrs)


def const_node(tape: Tape, value, name: str | None = None) -> NodeId:
    """Register a leaf. Leaves have no inputs; backward still reports their gradient."""
    return tape.append(OpKind.CONST, (), as_tensor(value), {"name": name})


def matmul(tape: Tape, a: NodeId, b: NodeId) -> NodeId:
    """Matrix product of an m x k (or length-k vector) node with a k x n node."""
    left, right = tape.value(a), tape.value(b)
    if left.ndim not in (1, 2) or right.ndim != 2 or left.shape[-1] != right.shape[0]:
        raise ShapeMismatchError(f"matmul: cannot multiply {left.shape} by {right.shape}")
    return _apply(tape, OpKind.MATMUL, (a, b))


def hadamard(tape: Tape, a: NodeId, b: NodeId) -> NodeId:
    left, right = tape.value(a), tape.value(b)
    if left.shape != right.shape:
        raise ShapeMismatchError(f"hadamard: {left.shape} vs {right.shape}")
    return _apply(tape, OpKind.HADAMARD, (a, b))


def add(tape: Tape, a: NodeId, b: NodeId) -> NodeId:
    """Elementwise sum; ``b`` may also be a bias over the last axis or an m x 1 column bias."""
    left, right = tape.value(a), tape.value(b)
    if left.shape == right.shape:
        broadcast = "none"
    elif left.ndim >= 2 and right.shape == (left.shape[-1],):
        broadcast = "row"
    elif left.ndim == 2 and right.shape == (left.shape[0], 1):
        broadcast = "col"
    else:
        raise ShapeMismatchError(f"add: cannot broadcast {right.shape} onto {left.shape}")
    return _apply(tape, OpKind.ADD, (a, b), broadcast=broadcast)


def tanh_op(tape: Tape, a: NodeId) -> NodeId:
    return _apply(tape, OpKind.TANH, (a,))


def relu_op(tape: Tape, a: NodeId) -> NodeId:
    return _apply(tape, OpKind.RELU, (a,))


def _require_rows(tape: Tape, a: NodeId, op_name: str) -> None:
    if tape.value(a).ndim not in (1, 2):
        raise ShapeMismatchError(f"{op_name}: expected a vector or matrix")


def softmax_rows(tape: Tape, a: NodeId) -> NodeId:
    """Row-wise softmax with max subtraction; a vector is treated as a single row."""
    _require_rows(tape, a, "softmax_rows")
    return _apply(tape, OpKind.SOFTMAX_ROWS, (a,))


def log_softmax_rows(tape: Tape, a: NodeId) -> NodeId:
    _require_rows(tape, a, "log_softmax_rows")
    return _apply(tape, OpKind.LOG_SOFTMAX_ROWS, (a,))


def conv2d(
    tape: Tape,
    input: NodeId,
    kernel: NodeId,
    stride: int = 1,
    pad: int = 0,
    bias: NodeId | None = None,
) -> NodeId:
    image, weights = tape.value(input), tape.value(kernel)
    if image.ndim != 3 or weights.ndim != 4 or weights.shape[1] != image.shape[0]:
        raise ShapeMismatchError(f"conv2d: input {image.shape} vs kernel {weights.shape}")
    if weights.shape[2] != weights.shape[3]:
        raise ShapeMismatchError("conv2d: kernels must be square")
    if stride < 1 or pad < 0:
        raise InvalidExtentError(f"conv2d: stride={stride}, pad={pad}")
    size = weights.shape[2]
    out_h = conv_output_extent(image.shape[1], size, stride, pad)
    out_w = conv_output_extent(image.shape[2], size, stride, pad)
    if out_h <= 0 or out_w <= 0:
        raise InvalidExtentError(f"conv2d: output extent {out_h}x{out_w}")

    inputs: tuple[NodeId, ...] = (input, kernel)
    if bias is not None:
        if tape.value(bias).shape != (weights.shape[0],):
            raise ShapeMismatchError("conv2d: bias must have one entry per output channel")
        inputs = (input, kernel, bias)
    return _apply(tape, OpKind.CONV2D, inputs, stride=stride, pad=pad)


def embedding_lookup(tape: Tape, table: NodeId, ids: Sequence[int]) -> NodeId:
    weights = tape.value(table)
    if weights.ndim != 2:
        raise ShapeMismatchError("embedding_lookup: table must be a matrix")
    vocab_size = weights.shape[0]
    for token_id in ids:
        if not 0 <= token_id < vocab_size:
            raise TokenOutOfRangeError(f"Token id {token_id} outside vocabulary of {vocab_size}")
    if not ids:
        raise InvalidExtentError("embedding_lookup: no ids")
    return _apply(tape, OpKind.EMBEDDING, (table,), ids=tuple(int(i) for i in ids))


def detach(tape: Tape, a: NodeId) -> NodeId:
    """Copy the value; backward sends nothing to ``a``."""
    return _apply(tape, OpKind.DETACH, (a,))


def reshape(tape: Tape, a: NodeId, shape: tuple[int, ...]) -> NodeId:
    if int(np.prod(shape)) != tape.value(a).size:
        raise ShapeMismatchError(f"reshape: {tape.value(a).shape} -> {shape}")
    return _apply(tape, OpKind.RESHAPE, (a,), shape=tuple(shape))


def transpose(tape: Tape, a: NodeId) -> NodeId:
    if tape.value(a).ndim != 2:
        raise ShapeMismatchError("transpose: expected a matrix")
    return _apply(tape, OpKind.TRANSPOSE, (a,))


def replicate_rows(tape: Tape, a: NodeId, count: int) -> NodeId:
    """Stack ``count`` copies of a vector as rows (the 1^T replication)."""
    if tape.value(a).ndim != 1 or count < 1:
        raise ShapeMismatchError("replicate_rows: expected a vector and a positive count")
    return _apply(tape, OpKind.REPLICATE_ROWS, (a,), count=count)


def take_row(tape: Tape, a: NodeId, index: int) -> NodeId:
    value = tape.value(a)
    if value.ndim != 2 or not 0 <= index < value.shape[0]:
        raise ShapeMismatchError(f"take_row: row {index} of {value.shape}")
    return _apply(tape, OpKind.TAKE_ROW, (a,), index=index)


def sum_all(tape: Tape, a: NodeId) -> NodeId:
    return _apply(tape, OpKind.SUM_ALL, (a,))


def backward(
    tape: Tape,
    seed_node: NodeId,
    seed: Tensor,
    mode: GradMode = GradMode.STANDARD,
) -> dict[NodeId, Tensor]:
    """Reverse sweep from ``seed_node`` in descending node order.

    Returns the accumulated gradient of every node reached. Contributions to a shared
    node are summed in the order its consumers are visited (highest id first).
    """
    seed_value = np.array(seed, dtype=np.float64)
    if seed_value.shape != tape.value(seed_node).shape:
        raise ShapeMismatchError(
            f"seed {seed_value.shape} does not match node {tape.value(seed_node).shape}"
        )

    started = time.perf_counter()
    grads: dict[NodeId, Tensor] = {seed_node: seed_value}
    for index in range(seed_node, -1, -1):
        node_id = NodeId(index)
        grad_out = grads.get(node_id)
        node = tape.node(node_id)
        if grad_out is None or not node.inputs:
            continue

        rule = rules.RULES[node.op]
        contributions = rule.vjp(
            grad_out, [tape.value(i) for i in node.inputs], node.value, node.attrs, mode
        )
        for input_id, contribution in zip(node.inputs, contributions, strict=True):
            if contribution is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + contribution
            else:
                grads[input_id] = contribution

    backward_duration_seconds.labels(mode=mode.value).observe(time.perf_counter() - started)
    return grads
