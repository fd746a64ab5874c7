from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hadamard.autodiff.tensor import Tensor
from hadamard.core.enums import GradMode, OpKind

Grads = tuple[Tensor | None, ...]


class OpRule(ABC):
    """Forward evaluation and vector-Jacobian product of one primitive."""

    @abstractmethod
    def forward(self, inputs: Sequence[Tensor], attrs: Mapping[str, Any]) -> Tensor:
        pass

    @abstractmethod
    def vjp(
        self,
        grad_out: Tensor,
        inputs: Sequence[Tensor],
        output: Tensor,
        attrs: Mapping[str, Any],
        mode: GradMode,
    ) -> Grads:
        pass


class ConstRule(OpRule):
    def forward(self, inputs, attrs):
        raise RuntimeError("Leaf nodes are never recomputed")

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return ()


class MatMulRule(OpRule):
    def forward(self, inputs, attrs):
        a, b = inputs
        return a @ b

    def vjp(self, grad_out, inputs, output, attrs, mode):
        a, b = inputs
        grad_a = grad_out @ b.T
        grad_b = np.outer(a, grad_out) if a.ndim == 1 else a.T @ grad_out
        return grad_a, grad_b


class HadamardRule(OpRule):
    def forward(self, inputs, attrs):
        a, b = inputs
        return a * b

    def vjp(self, grad_out, inputs, output, attrs, mode):
        a, b = inputs
        return grad_out * b, grad_out * a


class AddRule(OpRule):
    # broadcast: "none" (equal dims), "row" (bias over the last axis), "col" (m x 1 bias)
    def forward(self, inputs, attrs):
        a, b = inputs
        return a + b

    def vjp(self, grad_out, inputs, output, attrs, mode):
        broadcast = attrs["broadcast"]
        if broadcast == "row":
            grad_b = grad_out.sum(axis=tuple(range(grad_out.ndim - 1)))
        elif broadcast == "col":
            grad_b = grad_out.sum(axis=1, keepdims=True)
        else:
            grad_b = grad_out
        return grad_out, grad_b


class TanhRule(OpRule):
    def forward(self, inputs, attrs):
        return np.tanh(inputs[0])

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return (grad_out * (1.0 - output * output),)


class ReluRule(OpRule):
    """Standard: pass where the input was positive. Guided: additionally drop negative gradients."""

    def forward(self, inputs, attrs):
        return np.maximum(inputs[0], 0.0)

    def vjp(self, grad_out, inputs, output, attrs, mode):
        mask = inputs[0] > 0.0
        if mode == GradMode.GUIDED:
            mask = mask & (grad_out > 0.0)
        return (np.where(mask, grad_out, 0.0),)


def _as_rows(array: Tensor) -> Tensor:
    return array.reshape(1, -1) if array.ndim == 1 else array


class SoftmaxRowsRule(OpRule):
    def forward(self, inputs, attrs):
        rows = _as_rows(inputs[0])
        shifted = rows - rows.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return (exp / exp.sum(axis=1, keepdims=True)).reshape(inputs[0].shape)

    def vjp(self, grad_out, inputs, output, attrs, mode):
        probs = _as_rows(output)
        grad = _as_rows(grad_out)
        grad_in = probs * (grad - (grad * probs).sum(axis=1, keepdims=True))
        return (grad_in.reshape(inputs[0].shape),)


class LogSoftmaxRowsRule(OpRule):
    def forward(self, inputs, attrs):
        rows = _as_rows(inputs[0])
        shifted = rows - rows.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return (shifted - log_norm).reshape(inputs[0].shape)

    def vjp(self, grad_out, inputs, output, attrs, mode):
        log_probs = _as_rows(output)
        grad = _as_rows(grad_out)
        grad_in = grad - np.exp(log_probs) * grad.sum(axis=1, keepdims=True)
        return (grad_in.reshape(inputs[0].shape),)


def conv_output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    return span // stride + 1 if span >= 0 else 0


def _im2col(image: Tensor, kernel: int, stride: int, pad: int) -> tuple[Tensor, int, int]:
    channels = image.shape[0]
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(channels * kernel * kernel, out_h * out_w)
    return cols, out_h, out_w


def _col2im(
    cols: Tensor, shape: tuple[int, ...], kernel: int, stride: int, pad: int, out_h: int, out_w: int
) -> Tensor:
    channels, height, width = shape
    padded = np.zeros((channels, height + 2 * pad, width + 2 * pad))
    patches = cols.reshape(channels, kernel, kernel, out_h, out_w)
    for i in range(kernel):
        for j in range(kernel):
            padded[
                :,
                i : i + stride * (out_h - 1) + 1 : stride,
                j : j + stride * (out_w - 1) + 1 : stride,
            ] += patches[:, i, j]
    return padded[:, pad : pad + height, pad : pad + width]


class Conv2dRule(OpRule):
    """Cross-correlation of a C_in x H x W input with C_out x C_in x k x k kernels."""

    def forward(self, inputs, attrs):
        image, kernel = inputs[0], inputs[1]
        out_channels, _, size, _ = kernel.shape
        cols, out_h, out_w = _im2col(image, size, attrs["stride"], attrs["pad"])
        out = (kernel.reshape(out_channels, -1) @ cols).reshape(out_channels, out_h, out_w)
        if len(inputs) == 3:
            out = out + inputs[2][:, None, None]
        return out

    def vjp(self, grad_out, inputs, output, attrs, mode):
        image, kernel = inputs[0], inputs[1]
        stride, pad = attrs["stride"], attrs["pad"]
        out_channels, _, size, _ = kernel.shape
        cols, out_h, out_w = _im2col(image, size, stride, pad)
        grad_rows = grad_out.reshape(out_channels, -1)

        grad_kernel = (grad_rows @ cols.T).reshape(kernel.shape)
        grad_cols = kernel.reshape(out_channels, -1).T @ grad_rows
        grad_image = _col2im(grad_cols, image.shape, size, stride, pad, out_h, out_w)
        if len(inputs) == 3:
            return grad_image, grad_kernel, grad_out.sum(axis=(1, 2))
        return grad_image, grad_kernel


class EmbeddingRule(OpRule):
    def forward(self, inputs, attrs):
        return inputs[0][list(attrs["ids"])]

    def vjp(self, grad_out, inputs, output, attrs, mode):
        grad_table = np.zeros_like(inputs[0])
        # repeated ids accumulate
        np.add.at(grad_table, list(attrs["ids"]), grad_out)
        return (grad_table,)


class DetachRule(OpRule):
    def forward(self, inputs, attrs):
        return inputs[0].copy()

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return (None,)


class ReshapeRule(OpRule):
    def forward(self, inputs, attrs):
        return inputs[0].reshape(attrs["shape"])

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return (grad_out.reshape(inputs[0].shape),)


class TransposeRule(OpRule):
    def forward(self, inputs, attrs):
        return np.ascontiguousarray(inputs[0].T)

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return (np.ascontiguousarray(grad_out.T),)


class ReplicateRowsRule(OpRule):
    def forward(self, inputs, attrs):
        return np.tile(inputs[0], (attrs["count"], 1))

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return (grad_out.sum(axis=0),)


class TakeRowRule(OpRule):
    def forward(self, inputs, attrs):
        return inputs[0][attrs["index"]].copy()

    def vjp(self, grad_out, inputs, output, attrs, mode):
        grad_in = np.zeros_like(inputs[0])
        grad_in[attrs["index"]] = grad_out
        return (grad_in,)


class SumAllRule(OpRule):
    def forward(self, inputs, attrs):
        return np.array([inputs[0].sum()])

    def vjp(self, grad_out, inputs, output, attrs, mode):
        return (np.full(inputs[0].shape, grad_out[0]),)


RULES: dict[OpKind, OpRule] = {
    OpKind.CONST: ConstRule(),
    OpKind.MATMUL: MatMulRule(),
    OpKind.HADAMARD: HadamardRule(),
    OpKind.ADD: AddRule(),
    OpKind.TANH: TanhRule(),
    OpKind.RELU: ReluRule(),
    OpKind.SOFTMAX_ROWS: SoftmaxRowsRule(),
    OpKind.LOG_SOFTMAX_ROWS: LogSoftmaxRowsRule(),
    OpKind.CONV2D: Conv2dRule(),
    OpKind.EMBEDDING: EmbeddingRule(),
    OpKind.DETACH: DetachRule(),
    OpKind.RESHAPE: ReshapeRule(),
    OpKind.TRANSPOSE: TransposeRule(),
    OpKind.REPLICATE_ROWS: ReplicateRowsRule(),
    OpKind.TAKE_ROW: TakeRowRule(),
    OpKind.SUM_ALL: SumAllRule(),
}
