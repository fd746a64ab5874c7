from hadamard.autodiff.ops import (
    add,
    backward,
    const_node,
    conv2d,
    detach,
    embedding_lookup,
    hadamard,
    log_softmax_rows,
    matmul,
    relu_op,
    replicate_rows,
    reshape,
    softmax_rows,
    sum_all,
    take_row,
    tanh_op,
    transpose,
)
from hadamard.autodiff.tape import Node, NodeId, Tape
from hadamard.autodiff.tensor import Tensor, as_tensor

__all__ = [
    "Node",
    "NodeId",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "const_node",
    "conv2d",
    "detach",
    "embedding_lookup",
    "hadamard",
    "log_softmax_rows",
    "matmul",
    "relu_op",
    "replicate_rows",
    "reshape",
    "softmax_rows",
    "sum_all",
    "take_row",
    "tanh_op",
    "transpose",
]
