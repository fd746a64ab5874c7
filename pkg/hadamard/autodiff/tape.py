from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import Any, NewType

import numpy as np

from hadamard.autodiff.rules import RULES
from hadamard.autodiff.tensor import Tensor
from hadamard.core.enums import OpKind
from hadamard.domain.exceptions import NonFiniteValueError, ShapeMismatchError

NodeId = NewType("NodeId", int)


@dataclass(frozen=True)
class Node:
    op: OpKind
    inputs: tuple[NodeId, ...]
    value: Tensor
    attrs: Mapping[str, Any] = field(default_factory=dict)


class Tape:
    """Append-only record of primitive operations.

    Inputs of node ``k`` always have ids below ``k``, so the tape is topologically
    ordered and acyclic by construction. Stored values are read-only; once a tape is
    complete it can be shared between concurrent backward sweeps.
    """

    def __init__(self) -> None:
        self._nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self._nodes)

    def append(
        self,
        op: OpKind,
        inputs: tuple[NodeId, ...],
        value: Tensor,
        attrs: Mapping[str, Any] | None = None,
    ) -> NodeId:
        for input_id in inputs:
            if not 0 <= input_id < len(self._nodes):
                raise ShapeMismatchError(f"Input node {input_id} is not on this tape")
        if not np.all(np.isfinite(value)):
            raise NonFiniteValueError(f"{op.value} produced NaN or Inf")
        value.setflags(write=False)
        self._nodes.append(Node(op=op, inputs=inputs, value=value, attrs=dict(attrs or {})))
        return NodeId(len(self._nodes) - 1)

    def node(self, node_id: NodeId) -> Node:
        if not 0 <= node_id < len(self._nodes):
            raise ShapeMismatchError(f"Node {node_id} is not on this tape")
        return self._nodes[node_id]

    def value(self, node_id: NodeId) -> Tensor:
        return self.node(node_id).value

    def replay(self) -> list[Tensor]:
        """Re-execute every node from the stored leaves and return the recomputed values."""
        values: list[Tensor] = []
        for node in self._nodes:
            if not node.inputs:
                values.append(node.value.copy())
                continue
            rule = RULES[node.op]
            values.append(rule.forward([values[i] for i in node.inputs], node.attrs))
        return values
