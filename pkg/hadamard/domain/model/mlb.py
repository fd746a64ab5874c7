from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from hadamard.autodiff import ops
from hadamard.autodiff.tape import NodeId, Tape
from hadamard.autodiff.tensor import Tensor
from hadamard.core.logging import get_logger
from hadamard.domain.exceptions import (
    EmptyQuestionError,
    QuestionTooLongError,
    ShapeMismatchError,
)
from hadamard.domain.model.params import IMAGE_CHANNELS, ModelParams

logger = get_logger(__name__)


@dataclass(frozen=True)
class ForwardTrace:
    """A completed tape plus the named nodes of one forward pass.

    ``q_joint``, ``v_joint`` and ``f_joint`` are the textual input, the visual input and
    the output of the Hadamard joint.
    """

    tape: Tape
    token_ids: tuple[int, ...]
    params: Mapping[str, NodeId]
    image: NodeId
    q_embeds: NodeId
    q_vec: NodeId
    f_feat: NodeId
    alpha_logits: NodeId
    alpha: NodeId
    v_hat: NodeId
    q_joint: NodeId
    v_joint: NodeId
    f_joint: NodeId
    logits: NodeId
    probs_node: NodeId
    log_probs: NodeId
    answer: int

    @property
    def embedding(self) -> NodeId:
        return self.params["embedding"]

    @property
    def probs(self) -> Tensor:
        return self.tape.value(self.probs_node)

    def value(self, node_id: NodeId) -> Tensor:
        return self.tape.value(node_id)


class MLBGraph:
    """Builds the MLB computation on a tape.

    Parameters are registered as leaves on construction; ``overrides`` substitutes
    existing nodes for some of them (used by gradient checks).
    """

    def __init__(
        self,
        params: ModelParams,
        tape: Tape | None = None,
        overrides: Mapping[str, NodeId] | None = None,
    ):
        self.params = params
        self.hyper = params.hyper
        self.tape = tape if tape is not None else Tape()
        overrides = overrides or {}
        self.nodes: dict[str, NodeId] = {}
        for name in params.names():
            if name in overrides:
                self.nodes[name] = overrides[name]
            else:
                self.nodes[name] = ops.const_node(self.tape, params[name], name)

    def encode_question(self, token_ids: Sequence[int]) -> tuple[NodeId, NodeId]:
        """Embedding lookup followed by h_t = tanh(W_h^T e_t + U_h^T h_{t-1} + b_h), h_0 = 0."""
        if len(token_ids) == 0:
            raise EmptyQuestionError()
        if len(token_ids) > self.hyper.max_tokens:
            raise QuestionTooLongError(
                f"Question has {len(token_ids)} tokens, limit is {self.hyper.max_tokens}"
            )
        q_embeds = ops.embedding_lookup(self.tape, self.nodes["embedding"], token_ids)
        return q_embeds, self.encode_embedded(q_embeds)

    def encode_embedded(self, q_embeds: NodeId) -> NodeId:
        """Run the recurrence over an already embedded rho x D question."""
        tape, nodes = self.tape, self.nodes
        hidden = ops.const_node(tape, np.zeros(self.hyper.question_dim), "h0")
        for step in range(tape.value(q_embeds).shape[0]):
            word = ops.take_row(tape, q_embeds, step)
            pre = ops.add(
                tape,
                ops.add(
                    tape,
                    ops.matmul(tape, word, nodes["enc_w"]),
                    ops.matmul(tape, hidden, nodes["enc_u"]),
                ),
                nodes["enc_b"],
            )
            hidden = ops.tanh_op(tape, pre)
        return hidden

    def extract_features(self, image: NodeId) -> NodeId:
        """Three conv+ReLU stages (stride 1, 2, 2) giving an S^2 x M feature matrix."""
        size = self.hyper.image_size
        if self.tape.value(image).shape != (IMAGE_CHANNELS, size, size):
            raise ShapeMismatchError(
                f"Image must be {IMAGE_CHANNELS}x{size}x{size}, got {self.tape.value(image).shape}"
            )
        tape, nodes = self.tape, self.nodes

        x = image
        for stage, stride in ((1, 1), (2, 2), (3, 2)):
            x = ops.conv2d(
                tape, x, nodes[f"conv{stage}_k"], stride=stride, pad=1, bias=nodes[f"conv{stage}_b"]
            )
            x = ops.relu_op(tape, x)

        lattice = ops.reshape(tape, x, (self.hyper.visual_channels, self.hyper.positions))
        return ops.transpose(tape, lattice)

    def attention_logits(self, q_vec: NodeId, f_feat: NodeId) -> NodeId:
        """P_alpha^T (tanh(U_q^T q 1^T) o tanh(V_F^T F^T)) with biases, shape G x S^2."""
        tape, nodes = self.tape, self.nodes
        if tape.value(f_feat).shape != (self.hyper.positions, self.hyper.visual_channels):
            raise ShapeMismatchError(f"Features must be S^2 x M, got {tape.value(f_feat).shape}")

        q_proj = ops.tanh_op(
            tape, ops.add(tape, ops.matmul(tape, q_vec, nodes["att_uq"]), nodes["att_uq_b"])
        )
        q_rows = ops.replicate_rows(tape, q_proj, self.hyper.positions)
        f_proj = ops.tanh_op(
            tape, ops.add(tape, ops.matmul(tape, f_feat, nodes["att_vf"]), nodes["att_vf_b"])
        )
        pooled = ops.hadamard(tape, q_rows, f_proj)
        scores = ops.add(tape, ops.matmul(tape, pooled, nodes["att_p"]), nodes["att_p_b"])
        return ops.transpose(tape, scores)

    def attention(self, q_vec: NodeId, f_feat: NodeId) -> NodeId:
        return ops.softmax_rows(self.tape, self.attention_logits(q_vec, f_feat))

    def attend(self, alpha: NodeId, f_feat: NodeId) -> NodeId:
        """Concatenate the G attention-weighted sums of feature rows."""
        alpha_shape, feat_shape = self.tape.value(alpha).shape, self.tape.value(f_feat).shape
        if len(alpha_shape) != 2 or len(feat_shape) != 2 or alpha_shape[1] != feat_shape[0]:
            raise ShapeMismatchError(f"attend: alpha {alpha_shape} vs features {feat_shape}")
        glimpses = ops.matmul(self.tape, alpha, f_feat)
        return ops.reshape(self.tape, glimpses, (alpha_shape[0] * feat_shape[1],))

    def joint(self, q_vec: NodeId, v_hat: NodeId) -> tuple[NodeId, NodeId, NodeId]:
        tape, nodes = self.tape, self.nodes
        q_joint = ops.tanh_op(
            tape, ops.add(tape, ops.matmul(tape, q_vec, nodes["joint_wq"]), nodes["joint_wq_b"])
        )
        v_joint = ops.tanh_op(
            tape, ops.add(tape, ops.matmul(tape, v_hat, nodes["joint_vv"]), nodes["joint_vv_b"])
        )
        return q_joint, v_joint, ops.hadamard(tape, q_joint, v_joint)

    def predict(self, f_joint: NodeId) -> tuple[NodeId, NodeId, NodeId, int]:
        """Answer logits, probabilities, log-probabilities and the argmax (lowest index on ties)."""
        tape, nodes = self.tape, self.nodes
        logits = ops.add(tape, ops.matmul(tape, f_joint, nodes["out_p"]), nodes["out_p_b"])
        probs = ops.softmax_rows(tape, logits)
        log_probs = ops.log_softmax_rows(tape, logits)
        return logits, probs, log_probs, int(np.argmax(tape.value(probs)))

    def forward(self, image: NodeId, token_ids: Sequence[int]) -> ForwardTrace:
        q_embeds, q_vec = self.encode_question(token_ids)
        f_feat = self.extract_features(image)
        alpha_logits = self.attention_logits(q_vec, f_feat)
        alpha = ops.softmax_rows(self.tape, alpha_logits)
        v_hat = self.attend(alpha, f_feat)
        q_joint, v_joint, f_joint = self.joint(q_vec, v_hat)
        logits, probs, log_probs, answer = self.predict(f_joint)
        return ForwardTrace(
            tape=self.tape,
            token_ids=tuple(int(t) for t in token_ids),
            params=dict(self.nodes),
            image=image,
            q_embeds=q_embeds,
            q_vec=q_vec,
            f_feat=f_feat,
            alpha_logits=alpha_logits,
            alpha=alpha,
            v_hat=v_hat,
            q_joint=q_joint,
            v_joint=v_joint,
            f_joint=f_joint,
            logits=logits,
            probs_node=probs,
            log_probs=log_probs,
            answer=answer,
        )


def forward(
    params: ModelParams,
    image,
    token_ids: Sequence[int],
    *,
    tape: Tape | None = None,
    overrides: Mapping[str, NodeId] | None = None,
) -> ForwardTrace:
    """Run the full model on one sample; the image and every parameter are leaves of the tape."""
    graph = MLBGraph(params, tape=tape, overrides=overrides)
    overrides = overrides or {}
    if "image" in overrides:
        image_node = overrides["image"]
    else:
        image_node = ops.const_node(graph.tape, image, "image")
    return graph.forward(image_node, token_ids)
