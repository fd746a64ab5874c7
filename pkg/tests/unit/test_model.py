import numpy as np
import pytest

from hadamard.domain.exceptions import (
    EmptyQuestionError,
    QuestionTooLongError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)
from hadamard.domain.model.hyper import HyperParams
from hadamard.domain.model.mlb import forward
from hadamard.domain.model.params import ModelParams, param_shapes
from tests.conftest import TINY_HYPER, make_params


class TestHyperParams:
    def test_defaults_give_56_pixel_images(self):
        hyper = HyperParams()

        assert hyper.image_size == 56
        assert hyper.positions == 196

    def test_tuple_round_trip(self):
        assert HyperParams.from_tuple(TINY_HYPER.as_tuple()) == TINY_HYPER

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            HyperParams(glimpses=0)


class TestModelParams:
    def test_missing_tensor(self, tiny_params):
        tensors = dict(tiny_params.tensors)
        del tensors["att_p"]

        with pytest.raises(ShapeMismatchError, match="att_p"):
            ModelParams(hyper=TINY_HYPER, tensors=tensors)

    def test_wrong_shape(self, tiny_params):
        with pytest.raises(ShapeMismatchError, match="enc_u"):
            tiny_params.replace({"enc_u": np.zeros((2, 2))})

    def test_names_follow_declared_order(self, tiny_params):
        assert tiny_params.names() == list(param_shapes(TINY_HYPER))


class TestForwardShapes:
    def test_named_node_shapes(self, tiny_trace):
        h = TINY_HYPER

        assert tiny_trace.value(tiny_trace.q_embeds).shape == (4, h.embed_dim)
        assert tiny_trace.value(tiny_trace.q_vec).shape == (h.question_dim,)
        assert tiny_trace.value(tiny_trace.f_feat).shape == (h.positions, h.visual_channels)
        assert tiny_trace.value(tiny_trace.alpha).shape == (h.glimpses, h.positions)
        assert tiny_trace.value(tiny_trace.v_hat).shape == (h.glimpses * h.visual_channels,)
        assert tiny_trace.value(tiny_trace.f_joint).shape == (h.joint_dim,)
        assert tiny_trace.probs.shape == (h.answer_count,)

    def test_attention_rows_are_distributions(self, tiny_trace):
        alpha = tiny_trace.value(tiny_trace.alpha)

        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((alpha > 0) & (alpha < 1))

    def test_answer_is_argmax(self, tiny_trace):
        np.testing.assert_allclose(tiny_trace.probs.sum(), 1.0, atol=1e-9)
        assert tiny_trace.answer == int(np.argmax(tiny_trace.probs))

    def test_joint_is_elementwise_product(self, tiny_trace):
        q = tiny_trace.value(tiny_trace.q_joint)
        v = tiny_trace.value(tiny_trace.v_joint)

        np.testing.assert_array_equal(tiny_trace.value(tiny_trace.f_joint), q * v)
        assert np.all(np.abs(q) < 1) and np.all(np.abs(v) < 1)

    def test_features_are_non_negative(self, tiny_trace):
        assert np.all(tiny_trace.value(tiny_trace.f_feat) >= 0)


class TestForwardSemantics:
    def test_deterministic(self, tiny_params, tiny_image, tiny_question):
        first = forward(tiny_params, tiny_image, tiny_question)
        second = forward(tiny_params, tiny_image, tiny_question)

        assert first.probs.tobytes() == second.probs.tobytes()

    def test_attention_matches_closed_form(self, tiny_params, tiny_trace):
        p = tiny_params
        q = tiny_trace.value(tiny_trace.q_vec)
        feats = tiny_trace.value(tiny_trace.f_feat)

        q_proj = np.tanh(q @ p["att_uq"] + p["att_uq_b"])
        f_proj = np.tanh(feats @ p["att_vf"] + p["att_vf_b"])
        logits = ((q_proj[None, :] * f_proj) @ p["att_p"] + p["att_p_b"]).T

        np.testing.assert_allclose(tiny_trace.value(tiny_trace.alpha_logits), logits, atol=1e-12)

    def test_attended_vector_concatenates_glimpses(self, tiny_trace):
        alpha = tiny_trace.value(tiny_trace.alpha)
        feats = tiny_trace.value(tiny_trace.f_feat)

        expected = np.concatenate([alpha[g] @ feats for g in range(alpha.shape[0])])

        np.testing.assert_allclose(tiny_trace.value(tiny_trace.v_hat), expected, atol=1e-12)

    def test_question_encoder_recurrence(self, tiny_params, tiny_trace, tiny_question):
        p = tiny_params
        hidden = np.zeros(TINY_HYPER.question_dim)
        for token in tiny_question:
            hidden = np.tanh(p["embedding"][token] @ p["enc_w"] + hidden @ p["enc_u"] + p["enc_b"])

        np.testing.assert_allclose(tiny_trace.value(tiny_trace.q_vec), hidden, atol=1e-12)

    def test_unused_embedding_rows_do_not_matter(self, tiny_params, tiny_image, tiny_question):
        table = np.array(tiny_params["embedding"])
        table[9] += 10.0
        changed = tiny_params.replace({"embedding": table})

        before = forward(tiny_params, tiny_image, tiny_question).probs
        after = forward(changed, tiny_image, tiny_question).probs

        assert before.tobytes() == after.tobytes()

    def test_wider_model_still_runs(self, tiny_image):
        hyper = TINY_HYPER.model_copy(update={"glimpses": 3, "joint_dim": 9})
        trace = forward(make_params(hyper, seed=5), tiny_image, [2, 3])

        assert trace.value(trace.alpha).shape == (3, hyper.positions)


class TestForwardErrors:
    def test_empty_question(self, tiny_params, tiny_image):
        with pytest.raises(EmptyQuestionError):
            forward(tiny_params, tiny_image, [])

    def test_question_too_long(self, tiny_params, tiny_image):
        with pytest.raises(QuestionTooLongError):
            forward(tiny_params, tiny_image, [1] * (TINY_HYPER.max_tokens + 1))

    def test_token_out_of_range(self, tiny_params, tiny_image):
        with pytest.raises(TokenOutOfRangeError):
            forward(tiny_params, tiny_image, [1, TINY_HYPER.vocab_size])

    def test_wrong_image_size(self, tiny_params):
        with pytest.raises(ShapeMismatchError):
            forward(tiny_params, np.zeros((3, 12, 12)), [1, 2])
