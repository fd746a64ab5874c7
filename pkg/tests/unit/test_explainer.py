import dataclasses

import numpy as np
import pytest

from hadamard.autodiff.ops import backward
from hadamard.core.enums import GradMode
from hadamard.domain.exceptions import ShapeMismatchError, TraceIncompleteError
from hadamard.domain.model.mlb import forward
from hadamard.domain.services.explainer import (
    alpha_maps,
    attention_comparison,
    explain,
    legacy_layer_loss,
    textual_explanation,
    visual_explanation,
)
from hadamard.domain.services.postprocess import salient_mask
from tests.conftest import TINY_HYPER

SATURATING_BIAS = 50.0


def saturate(params, weight: str):
    """Push one joint input to exactly 1 so that the joint output equals the other input."""
    return params.replace(
        {
            weight: np.zeros_like(params[weight]),
            f"{weight}_b": np.full(TINY_HYPER.joint_dim, SATURATING_BIAS),
        }
    )


class TestLegacyLoss:
    def test_reference_value(self):
        loss, seed = legacy_layer_loss(np.array([1.0, 0.0]), np.array([0.0, 0.0]))

        assert loss == 0.5
        np.testing.assert_array_equal(seed, [1.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            legacy_layer_loss(np.ones(2), np.ones(3))


class TestVisualExplanation:
    def test_matches_image_shape(self, tiny_trace):
        grad = visual_explanation(tiny_trace)

        assert grad.shape == tiny_trace.value(tiny_trace.image).shape

    def test_equals_backward_from_residual_seed(self, tiny_trace):
        seed = tiny_trace.value(tiny_trace.v_joint) - tiny_trace.value(tiny_trace.f_joint)
        expected = backward(tiny_trace.tape, tiny_trace.v_joint, seed, GradMode.STANDARD)

        np.testing.assert_array_equal(
            visual_explanation(tiny_trace, GradMode.STANDARD), expected[tiny_trace.image]
        )

    def test_vanishes_when_joint_equals_visual_input(self, tiny_params, tiny_image, tiny_question):
        trace = forward(saturate(tiny_params, "joint_wq"), tiny_image, tiny_question)

        assert np.array_equal(trace.value(trace.q_joint), np.ones(TINY_HYPER.joint_dim))
        for mode in GradMode:
            assert not np.any(visual_explanation(trace, mode))

    def test_unfrozen_joint_scales_seed(self, tiny_trace):
        q = tiny_trace.value(tiny_trace.q_joint)
        v = tiny_trace.value(tiny_trace.v_joint)
        seed = (v - q * v) * (1.0 - q)
        expected = backward(tiny_trace.tape, tiny_trace.v_joint, seed, GradMode.GUIDED)

        np.testing.assert_allclose(
            visual_explanation(tiny_trace, GradMode.GUIDED, freeze_joint=False),
            expected[tiny_trace.image],
            atol=1e-15,
        )


class TestTextualExplanation:
    def test_matches_embedded_question_shape(self, tiny_trace, tiny_question):
        grad = textual_explanation(tiny_trace)

        assert grad.shape == (len(tiny_question), TINY_HYPER.embed_dim)

    def test_modes_agree_on_relu_free_path(self, tiny_trace):
        guided = textual_explanation(tiny_trace, GradMode.GUIDED)
        standard = textual_explanation(tiny_trace, GradMode.STANDARD)

        np.testing.assert_array_equal(guided, standard)

    def test_vanishes_when_joint_equals_textual_input(self, tiny_params, tiny_image, tiny_question):
        trace = forward(saturate(tiny_params, "joint_vv"), tiny_image, tiny_question)

        assert not np.any(textual_explanation(trace))


class TestTraceValidation:
    def test_missing_node(self, tiny_trace):
        broken = dataclasses.replace(tiny_trace, alpha=len(tiny_trace.tape) + 5)

        with pytest.raises(TraceIncompleteError):
            visual_explanation(broken)


class TestExplain:
    def test_bundles_both_explanations(self, tiny_trace, tiny_question):
        result = explain(tiny_trace, GradMode.GUIDED)

        assert result.mode is GradMode.GUIDED
        assert result.visual.heatmap.shape == (TINY_HYPER.image_size, TINY_HYPER.image_size)
        assert result.tokens is not None
        assert result.tokens.z.shape == (len(tiny_question),)
        assert -1.0 <= result.comparison.agreement <= 1.0

    def test_single_token_has_no_scores(self, tiny_params, tiny_image):
        trace = forward(tiny_params, tiny_image, [3])

        assert explain(trace).tokens is None

    def test_alpha_maps_on_lattice(self, tiny_trace):
        maps = alpha_maps(tiny_trace)

        assert maps.shape == (TINY_HYPER.glimpses, TINY_HYPER.lattice, TINY_HYPER.lattice)

    def test_attention_comparison_uses_guided_heatmap(self, tiny_trace):
        comparison = attention_comparison(tiny_trace)

        np.testing.assert_array_equal(comparison.heatmap, explain(tiny_trace).visual.heatmap)

    def test_salient_pixels_follow_heatmap(self, tiny_trace):
        visual = explain(tiny_trace).visual

        np.testing.assert_array_equal(visual.salient, salient_mask(visual.heatmap))

    def test_comparison_matches_standalone(self, tiny_trace):
        bundled = explain(tiny_trace, GradMode.STANDARD).comparison
        standalone = attention_comparison(tiny_trace, GradMode.STANDARD)

        np.testing.assert_array_equal(bundled.alpha_maps, standalone.alpha_maps)
        assert bundled.agreement == standalone.agreement


class TestSeedScaling:
    def residual(self, trace):
        return trace.value(trace.v_joint) - trace.value(trace.f_joint)

    def test_standard_mode_doubles_exactly(self, tiny_trace):
        seed = self.residual(tiny_trace)

        once = backward(tiny_trace.tape, tiny_trace.v_joint, seed, GradMode.STANDARD)
        twice = backward(tiny_trace.tape, tiny_trace.v_joint, 2.0 * seed, GradMode.STANDARD)

        np.testing.assert_array_equal(twice[tiny_trace.image], 2.0 * once[tiny_trace.image])

    @pytest.mark.parametrize("scale", [0.25, 3.0, 17.5])
    def test_guided_mode_is_positively_homogeneous(self, tiny_trace, scale):
        seed = self.residual(tiny_trace)

        base = backward(tiny_trace.tape, tiny_trace.v_joint, seed, GradMode.GUIDED)
        scaled = backward(tiny_trace.tape, tiny_trace.v_joint, scale * seed, GradMode.GUIDED)

        expected = scale * base[tiny_trace.image]
        # masks are unchanged; only rounding of the scaled sums differs
        tolerance = 1e-12 * np.max(np.abs(expected))
        np.testing.assert_allclose(scaled[tiny_trace.image], expected, rtol=0, atol=tolerance)

