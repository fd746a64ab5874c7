import numpy as np
import pytest

from hadamard.autodiff.rules import RULES, ReluRule
from hadamard.cli.selfcheck import (
    CHECK_HYPER,
    brute_force_logits,
    check_attention_oracle,
    check_checkpoint_roundtrip,
    check_explanation_gradients,
    check_model_gradient,
    check_primitive_gradients,
    check_standard_scores,
    check_structural_invariants,
    check_text_path_mode_invariance,
    check_zero_seed_laws,
    format_table,
    random_params,
    run_selfcheck,
)
from hadamard.config import settings
from hadamard.core.enums import CheckStatus, GradMode, OpKind
from hadamard.schemas.report import CheckResult

STEP = 1e-5
TOLERANCE = 1e-4


class SignFlippedRelu(ReluRule):
    def vjp(self, grad_out, inputs, output, attrs, mode):
        (grad,) = super().vjp(grad_out, inputs, output, attrs, mode)
        return (-grad,)


class GuidedAlwaysRelu(ReluRule):
    def vjp(self, grad_out, inputs, output, attrs, mode):
        return super().vjp(grad_out, inputs, output, attrs, GradMode.GUIDED)


class TestChecksPass:
    def test_primitive_gradients(self):
        assert check_primitive_gradients(3, STEP, TOLERANCE).passed

    def test_model_gradient(self):
        assert check_model_gradient(6, STEP, TOLERANCE).passed

    def test_attention_oracle(self):
        assert check_attention_oracle(5).passed

    def test_zero_seed_laws(self):
        assert check_zero_seed_laws(2).passed

    def test_explanation_gradients(self):
        assert check_explanation_gradients(2, STEP, TOLERANCE).passed

    def test_text_path_mode_invariance(self):
        assert check_text_path_mode_invariance(2).passed

    def test_standard_scores(self):
        assert check_standard_scores(5).passed

    def test_structural_invariants(self):
        assert check_structural_invariants(3).passed

    def test_checkpoint_roundtrip(self):
        assert check_checkpoint_roundtrip().passed


class TestMutations:
    def test_sign_flipped_relu_fails_primitive_check(self, mocker):
        mocker.patch.dict(RULES, {OpKind.RELU: SignFlippedRelu()})

        result = check_primitive_gradients(1, STEP, TOLERANCE)

        assert result.status is CheckStatus.FAIL
        assert "relu" in result.detail

    def test_guided_masking_in_standard_mode_fails(self, mocker):
        mocker.patch.dict(RULES, {OpKind.RELU: GuidedAlwaysRelu()})

        assert not check_primitive_gradients(2, STEP, TOLERANCE).passed

    def test_full_suite_reports_failure(self, mocker):
        mocker.patch.dict(RULES, {OpKind.RELU: SignFlippedRelu()})

        results = run_selfcheck(trials=1, step=STEP, tolerance=TOLERANCE)

        assert not all(r.passed for r in results)


class TestSuite:
    def test_runs_every_check(self):
        results = run_selfcheck(trials=1, step=STEP, tolerance=TOLERANCE)

        assert len(results) >= 6
        assert len({r.name for r in results}) == len(results)
        assert all(r.passed for r in results), format_table(results)

    @pytest.mark.slow
    def test_default_trial_count_passes(self):
        results = run_selfcheck(
            settings.selfcheck_trials, settings.gradcheck_step, settings.gradcheck_tolerance
        )

        assert all(r.passed for r in results), format_table(results)

    def test_brute_force_with_zero_inputs(self):
        params = random_params(CHECK_HYPER, np.random.default_rng(0))
        q_vec = np.zeros(CHECK_HYPER.question_dim)
        features = np.zeros((CHECK_HYPER.positions, CHECK_HYPER.visual_channels))

        logits = brute_force_logits(params, q_vec, features)

        # zero inputs leave only the biases inside each tanh, so every position agrees
        q_proj = np.tanh(params["att_uq_b"])
        f_proj = np.tanh(params["att_vf_b"])
        column = (q_proj * f_proj) @ params["att_p"] + params["att_p_b"]
        expected = np.tile(column[:, None], (1, CHECK_HYPER.positions))
        np.testing.assert_allclose(logits, expected, atol=1e-12)

    def test_table_layout(self):
        table = format_table(
            [
                CheckResult(name="a", status=CheckStatus.PASS, detail="fine"),
                CheckResult(name="longer", status=CheckStatus.FAIL, detail="broken"),
            ]
        )

        lines = table.splitlines()
        assert lines[0].startswith("check ")
        assert lines[1].split() == ["a", "PASS", "fine"]
        assert lines[2].split() == ["longer", "FAIL", "broken"]

    @pytest.mark.parametrize("status,passed", [(CheckStatus.PASS, True), (CheckStatus.FAIL, False)])
    def test_passed_property(self, status, passed):
        assert CheckResult(name="x", status=status).passed is passed
