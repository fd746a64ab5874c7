import numpy as np
import pytest

from hadamard.autodiff import ops
from hadamard.autodiff.gradcheck import (
    grad_check,
    min_relu_margin,
    relative_error,
    roundoff_floor,
)
from hadamard.autodiff.rules import RULES, ReluRule
from hadamard.autodiff.tape import Tape
from hadamard.core.enums import GradMode, OpKind
from hadamard.domain.exceptions import ShapeMismatchError


def relu_graph(x):
    tape = Tape()
    leaf = ops.const_node(tape, x)
    out = ops.relu_op(tape, leaf)
    return tape, leaf, out


class TestReluModes:
    def test_guided_masks_negative_upstream(self):
        tape, leaf, out = relu_graph([1.0, 2.0])

        grads = ops.backward(tape, out, np.array([-1.0, 1.0]), GradMode.GUIDED)

        np.testing.assert_array_equal(grads[leaf], [0.0, 1.0])

    def test_standard_passes_negative_upstream(self):
        tape, leaf, out = relu_graph([1.0, 2.0])

        grads = ops.backward(tape, out, np.array([-1.0, 1.0]), GradMode.STANDARD)

        np.testing.assert_array_equal(grads[leaf], [-1.0, 1.0])

    def test_zero_input_routes_nothing(self):
        tape, leaf, out = relu_graph([0.0, -3.0, 4.0])

        grads = ops.backward(tape, out, np.ones(3), GradMode.STANDARD)

        np.testing.assert_array_equal(grads[leaf], [0.0, 0.0, 1.0])

    def test_modes_agree_without_relu(self, rng):
        tape = Tape()
        leaf = ops.const_node(tape, rng.normal(size=(2, 3)))
        weights = ops.const_node(tape, rng.normal(size=(3, 4)))
        out = ops.softmax_rows(tape, ops.tanh_op(tape, ops.matmul(tape, leaf, weights)))
        seed = rng.normal(size=(2, 4))

        standard = ops.backward(tape, out, seed, GradMode.STANDARD)
        guided = ops.backward(tape, out, seed, GradMode.GUIDED)

        np.testing.assert_array_equal(standard[leaf], guided[leaf])


class TestBackward:
    def test_seed_shape_must_match(self):
        tape, _, out = relu_graph([1.0, 2.0])

        with pytest.raises(ShapeMismatchError):
            ops.backward(tape, out, np.ones(3))

    def test_linear_in_seed(self, rng):
        tape = Tape()
        leaf = ops.const_node(tape, rng.normal(size=(3, 4)) + 0.5)
        hidden = ops.relu_op(tape, ops.matmul(tape, leaf, ops.const_node(tape, np.eye(4))))
        out = ops.tanh_op(tape, hidden)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))

        combined = ops.backward(tape, out, 2.0 * a - 3.0 * b)[leaf]
        separate = 2.0 * ops.backward(tape, out, a)[leaf] - 3.0 * ops.backward(tape, out, b)[leaf]

        np.testing.assert_allclose(combined, separate, atol=1e-12)

    def test_zero_seed_gives_zero_gradient(self, rng):
        tape = Tape()
        leaf = ops.const_node(tape, rng.normal(size=4))
        out = ops.tanh_op(tape, leaf)

        grads = ops.backward(tape, out, np.zeros(4), GradMode.GUIDED)

        assert not np.any(grads[leaf])

    def test_detach_blocks_gradient(self, rng):
        tape = Tape()
        leaf = ops.const_node(tape, rng.normal(size=3))
        out = ops.hadamard(tape, leaf, ops.detach(tape, leaf))

        grads = ops.backward(tape, out, np.ones(3))

        np.testing.assert_allclose(grads[leaf], tape.value(leaf))

    def test_shared_node_accumulates(self):
        tape = Tape()
        leaf = ops.const_node(tape, [3.0])
        out = ops.add(tape, leaf, ops.add(tape, leaf, leaf))

        grads = ops.backward(tape, out, np.ones(1))

        np.testing.assert_array_equal(grads[leaf], [3.0])

    def test_unreached_leaf_has_no_entry(self):
        tape = Tape()
        used = ops.const_node(tape, [1.0])
        unused = ops.const_node(tape, [2.0])
        out = ops.tanh_op(tape, used)

        grads = ops.backward(tape, out, np.ones(1))

        assert unused not in grads

    def test_embedding_scatters_repeated_ids(self):
        tape = Tape()
        table = ops.const_node(tape, np.zeros((3, 2)))
        out = ops.embedding_lookup(tape, table, [1, 1, 2])

        grads = ops.backward(tape, out, np.ones((3, 2)))

        np.testing.assert_array_equal(grads[table], [[0, 0], [2, 2], [1, 1]])

    def test_rules_are_looked_up_at_call_time(self, mocker):
        class ForwardOnlyRelu(ReluRule):
            def vjp(self, grad_out, inputs, output, attrs, mode):
                return (grad_out,)

        mocker.patch.dict(RULES, {OpKind.RELU: ForwardOnlyRelu()})
        tape, leaf, out = relu_graph([-1.0, 2.0])

        grads = ops.backward(tape, out, np.ones(2))

        np.testing.assert_array_equal(grads[leaf], [1.0, 1.0])


class TestGradCheck:
    @pytest.mark.parametrize(
        "objective",
        [
            lambda tape, x: ops.sum_all(tape, ops.tanh_op(tape, x)),
            lambda tape, x: ops.sum_all(tape, ops.hadamard(tape, x, x)),
            lambda tape, x: ops.sum_all(tape, ops.tanh_op(tape, ops.log_softmax_rows(tape, x))),
        ],
        ids=["tanh", "square", "log_softmax"],
    )
    def test_smooth_objectives_pass(self, objective, rng):
        assert grad_check(objective, rng.normal(size=(2, 3))) < 1e-5

    def test_conv_objective_passes(self, rng):
        kernel = rng.normal(size=(2, 2, 3, 3))

        def objective(tape, x):
            out = ops.conv2d(tape, x, ops.const_node(tape, kernel), stride=2, pad=1)
            return ops.sum_all(tape, ops.tanh_op(tape, out))

        assert grad_check(objective, rng.normal(size=(2, 5, 5))) < 1e-5

    def test_broken_relu_is_detected(self, mocker, rng):
        class SignFlippedRelu(ReluRule):
            def vjp(self, grad_out, inputs, output, attrs, mode):
                (grad,) = super().vjp(grad_out, inputs, output, attrs, mode)
                return (-grad,)

        mocker.patch.dict(RULES, {OpKind.RELU: SignFlippedRelu()})
        x = rng.uniform(0.5, 1.5, size=4)

        assert grad_check(lambda tape, leaf: ops.sum_all(tape, ops.relu_op(tape, leaf)), x) > 1.0

    def test_relative_error_uses_floor(self):
        assert relative_error(np.zeros(2), np.array([0.0, 1e-12])) == pytest.approx(1e-4)

    def test_roundoff_floor_scales_with_value_and_step(self):
        eps = np.finfo(np.float64).eps

        assert roundoff_floor(3.0, 1e-5, 1e-4) == pytest.approx(10 * eps * 3.0 / 1e-9)
        assert roundoff_floor(0.0, 1e-5, 1e-4) == roundoff_floor(1.0, 1e-5, 1e-4)
        assert roundoff_floor(0.0, 1.0, 1.0) == 1e-8

    def test_tolerance_skips_entries_lost_to_roundoff(self, rng):
        tiny = np.full(3, 1e-11)

        def objective(tape, x):
            scaled = ops.hadamard(tape, x, ops.const_node(tape, tiny))
            return ops.sum_all(tape, ops.add(tape, scaled, ops.const_node(tape, np.ones(3))))

        x = rng.normal(size=3)

        # f sits near 3, where one ulp over 2h already dwarfs the true 1e-11 slope
        assert grad_check(objective, x) > 1e-4
        assert grad_check(objective, x, tolerance=1e-4) < 1e-4

    def test_min_relu_margin(self):
        tape, _, _ = relu_graph([-0.25, 3.0, 0.5])

        assert min_relu_margin(tape) == 0.25

    def test_min_relu_margin_without_relu(self):
        assert min_relu_margin(Tape()) == float("inf")
