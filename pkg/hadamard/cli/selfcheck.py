"""Built-in verification suite run by ``hadamard selfcheck``.

Every check is deterministic: instances are drawn from numpy generators seeded by the
trial index.
"""

from collections.abc import Callable

import numpy as np

from hadamard.autodiff import ops
from hadamard.autodiff.gradcheck import (
    Objective,
    evaluate_objective,
    grad_check,
    min_relu_margin,
    numeric_gradient,
    relative_error,
    roundoff_floor,
)
from hadamard.autodiff.tape import NodeId, Tape
from hadamard.core.enums import CheckStatus, GradMode
from hadamard.core.logging import get_logger
from hadamard.core.metrics import selfcheck_checks_total
from hadamard.domain.model.hyper import HyperParams
from hadamard.domain.model.mlb import ForwardTrace, MLBGraph, forward
from hadamard.domain.model.params import ModelParams, param_shapes
from hadamard.domain.services.explainer import textual_explanation, visual_explanation
from hadamard.domain.services.postprocess import normalize_pixels, token_scores
from hadamard.infrastructure.storage.checkpoint import decode_checkpoint, encode_checkpoint
from hadamard.schemas.report import CheckResult

logger = get_logger(__name__)

EXACT_TOLERANCE = 1e-9
# ReLU inputs closer to zero than this make a finite difference straddle the kink
KINK_MARGIN = 1e-4
MAX_REDRAWS = 50
# saturates tanh to exactly 1.0 in float64
SATURATING_BIAS = 50.0

CHECK_HYPER = HyperParams(
    question_dim=4,
    joint_dim=6,
    visual_channels=4,
    glimpses=2,
    lattice=2,
    embed_dim=3,
    max_tokens=4,
    vocab_size=8,
    answer_count=5,
)
# parameters whose gradient path is ReLU-free, checked in rotation
SMOOTH_PARAMS = ("embedding", "enc_u", "att_vf", "att_p", "joint_vv", "out_p")


def random_params(hyper: HyperParams, rng: np.random.Generator, scale: float = 0.5) -> ModelParams:
    """Every tensor random, biases and the output projection included."""
    tensors = {name: rng.normal(0.0, scale, shape) for name, shape in param_shapes(hyper).items()}
    return ModelParams(hyper=hyper, tensors=tensors)


def random_question(hyper: HyperParams, rng: np.random.Generator) -> list[int]:
    length = int(rng.integers(2, hyper.max_tokens + 1))
    return [int(t) for t in rng.integers(0, hyper.vocab_size, length)]


def random_image(hyper: HyperParams, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 1.0, (3, hyper.image_size, hyper.image_size))


def weighted_sum(tape: Tape, node: NodeId, rng: np.random.Generator) -> NodeId:
    weights = ops.const_node(tape, rng.uniform(-1.0, 1.0, tape.value(node).shape))
    return ops.sum_all(tape, ops.hadamard(tape, node, weights))


def half_squared_distance(tape: Tape, node: NodeId, target: np.ndarray) -> NodeId:
    residual = ops.add(tape, node, ops.const_node(tape, -target))
    half = ops.const_node(tape, np.full(target.shape, 0.5))
    return ops.sum_all(tape, ops.hadamard(tape, ops.hadamard(tape, residual, residual), half))


def away_from_zero(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(0.1, 1.0, shape)


def primitive_objectives(seed: int) -> dict[str, tuple[Objective, np.ndarray]]:
    """one scalar objective per differentiable primitive, with its input point."""
    rng = np.random.default_rng(seed)

    def const(shape: tuple[int, ...]) -> Callable[[Tape], NodeId]:
        value = rng.normal(0.0, 1.0, shape)
        return lambda tape: ops.const_node(tape, value)

    def with_weights(build: Callable[[Tape, NodeId], NodeId]) -> Objective:
        weight_seed = int(rng.integers(2**32))
        return lambda tape, x: weighted_sum(
            tape, build(tape, x), np.random.default_rng(weight_seed)
        )

    matrix, vector, operand = const((4, 2)), const((4, 3)), const((3, 4))
    kernel = const((3, 2, 3, 3))
    image = const((2, 5, 5))
    ids = [0, 2, 2, 4]
    return {
        "matmul": (with_weights(lambda t, x: ops.matmul(t, x, matrix(t))), rng.normal(size=(3, 4))),
        "matmul_vector": (
            with_weights(lambda t, x: ops.matmul(t, x, vector(t))),
            rng.normal(size=4),
        ),
        "hadamard": (
            with_weights(lambda t, x: ops.hadamard(t, x, operand(t))),
            rng.normal(size=(3, 4)),
        ),
        "add_bias": (with_weights(lambda t, x: ops.add(t, operand(t), x)), rng.normal(size=4)),
        "tanh": (with_weights(ops.tanh_op), rng.normal(size=(3, 4))),
        "relu": (with_weights(ops.relu_op), away_from_zero(rng, (3, 4))),
        "softmax_rows": (with_weights(ops.softmax_rows), rng.normal(size=(2, 5))),
        "log_softmax_rows": (with_weights(ops.log_softmax_rows), rng.normal(size=(2, 5))),
        "conv2d_input": (
            with_weights(lambda t, x: ops.conv2d(t, x, kernel(t), stride=2, pad=1)),
            rng.normal(size=(2, 5, 5)),
        ),
        "conv2d_kernel": (
            with_weights(lambda t, x: ops.conv2d(t, image(t), x, stride=1, pad=1)),
            rng.normal(size=(3, 2, 3, 3)),
        ),
        "embedding": (
            with_weights(lambda t, x: ops.embedding_lookup(t, x, ids)),
            rng.normal(size=(5, 3)),
        ),
        "replicate_rows": (
            with_weights(lambda t, x: ops.replicate_rows(t, x, 3)),
            rng.normal(size=4),
        ),
        "reshape_transpose": (
            with_weights(lambda t, x: ops.transpose(t, ops.reshape(t, x, (4, 3)))),
            rng.normal(size=(2, 6)),
        ),
        "take_row": (with_weights(lambda t, x: ops.take_row(t, x, 1)), rng.normal(size=(3, 4))),
    }


def check_primitive_gradients(trials: int, step: float, tolerance: float) -> CheckResult:
    worst, worst_name = 0.0, ""
    for seed in range(trials):
        for name, (objective, x) in primitive_objectives(seed).items():
            error = grad_check(objective, x, step, tolerance)
            if error > worst:
                worst, worst_name = error, f"{name} (seed {seed})"
    detail = f"max rel err {worst:.2e} {worst_name}"
    return _result("primitive_gradients", worst < tolerance, detail)


def log_prob_objective(
    params: ModelParams, image: np.ndarray, token_ids: list[int], name: str, target: int
) -> Objective:
    onehot = np.zeros(params.hyper.answer_count)
    onehot[target] = 1.0

    def objective(tape: Tape, x: NodeId) -> NodeId:
        trace = forward(params, image, token_ids, tape=tape, overrides={name: x})
        selector = ops.const_node(tape, onehot)
        return ops.sum_all(tape, ops.hadamard(tape, trace.log_probs, selector))

    return objective


def check_model_gradient(trials: int, step: float, tolerance: float) -> CheckResult:
    worst, worst_name = 0.0, ""
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        params = random_params(CHECK_HYPER, rng)
        name = SMOOTH_PARAMS[seed % len(SMOOTH_PARAMS)]
        objective = log_prob_objective(
            params,
            random_image(CHECK_HYPER, rng),
            random_question(CHECK_HYPER, rng),
            name,
            int(rng.integers(CHECK_HYPER.answer_count)),
        )
        error = grad_check(objective, params[name], step, tolerance)
        if error > worst:
            worst, worst_name = error, f"{name} (seed {seed})"
    detail = f"max rel err {worst:.2e} {worst_name}"
    return _result("model_log_prob_gradient", worst < tolerance, detail)


def brute_force_logits(
    params: ModelParams, q_vec: np.ndarray, features: np.ndarray
) -> np.ndarray:
    """The low-rank bilinear attention score, summed term by term over the rank."""
    hyper = params.hyper
    q_proj = np.tanh(q_vec @ params["att_uq"] + params["att_uq_b"])
    logits = np.zeros((hyper.glimpses, hyper.positions))
    for g in range(hyper.glimpses):
        for s in range(hyper.positions):
            f_proj = np.tanh(features[s] @ params["att_vf"] + params["att_vf_b"])
            total = params["att_p_b"][g]
            for k in range(hyper.joint_dim):
                total += params["att_p"][k, g] * q_proj[k] * f_proj[k]
            logits[g, s] = total
    return logits


def check_attention_oracle(trials: int) -> CheckResult:
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        hyper = HyperParams(
            question_dim=int(rng.integers(1, 6)),
            joint_dim=int(rng.integers(1, 9)),
            visual_channels=int(rng.integers(1, 6)),
            glimpses=int(rng.integers(1, 3)),
            lattice=int(rng.integers(1, 5)),
        )
        params = random_params(hyper, rng, scale=1.0)
        q_vec = rng.normal(size=hyper.question_dim)
        features = rng.normal(size=(hyper.positions, hyper.visual_channels))

        graph = MLBGraph(params)
        logits = graph.attention_logits(
            ops.const_node(graph.tape, q_vec), ops.const_node(graph.tape, features)
        )
        gap = np.max(np.abs(graph.tape.value(logits) - brute_force_logits(params, q_vec, features)))
        worst = max(worst, float(gap))
    detail = f"max abs diff {worst:.2e}"
    return _result("attention_low_rank_oracle", worst <= EXACT_TOLERANCE, detail)


def _saturated(params: ModelParams, weight: str) -> ModelParams:
    return params.replace(
        {
            weight: np.zeros(params[weight].shape),
            f"{weight}_b": np.full(params[f"{weight}_b"].shape, SATURATING_BIAS),
        }
    )


def check_zero_seed_laws(trials: int) -> CheckResult:
    failures = []
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        params = random_params(CHECK_HYPER, rng)
        image, tokens = random_image(CHECK_HYPER, rng), random_question(CHECK_HYPER, rng)
        text_saturated = forward(_saturated(params, "joint_wq"), image, tokens)
        vision_saturated = forward(_saturated(params, "joint_vv"), image, tokens)
        for mode in GradMode:
            if np.any(visual_explanation(text_saturated, mode) != 0.0):
                failures.append(f"visual/{mode.value}/seed {seed}")
            if np.any(textual_explanation(vision_saturated, mode) != 0.0):
                failures.append(f"textual/{mode.value}/seed {seed}")
    detail = "Q=1 and V=1 give zero gradients" if not failures else ", ".join(failures[:3])
    return _result("zero_seed_laws", not failures, detail)


def frozen_text_objective(params: ModelParams, trace: ForwardTrace) -> Objective:
    frozen, v_hat = trace.value(trace.f_joint), trace.value(trace.v_hat)

    def objective(tape: Tape, x: NodeId) -> NodeId:
        graph = MLBGraph(params, tape)
        q_joint, _, _ = graph.joint(graph.encode_embedded(x), ops.const_node(tape, v_hat))
        return half_squared_distance(tape, q_joint, frozen)

    return objective


def frozen_visual_objective(params: ModelParams, trace: ForwardTrace) -> Objective:
    frozen, q_vec = trace.value(trace.f_joint), trace.value(trace.q_vec)

    def objective(tape: Tape, x: NodeId) -> NodeId:
        graph = MLBGraph(params, tape)
        question = ops.const_node(tape, q_vec)
        features = graph.extract_features(x)
        v_hat = graph.attend(graph.attention(question, features), features)
        _, v_joint, _ = graph.joint(question, v_hat)
        return half_squared_distance(tape, v_joint, frozen)

    return objective


def _trace_clear_of_kinks(seed: int) -> tuple[ModelParams, ForwardTrace]:
    rng = np.random.default_rng(seed)
    params = random_params(CHECK_HYPER, rng)
    tokens = random_question(CHECK_HYPER, rng)
    for _ in range(MAX_REDRAWS):
        trace = forward(params, random_image(CHECK_HYPER, rng), tokens)
        if min_relu_margin(trace.tape) > KINK_MARGIN:
            break
    return params, trace


def check_explanation_gradients(trials: int, step: float, tolerance: float) -> CheckResult:
    worst, worst_name = 0.0, ""
    for seed in range(trials):
        params, trace = _trace_clear_of_kinks(seed)
        if min_relu_margin(trace.tape) <= KINK_MARGIN:
            continue

        checks = (
            (
                "textual",
                textual_explanation(trace, GradMode.STANDARD),
                frozen_text_objective(params, trace),
                trace.value(trace.q_embeds),
            ),
            (
                "visual",
                visual_explanation(trace, GradMode.STANDARD),
                frozen_visual_objective(params, trace),
                trace.value(trace.image),
            ),
        )
        for name, analytic, objective, point in checks:
            floor = roundoff_floor(evaluate_objective(objective, point), step, tolerance)
            error = relative_error(analytic, numeric_gradient(objective, point, step), floor)
            if error > worst:
                worst, worst_name = error, f"{name} (seed {seed})"
    return _result(
        "explanation_finite_difference", worst < tolerance, f"max rel err {worst:.2e} {worst_name}"
    )


def check_text_path_mode_invariance(trials: int) -> CheckResult:
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        params = random_params(CHECK_HYPER, rng)
        trace = forward(params, random_image(CHECK_HYPER, rng), random_question(CHECK_HYPER, rng))
        guided = textual_explanation(trace, GradMode.GUIDED)
        standard = textual_explanation(trace, GradMode.STANDARD)
        if not np.array_equal(guided, standard):
            return _result("text_path_mode_invariance", False, f"modes differ at seed {seed}")
    return _result("text_path_mode_invariance", True, "guided == standard bitwise")


def check_standard_scores(trials: int) -> CheckResult:
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        raw = rng.normal(size=(3, 6, 6))
        normalized = normalize_pixels(raw)
        flat = normalized.reshape(3, -1)
        scale, shift = float(rng.uniform(0.1, 10.0)), float(rng.normal())
        affine = normalize_pixels(scale * raw + shift)

        grads = rng.normal(size=(int(rng.integers(2, 8)), 4))
        z = token_scores(grads).z
        scaled_z = token_scores(scale * grads).z
        worst = max(
            worst,
            float(np.max(np.abs(flat.mean(axis=1)))),
            float(np.max(np.abs(flat.std(axis=1) - 1.0))),
            float(np.max(np.abs(affine - normalized))),
            abs(float(z.mean())),
            abs(float(z.std()) - 1.0),
            float(np.max(np.abs(scaled_z - z))),
        )
    detail = f"max deviation {worst:.2e}"
    return _result("standard_score_properties", worst < EXACT_TOLERANCE, detail)


def check_structural_invariants(trials: int) -> CheckResult:
    hyper = CHECK_HYPER
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        params = random_params(hyper, rng)
        trace = forward(params, random_image(hyper, rng), random_question(hyper, rng))
        alpha = trace.value(trace.alpha)
        q, v, f = (trace.value(n) for n in (trace.q_joint, trace.v_joint, trace.f_joint))
        problems = []
        if np.max(np.abs(alpha.sum(axis=1) - 1.0)) > EXACT_TOLERANCE:
            problems.append("alpha rows do not sum to 1")
        if not q.shape == v.shape == f.shape:
            problems.append("joint shapes differ")
        if np.any(np.abs(f) > np.minimum(np.abs(q), np.abs(v))):
            problems.append("|F| exceeds min(|Q|, |V|)")
        if trace.value(trace.v_hat).shape != (hyper.glimpses * hyper.visual_channels,):
            problems.append("attended vector has the wrong length")
        if problems:
            return _result("structural_invariants", False, f"seed {seed}: {problems[0]}")
    return _result("structural_invariants", True, "alpha, joint and attended shapes hold")


def check_checkpoint_roundtrip() -> CheckResult:
    params = random_params(CHECK_HYPER, np.random.default_rng(0))
    restored = decode_checkpoint(encode_checkpoint(params))
    identical = restored.hyper == params.hyper and all(
        restored[name].tobytes() == params[name].tobytes() for name in params.names()
    )
    return _result("checkpoint_roundtrip", identical, "bitwise" if identical else "tensors differ")


def _result(name: str, passed: bool, detail: str) -> CheckResult:
    status = CheckStatus.PASS if passed else CheckStatus.FAIL
    selfcheck_checks_total.labels(status=status.value).inc()
    if not passed:
        logger.warning("selfcheck_failed", check=name, detail=detail)
    return CheckResult(name=name, status=status, detail=detail)


def run_selfcheck(trials: int, step: float, tolerance: float) -> list[CheckResult]:
    # full-model objectives are two orders of magnitude costlier than primitive ones
    model_trials = max(1, trials // 10)
    return [
        check_primitive_gradients(trials, step, tolerance),
        check_model_gradient(trials, step, tolerance),
        check_attention_oracle(trials),
        check_zero_seed_laws(model_trials),
        check_explanation_gradients(model_trials, step, tolerance),
        check_text_path_mode_invariance(model_trials),
        check_standard_scores(trials),
        check_structural_invariants(model_trials),
        check_checkpoint_roundtrip(),
    ]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  detail"]
    lines += [f"{r.name:<{width}}  {r.status.value:<6}  {r.detail}" for r in results]
    return "\n".join(lines)
