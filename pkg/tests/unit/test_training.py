import math

import numpy as np
import pytest
from structlog.contextvars import get_contextvars

from hadamard.core.enums import GradMode, QuestionKind
from hadamard.domain.exceptions import EmptyDatasetError, NonFiniteLossError
from hadamard.domain.services.localization import (
    SampleLocalization,
    attention_mass,
    localization_report,
    noun_function_gap,
    summarize,
    uniform_baseline,
)
from hadamard.domain.services.optim import Adam
from hadamard.domain.services.trainer import (
    TrainConfig,
    Trainer,
    _chunk_gradients,
    evaluate,
    glorot_bound,
    he_bound,
    init_params,
    sample_gradient,
    split_chunks,
    train,
)
from hadamard.schemas.training import EpochMetrics
from hadamard.synth.sample import Sample
from tests.conftest import TINY_HYPER

KINDS = (QuestionKind.COLOR_OF_SHAPE, QuestionKind.SHAPE_OF_COLOR, QuestionKind.COUNT)


def tiny_samples(count: int, seed: int = 3) -> list[Sample]:
    rng = np.random.default_rng(seed)
    size, lattice = TINY_HYPER.image_size, TINY_HYPER.lattice
    samples = []
    for index in range(count):
        mask = np.zeros((lattice, lattice), dtype=bool)
        kind = KINDS[index % len(KINDS)]
        if kind != QuestionKind.COUNT:
            mask[index % lattice, (index // lattice) % lattice] = True
        samples.append(
            Sample(
                image=rng.uniform(0.0, 1.0, (3, size, size)),
                token_ids=tuple(int(t) for t in rng.integers(0, TINY_HYPER.vocab_size, 4)),
                answer_id=index % TINY_HYPER.answer_count,
                relevance_mask=mask,
                kind=kind,
                noun_positions=(3,),
            )
        )
    return samples


class TestInit:
    def test_glorot_bounds(self):
        assert glorot_bound((3, 3)) == pytest.approx(1.0)
        assert glorot_bound((2, 1, 3, 3)) == pytest.approx(math.sqrt(6.0 / 27.0))

    def test_conv_kernels_use_he_bound(self):
        params = init_params(TINY_HYPER, seed=1)
        kernel = params["conv1_k"]

        assert he_bound(kernel.shape) == pytest.approx(math.sqrt(6.0 / 27.0))
        assert np.all(np.abs(kernel) <= he_bound(kernel.shape))
        # 432 uniform draws: some land outside the narrower Glorot range
        assert np.max(np.abs(kernel)) > glorot_bound(kernel.shape)

    def test_biases_and_output_start_at_zero(self):
        params = init_params(TINY_HYPER, seed=1)

        assert not np.any(params["enc_b"])
        assert not np.any(params["out_p"])
        bound = glorot_bound(params["att_vf"].shape)
        assert np.all(np.abs(params["att_vf"]) <= bound)
        assert np.any(params["att_vf"])

    def test_seeded(self):
        first, second = init_params(TINY_HYPER, 9), init_params(TINY_HYPER, 9)

        for name in first.names():
            assert first[name].tobytes() == second[name].tobytes()

    def test_initial_loss_is_uniform(self):
        params = init_params(TINY_HYPER, seed=1)
        (sample,) = tiny_samples(1)

        assert sample_gradient(params, sample).loss == pytest.approx(math.log(5), abs=1e-12)

    def test_initial_loss_with_eight_answers(self):
        hyper = TINY_HYPER.model_copy(update={"answer_count": 8})
        (sample,) = tiny_samples(1)

        loss = sample_gradient(init_params(hyper, seed=4), sample).loss

        assert loss == pytest.approx(math.log(8), abs=1e-12)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = init_params(TINY_HYPER, seed=1)
        grads = {"enc_b": np.array([1.0, -2.0, 0.5, 3.0])}

        updated = Adam(learning_rate=0.1).step(params, grads)

        np.testing.assert_allclose(updated["enc_b"], [-0.1, 0.1, -0.1, -0.1], rtol=1e-6)
        assert updated["enc_w"].tobytes() == params["enc_w"].tobytes()

    def test_step_count(self):
        optimizer = Adam(learning_rate=0.1)
        params = init_params(TINY_HYPER, seed=1)
        for _ in range(3):
            params = optimizer.step(params, {"enc_b": np.ones(4)})

        assert optimizer.step_count == 3


class TestTrainer:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)

    def test_rejects_empty_training_set(self):
        with pytest.raises(EmptyDatasetError) as exc_info:
            train(init_params(TINY_HYPER, 1), [], TrainConfig(epochs=1))

        assert exc_info.value.code == "EMPTY_DATASET"

    def test_deterministic(self):
        samples = tiny_samples(5)
        config = TrainConfig(learning_rate=0.01, batch_size=2, epochs=2)

        first, history_a = train(init_params(TINY_HYPER, 1), samples, config)
        second, history_b = train(init_params(TINY_HYPER, 1), samples, config)

        assert [m.loss for m in history_a] == [m.loss for m in history_b]
        for name in first.names():
            assert first[name].tobytes() == second[name].tobytes()

    def test_workers_do_not_change_result(self):
        samples = tiny_samples(4)
        serial = TrainConfig(learning_rate=0.01, batch_size=4, epochs=1)
        pooled = serial.model_copy(update={"workers": 3})

        first, _ = train(init_params(TINY_HYPER, 1), samples, serial)
        second, _ = train(init_params(TINY_HYPER, 1), samples, pooled)

        for name in first.names():
            assert first[name].tobytes() == second[name].tobytes()

    def test_loss_goes_down(self):
        samples = tiny_samples(4)
        config = TrainConfig(learning_rate=0.02, batch_size=4, epochs=40)

        _, history = train(init_params(TINY_HYPER, 1), samples, config)

        assert history[-1].loss < history[0].loss
        assert [m.epoch for m in history] == list(range(1, 41))

    def test_on_epoch_callback_and_validation(self):
        samples = tiny_samples(3)
        seen: list[EpochMetrics] = []

        train(
            init_params(TINY_HYPER, 1),
            samples,
            TrainConfig(epochs=2, batch_size=3),
            val=samples,
            on_epoch=seen.append,
        )

        assert [m.epoch for m in seen] == [1, 2]
        assert all(m.val_acc is not None for m in seen)
        assert set(seen[0].as_line()) == {"epoch", "loss", "acc", "val_acc"}

    def test_overfits_a_single_batch(self):
        batch = tiny_samples(4)
        trainer = Trainer(TrainConfig(learning_rate=0.02, batch_size=4))
        params = init_params(TINY_HYPER, 1)

        for _ in range(200):
            params, _, _ = trainer.step(params, batch)

        assert evaluate(params, batch).accuracy == 1.0

    def test_overflowing_logits_raise_non_finite_loss(self):
        params = init_params(TINY_HYPER, 1)
        bias = np.zeros(TINY_HYPER.answer_count)
        bias[:2] = [1e308, -1e308]
        (sample,) = tiny_samples(1)

        with pytest.raises(NonFiniteLossError) as exc_info:
            Trainer(TrainConfig()).step(params.replace({"out_p_b": bias}), [sample])

        assert exc_info.value.code == "NON_FINITE_LOSS"
        assert "after 0 steps" in exc_info.value.message
        assert "LOG_SOFTMAX_ROWS produced NaN or Inf" in exc_info.value.message

    def test_split_chunks_keeps_order(self):
        assert split_chunks(list(range(7)), 3) == [[0, 1, 2], [3, 4, 5], [6]]
        assert split_chunks([0, 1], 4) == [[0], [1]]

    def test_single_worker_has_no_pool(self):
        with Trainer(TrainConfig()).worker_pool() as pool:
            assert pool is None

    def test_chunk_gradients_rebind_context(self, mocker):
        seen = []
        mocker.patch(
            "hadamard.domain.services.trainer.sample_gradient",
            side_effect=lambda params, sample: seen.append(get_contextvars()),
        )

        _chunk_gradients(init_params(TINY_HYPER, 1), tiny_samples(2), {"epoch": 3})

        assert seen == [{"epoch": 3}, {"epoch": 3}]
        assert "epoch" not in get_contextvars()

    def test_non_finite_loss(self, mocker):
        samples = tiny_samples(2)
        mocker.patch(
            "hadamard.domain.services.trainer.sample_gradient",
            return_value=mocker.Mock(loss=float("inf"), correct=False, grads={}),
        )

        with pytest.raises(NonFiniteLossError):
            Trainer(TrainConfig()).step(init_params(TINY_HYPER, 1), samples)

    def test_evaluate_per_kind(self):
        samples = tiny_samples(6)

        report = evaluate(init_params(TINY_HYPER, 1), samples)

        assert report.samples == 6
        assert set(report.per_kind) == {kind.value for kind in KINDS}
        # zero output weights: every prediction is answer 0
        assert report.accuracy == pytest.approx(2 / 6)


class TestLocalization:
    def test_attention_mass(self):
        maps = np.array([[[0.5, 0.25], [0.25, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
        mask = np.array([[True, False], [False, False]])

        np.testing.assert_allclose(attention_mass(maps, mask), [0.5, 0.0])
        assert uniform_baseline(mask) == 0.25

    def test_noun_gap(self):
        assert noun_function_gap(np.array([-1.0, -1.0, 2.0]), (2,)) == pytest.approx(3.0)
        assert noun_function_gap(np.array([1.0, -1.0]), ()) is None
        assert noun_function_gap(np.array([1.0, -1.0]), (0, 1)) is None

    def test_summary_rates(self):
        records = [
            SampleLocalization(masses=np.array([0.6, 0.1]), baseline=0.25, token_gap=1.0),
            SampleLocalization(masses=np.array([0.1, 0.2]), baseline=0.25, token_gap=None),
        ]

        report = summarize(records)

        assert report.samples == 2
        assert report.attention_hit_rate == 0.5
        assert report.token_gap_hit_rate == 0.5
        assert report.mean_mass == pytest.approx(0.4)
        assert report.mean_token_gap == 1.0

    def test_empty_summary(self):
        assert summarize([]).samples == 0

    def test_report_skips_count_and_wrong_answers(self):
        samples = tiny_samples(6)

        report = localization_report(init_params(TINY_HYPER, 1), samples, GradMode.GUIDED)

        # answer 0 is predicted everywhere; only sample 0 (a color question) qualifies
        assert report.samples == 1
