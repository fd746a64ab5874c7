import math
import multiprocessing
import time
from collections import defaultdict
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from itertools import repeat
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from structlog.contextvars import bound_contextvars, get_contextvars

from hadamard.autodiff.ops import backward
from hadamard.autodiff.tensor import Tensor
from hadamard.core.enums import GradMode
from hadamard.core.logging import configure_logging, get_logger
from hadamard.core.metrics import (
    epoch_duration_seconds,
    training_epoch_accuracy,
    training_epoch_loss,
    training_steps_total,
)
from hadamard.domain.exceptions import EmptyDatasetError, NonFiniteLossError, NonFiniteValueError
from hadamard.domain.model.hyper import HyperParams
from hadamard.domain.model.mlb import forward
from hadamard.domain.model.params import ModelParams, is_bias, param_shapes
from hadamard.domain.services.optim import Adam
from hadamard.schemas.training import EpochMetrics, EvalReport
from hadamard.synth.rng import Rng64
from hadamard.synth.sample import Sample

logger = get_logger(__name__)

# zero output projection: the initial posterior is uniform
ZERO_INIT = frozenset({"out_p"})


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, gt=0)
    epochs: int = Field(default=20, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    init_seed: int = Field(default=1, ge=0, lt=2**64)
    shuffle_seed: int = Field(default=2, ge=0, lt=2**64)
    workers: int = Field(default=1, gt=0)


@dataclass(frozen=True)
class SampleGradient:
    loss: float
    correct: bool
    grads: dict[str, Tensor]


def glorot_bound(shape: tuple[int, ...]) -> float:
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    else:
        fan_in, fan_out = shape[0], shape[1]
    return math.sqrt(6.0 / (fan_in + fan_out))


def he_bound(shape: tuple[int, ...]) -> float:
    """Uniform bound keeping the second moment steady through a ReLU stage."""
    return math.sqrt(6.0 / math.prod(shape[1:]))


def init_bound(shape: tuple[int, ...]) -> float:
    # conv kernels feed ReLUs; Glorot would shrink the features at every stage
    return he_bound(shape) if len(shape) == 4 else glorot_bound(shape)


def init_params(hyper: HyperParams, seed: int) -> ModelParams:
    """Uniform weights drawn in parameter order from one Rng64 stream; zero biases.

    Matrices use the Glorot bound, conv kernels the He bound.
    """
    rng = Rng64(seed)
    tensors = {}
    for name, shape in param_shapes(hyper).items():
        if is_bias(name) or name in ZERO_INIT:
            tensors[name] = np.zeros(shape)
            continue
        bound = init_bound(shape)
        values = [rng.uniform(-bound, bound) for _ in range(math.prod(shape))]
        tensors[name] = np.asarray(values, dtype=np.float64).reshape(shape)
    return ModelParams(hyper=hyper, tensors=tensors)


def sample_gradient(params: ModelParams, sample: Sample) -> SampleGradient:
    """Cross-entropy of one sample and its Standard-mode gradient for every parameter."""
    try:
        trace = forward(params, sample.image, sample.token_ids)
        log_probs = trace.value(trace.log_probs)
        seed = np.zeros_like(log_probs)
        seed[sample.answer_id] = -1.0
        grads = backward(trace.tape, trace.log_probs, seed, GradMode.STANDARD)
    except NonFiniteValueError as exc:
        raise NonFiniteLossError(
            f"{exc.message} on question {list(sample.token_ids)} (answer {sample.answer_id})"
        ) from exc

    return SampleGradient(
        loss=-float(log_probs[sample.answer_id]),
        correct=trace.answer == sample.answer_id,
        grads={
            name: grads.get(node_id, np.zeros_like(params[name]))
            for name, node_id in trace.params.items()
        },
    )


def predict(params: ModelParams, sample: Sample) -> int:
    return forward(params, sample.image, sample.token_ids).answer


def _init_worker(log_level: str, log_format: str) -> None:
    configure_logging(log_level, log_format)


def _chunk_gradients(
    params: ModelParams, chunk: Sequence[Sample], context: dict[str, Any]
) -> list[SampleGradient]:
    with bound_contextvars(**context):
        return [sample_gradient(params, sample) for sample in chunk]


def split_chunks(batch: Sequence[Sample], parts: int) -> list[Sequence[Sample]]:
    """Contiguous, order-preserving slices of near-equal size; never an empty one."""
    size = max(1, math.ceil(len(batch) / parts))
    return [batch[offset : offset + size] for offset in range(0, len(batch), size)]


class Trainer:
    def __init__(self, config: TrainConfig, log_level: str = "INFO", log_format: str = "json"):
        self.config = config
        self.optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
        self.shuffle_rng = Rng64(config.shuffle_seed)
        self.log_level = log_level
        self.log_format = log_format
        self._pool: ProcessPoolExecutor | None = None

    @contextmanager
    def worker_pool(self) -> Iterator[ProcessPoolExecutor | None]:
        """Keep one process pool alive for the enclosed steps (None with a single worker)."""
        if self.config.workers == 1 or self._pool is not None:
            yield self._pool
            return
        with ProcessPoolExecutor(
            max_workers=self.config.workers,
            mp_context=multiprocessing.get_context("spawn"),
            initializer=_init_worker,
            initargs=(self.log_level, self.log_format),
        ) as pool:
            self._pool = pool
            try:
                yield pool
            finally:
                self._pool = None

    def _batch_gradients(
        self, params: ModelParams, batch: Sequence[Sample]
    ) -> list[SampleGradient]:
        with self.worker_pool() as pool:
            if pool is None:
                return [sample_gradient(params, sample) for sample in batch]
            chunks = split_chunks(batch, self.config.workers)
            # map yields chunks in submission order, so the reduction below is order-stable
            results = pool.map(
                _chunk_gradients, repeat(params), chunks, repeat(get_contextvars())
            )
            return [gradient for chunk in results for gradient in chunk]

    def step(self, params: ModelParams, batch: Sequence[Sample]) -> tuple[ModelParams, float, int]:
        """One Adam update on the mean loss of ``batch``; returns the batch loss and hits."""
        try:
            results = self._batch_gradients(params, batch)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(
                f"Training diverged after {self.optimizer.step_count} steps: {exc.message}"
            ) from exc
        loss = sum(r.loss for r in results) / len(results)
        if not math.isfinite(loss):
            raise NonFiniteLossError(
                f"Training loss is not finite ({loss}) after {self.optimizer.step_count} steps"
            )
        mean_grads = {}
        for name in params.names():
            total = np.zeros_like(params[name])
            for result in results:
                total = total + result.grads[name]
            mean_grads[name] = total / len(results)

        training_steps_total.inc()
        return self.optimizer.step(params, mean_grads), loss, sum(r.correct for r in results)

    def run_epoch(
        self, params: ModelParams, samples: Sequence[Sample], epoch: int
    ) -> tuple[ModelParams, EpochMetrics]:
        started = time.perf_counter()
        order = self.shuffle_rng.permutation(len(samples))
        loss_sum, hits = 0.0, 0
        for offset in range(0, len(order), self.config.batch_size):
            batch = [samples[i] for i in order[offset : offset + self.config.batch_size]]
            params, batch_loss, batch_hits = self.step(params, batch)
            loss_sum += batch_loss * len(batch)
            hits += batch_hits

        duration = time.perf_counter() - started
        metrics = EpochMetrics(
            epoch=epoch,
            loss=loss_sum / len(samples),
            acc=hits / len(samples),
            duration_seconds=duration,
        )
        return params, metrics

    def fit(
        self,
        params: ModelParams,
        samples: Sequence[Sample],
        val: Sequence[Sample] | None = None,
        on_epoch: Callable[[EpochMetrics], None] | None = None,
    ) -> tuple[ModelParams, list[EpochMetrics]]:
        if not samples:
            raise EmptyDatasetError("Training set is empty")

        history = []
        with self.worker_pool():
            for epoch in range(1, self.config.epochs + 1):
                params, metrics = self._fit_epoch(params, samples, val, epoch)
                history.append(metrics)
                if on_epoch is not None:
                    on_epoch(metrics)
        return params, history

    def _fit_epoch(
        self,
        params: ModelParams,
        samples: Sequence[Sample],
        val: Sequence[Sample] | None,
        epoch: int,
    ) -> tuple[ModelParams, EpochMetrics]:
        with bound_contextvars(epoch=epoch):
            params, metrics = self.run_epoch(params, samples, epoch)
            if val:
                metrics = metrics.model_copy(update={"val_acc": evaluate(params, val).accuracy})

            training_epoch_loss.set(metrics.loss)
            training_epoch_accuracy.set(metrics.acc)
            epoch_duration_seconds.observe(metrics.duration_seconds)
            logger.info(
                "epoch_completed",
                loss=metrics.loss,
                acc=metrics.acc,
                val_acc=metrics.val_acc,
                duration_seconds=round(metrics.duration_seconds, 3),
            )
        return params, metrics


def train(
    params: ModelParams,
    samples: Sequence[Sample],
    config: TrainConfig,
    val: Sequence[Sample] | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
    log_level: str = "INFO",
    log_format: str = "json",
) -> tuple[ModelParams, list[EpochMetrics]]:
    """Minibatch Adam on mean cross-entropy; a pure function of the data and the config.

    ``log_level`` and ``log_format`` configure the worker processes when ``config.workers > 1``.
    """
    trainer = Trainer(config, log_level=log_level, log_format=log_format)
    return trainer.fit(params, samples, val=val, on_epoch=on_epoch)


def evaluate(params: ModelParams, samples: Sequence[Sample]) -> EvalReport:
    hits: dict[str, int] = defaultdict(int)
    totals: dict[str, int] = defaultdict(int)
    for sample in samples:
        totals[sample.kind.value] += 1
        hits[sample.kind.value] += int(predict(params, sample) == sample.answer_id)

    count = len(samples)
    return EvalReport(
        samples=count,
        accuracy=sum(hits.values()) / count if count else 0.0,
        per_kind={kind: hits[kind] / totals[kind] for kind in totals},
    )
