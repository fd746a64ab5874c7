from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

# batch jobs write this registry to a textfile instead of serving it
registry = CollectorRegistry()

# training metrics
training_steps_total = Counter(
    "training_steps_total",
    "Total number of optimizer steps",
    registry=registry,
)

training_epoch_loss = Gauge(
    "training_epoch_loss",
    "Mean cross-entropy of the last completed epoch",
    registry=registry,
)

training_epoch_accuracy = Gauge(
    "training_epoch_accuracy",
    "Training accuracy of the last completed epoch",
    registry=registry,
)

epoch_duration_seconds = Histogram(
    "epoch_duration_seconds",
    "Wall time of one training epoch",
    buckets=(1.0, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0, 600.0),
    registry=registry,
)

# autodiff metrics
backward_duration_seconds = Histogram(
    "backward_duration_seconds",
    "Duration of one reverse sweep over a tape",
    ["mode"],
    buckets=(0.0005, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25),
    registry=registry,
)

# explanation metrics
explanations_total = Counter(
    "explanations_total",
    "Number of saliency explanations computed",
    ["mode"],
    registry=registry,
)

selfcheck_checks_total = Counter(
    "selfcheck_checks_total",
    "Self-check outcomes",
    ["status"],
    registry=registry,
)

# data generation metrics
scenes_rerolled_total = Counter(
    "scenes_rerolled_total",
    "Scenes discarded after exhausting placement attempts",
    registry=registry,
)


def write_metrics(path: str | Path) -> None:
    write_to_textfile(str(path), registry)
