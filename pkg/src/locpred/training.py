"""Training loop, evaluation, and metric logging.

The loss follows the published protocol structurally: binary cross-entropy
between predicted and clean (un-occluded) frames, summed over all pixels
and predicted frames of a sequence, averaged over sequences.  Closed-loop
predictions enter the loss like any other (gradients flow through the fed-
back chain); a prediction pointing past the end of the clip simply has no
target and is skipped.

Optimization is Adam with bias correction.  Runs are deterministic given
the config seed: shuffling uses its own Philox stream per run, and model
initialization is seeded separately by the caller.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import SequenceSample
from .models import RolloutSchedule, param_count
from .rng import generator
from .tensor import Tensor, add, bce_loss


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    schedule: RolloutSchedule = field(default_factory=lambda: RolloutSchedule(8, 2))

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not isinstance(self.schedule, RolloutSchedule):
            self.schedule = RolloutSchedule(*self.schedule)


@dataclass
class EpochMetrics:
    epoch: int
    train_bce: float
    test_bce: float
    seconds: float
    params: int


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def batch_arrays(samples: list[SequenceSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (inputs, targets, mask) float arrays in [0,1].

    Inputs are the occluded frames, targets the clean frames.  All samples
    in a batch must share one occlusion mask (the generators guarantee it).
    """
    inputs = np.stack([s.occluded_frames for s in samples])[:, :, None].astype(np.float64) / 255.0
    targets = np.stack([s.clean_frames for s in samples])[:, :, None].astype(np.float64) / 255.0
    mask = samples[0].occlusion_mask
    for s in samples[1:]:
        if not np.array_equal(s.occlusion_mask, mask):
            raise ValueError("samples in a batch must share the occlusion mask")
    return inputs, targets, mask.astype(np.float64)


def sequence_loss(model, inputs: np.ndarray, targets: np.ndarray, mask: np.ndarray,
                  schedule: RolloutSchedule) -> Tensor:
    """Pixel-summed, batch-averaged BCE over every prediction with a target."""
    total_frames = targets.shape[1]
    loss = None
    for frame_idx, pred in model.forward_sequence(inputs, schedule, mask=mask):
        if frame_idx >= total_frames:
            continue  # prediction beyond the clip, nothing to score
        term = bce_loss(pred, Tensor(targets[:, frame_idx]))
        loss = term if loss is None else add(loss, term)
    if loss is None:
        raise ValueError("schedule produced no prediction with a target")
    return loss


def evaluate(model, samples: list[SequenceSample], schedule: RolloutSchedule,
             batch_size: int = 16) -> float:
    """Mean per-sequence BCE on held-out data; touches no parameter."""
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        inputs, targets, mask = batch_arrays(chunk)
        loss = sequence_loss(model, inputs, targets, mask, schedule)
        total += float(loss.data) * len(chunk)
    return total / len(samples)


def train(model, train_samples: list[SequenceSample], test_samples: list[SequenceSample] | None,
          config: TrainConfig) -> list[EpochMetrics]:
    """Mini-batch Adam over the schedule's rollout loss.

    Returns one metrics row per epoch; test BCE is NaN when no test split is
    given.  The wall-clock column is the only non-deterministic field.
    """
    if not train_samples:
        raise ValueError("cannot train on an empty dataset")
    params = [p for _, p in model.named_parameters()]
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    shuffle = generator(config.seed, 2**32)
    n_params = param_count(model)
    history: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle.permutation(len(train_samples))
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_samples[i] for i in order[start : start + config.batch_size]]
            inputs, targets, mask = batch_arrays(chunk)
            loss = sequence_loss(model, inputs, targets, mask, config.schedule)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} in epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += value * len(chunk)
        train_bce = running / len(train_samples)
        test_bce = (evaluate(model, test_samples, config.schedule, config.batch_size)
                    if test_samples else float("nan"))
        history.append(EpochMetrics(epoch, train_bce, test_bce,
                                    time.perf_counter() - started, n_params))
    return history


# ---------------------------------------------------------------------------
# metrics CSV

METRICS_HEADER = "epoch,train_bce,test_bce,seconds,params"


def write_metrics_csv(path, history: list[EpochMetrics]) -> None:
    """UTF-8, LF line endings; floats via repr so they parse back exactly."""
    lines = [METRICS_HEADER]
    for m in history:
        lines.append(f"{m.epoch},{m.train_bce!r},{m.test_bce!r},{m.seconds!r},{m.params}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: expected header {METRICS_HEADER!r}")
    history = []
    for line in lines[1:]:
        epoch, train_bce, test_bce, seconds, params = line.split(",")
        history.append(EpochMetrics(int(epoch), float(train_bce), float(test_bce),
                                    float(seconds), int(params)))
    return history
