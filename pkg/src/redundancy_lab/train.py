"""SGD-with-momentum training, finite-difference gradient checks, and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import EncoderSubset, NumericalError, PreconditionError
from .simkit import (
    Batch,
    FusionSpec,
    HeadSpec,
    MultiEncoderModel,
    SimWorld,
    cross_entropy,
    make_encoder,
    make_task,
    sample_batch,
    subset_active,
)

# stream tags for np.random.default_rng([seed, tag])
TRAIN_STREAM = 4
MONITOR_STREAM = 5
EVAL_STREAM = 6
CHECK_STREAM = 7


class DivergenceError(NumericalError):
    def __init__(self, step: int, value: float):
        super().__init__(f"training loss became {value} at step {step}")
        self.step = step


class GradientCheckError(NumericalError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    steps: int = 2000
    encoder_dropout: float = 0.3
    seed: int = 0
    train_head: bool = True
    train_fusion: bool = True
    train_encoders: bool = False
    monitor_size: int = 256

    def __post_init__(self) -> None:
        if not self.lr >= 0:
            raise PreconditionError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 <= self.encoder_dropout < 1:
            raise PreconditionError(f"encoder dropout must be in [0, 1), got {self.encoder_dropout}")
        if not 0 <= self.momentum < 1:
            raise PreconditionError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.steps < 0 or self.monitor_size < 1:
            raise PreconditionError("batch_size and monitor_size must be >= 1, steps >= 0")


def loss(probs: np.ndarray, label: int) -> float:
    """-log p[label] with the 1e-12 probability floor."""
    return float(cross_entropy(np.asarray(probs, dtype=np.float64), np.array([label]))[0])


def trainable_keys(model: MultiEncoderModel, config: TrainConfig) -> list[str]:
    keys = []
    for key in model.params:
        group = model.param_group(key)
        if group == "head" and config.train_head:
            keys.append(key)
        elif group == "fusion" and config.train_fusion:
            keys.append(key)
        elif group == "encoders" and config.train_encoders and model.encoder_trainable(int(key.split(".")[1])):
            keys.append(key)
    return keys


@dataclass
class TrainResult:
    model: MultiEncoderModel
    losses: list[float]
    batch_losses: list[float] = field(default_factory=list)


def train(model: MultiEncoderModel, world: SimWorld, config: TrainConfig) -> TrainResult:
    """Train a copy of ``model``; the input model is left untouched.

    Every training sample masks each encoder independently with probability
    ``encoder_dropout``.  ``losses`` holds the loss on a fixed monitoring batch
    (all encoders active) after each step; ``batch_losses`` the minibatch loss.
    """
    if world is not model.world:
        raise PreconditionError("model was built for a different world")
    model = model.copy()
    rng = np.random.default_rng([config.seed, TRAIN_STREAM])
    monitor = sample_batch(world, model.encoders, config.monitor_size, np.random.default_rng([config.seed, MONITOR_STREAM]))
    monitor_active = np.ones((config.monitor_size, model.n))
    keys = trainable_keys(model, config)
    velocity = {k: np.zeros_like(model.params[k]) for k in keys}
    losses, batch_losses = [], []
    for step in range(config.steps):
        batch = sample_batch(world, model.encoders, config.batch_size, rng)
        active = (rng.random((config.batch_size, model.n)) >= config.encoder_dropout).astype(np.float64)
        value, grads = model.loss_and_grads(batch, active)
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        for k in keys:
            velocity[k] = config.momentum * velocity[k] - config.lr * grads[k]
            model.params[k] += velocity[k]
        monitored = model.loss(monitor, monitor_active)
        if not math.isfinite(monitored):
            raise DivergenceError(step, monitored)
        batch_losses.append(value)
        losses.append(monitored)
    return TrainResult(model, losses, batch_losses)


def evaluate(
    model: MultiEncoderModel,
    world: SimWorld,
    subset: EncoderSubset,
    n_samples: int,
    seed: int,
    chunk: int = 4096,
) -> dict[str, float]:
    """Accuracy per task on freshly sampled data with only ``subset`` active."""
    if n_samples < 1:
        raise PreconditionError("n_samples must be >= 1")
    rng = np.random.default_rng([seed, EVAL_STREAM])
    correct = {t.name: 0 for t in world.tasks}
    done = 0
    while done < n_samples:
        size = min(chunk, n_samples - done)
        batch = sample_batch(world, model.encoders, size, rng)
        logits, _ = model.forward(batch, subset_active(subset, size))
        for t, lg in logits.items():
            correct[t] += int((lg.argmax(axis=1) == batch.labels[t]).sum())
        done += size
    return {t: c / n_samples for t, c in correct.items()}


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    model: MultiEncoderModel,
    batch: Batch,
    tolerance: float = 1e-3,
    active: np.ndarray | None = None,
    n_params: int = 128,
    step: float = 1e-4,
    seed: int = 0,
) -> GradCheckResult:
    """Compare the analytic gradient with central differences on sampled parameters.

    Every parameter array contributes samples (at least ``n_params`` in total) so
    each backward path is exercised.
    """
    if active is None:
        active = np.ones((len(batch), model.n))
    params = model.params
    for key, value in params.items():
        if not np.all(np.isfinite(value)):
            raise GradientCheckError(f"non-finite parameter values in {key}")
    _, grads = model.loss_and_grads(batch, active)
    rng = np.random.default_rng([seed, CHECK_STREAM])
    keys = sorted(params)
    per_array = max(4, math.ceil(n_params / len(keys)))
    worst = (0.0, keys[0], (0,))
    checked = 0
    for key in keys:
        g = grads[key]
        if not np.all(np.isfinite(g)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(g))[0])
            raise GradientCheckError(f"non-finite analytic gradient at {key}{list(bad)}")
        flat = params[key].reshape(-1)
        picks = rng.choice(flat.size, size=min(per_array, flat.size), replace=False)
        for p in picks:
            original = flat[p]
            flat[p] = original + step
            up = model.loss(batch, active)
            flat[p] = original - step
            down = model.loss(batch, active)
            flat[p] = original
            numeric = (up - down) / (2 * step)
            idx = tuple(int(i) for i in np.unravel_index(p, params[key].shape))
            err = relative_error(float(g[idx]), numeric)
            if not math.isfinite(err):
                raise GradientCheckError(f"non-finite gradient comparison at {key}{list(idx)}")
            checked += 1
            if err > worst[0]:
                worst = (err, key, idx)
    return GradCheckResult(float(worst[0]), worst[1], worst[2], checked, tolerance)


def toy_problem(strategy: str, seed: int = 0, batch_size: int = 16) -> tuple[MultiEncoderModel, Batch, np.ndarray]:
    """Small untrained model, batch and partial masking pattern for gradient checks."""
    rng = np.random.default_rng([seed, CHECK_STREAM])
    world = SimWorld(16, (make_task("a", "General", range(0, 8), 4, rng),
                          make_task("b", "OCR & Chart", range(8, 12), 2, rng)), 0.1)
    encoders = [make_encoder("E0", range(0, 8), 16, rng), make_encoder("E1", range(4, 12), 16, rng),
                make_encoder("E2", range(8, 16), 16, rng)]
    model = MultiEncoderModel.build(world, encoders, FusionSpec(strategy), HeadSpec((16,)), rng)
    batch = sample_batch(world, model.encoders, batch_size, rng)
    active = (rng.random((batch_size, model.n)) >= 0.3).astype(np.float64)
    return model, batch, active
