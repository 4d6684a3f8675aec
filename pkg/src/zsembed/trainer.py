"""Minibatch SGD with momentum, plus hyperparameter grid validation.

The update rule per step is

    velocity <- momentum * velocity - lr * gradient
    params   <- params + velocity

with seed-deterministic shuffling, the last partial batch kept, and a
constant learning rate. Everything is computed serially in a fixed
order, so two runs with the same seed are bit-identical whether or not
the ``deterministic`` flag is set; the flag documents the requirement
and is reserved for a future parallel reduction.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DataError, Dataset, ModelParams, UsageError, modality_dims, validate_dataset, visual_dim
from .embedder import class_scores
from .objective import LossConfig, objective_and_gradient


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int = 100
    momentum: float = 0.9
    epochs: int = 20
    embed_dim: int = 64
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise UsageError("momentum must be in [0, 1)")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.embed_dim < 1:
            raise UsageError("embed_dim must be >= 1")
        if self.seed < 0:
            raise UsageError("seed must be a non-negative integer")


@dataclass
class TrainReport:
    epoch_objectives: list[float]
    epoch_val_top1: list[float]
    wall_clock_seconds: float
    params: ModelParams


def init_params(embed_dim: int, visual_dim: int, modality_dims: dict[str, int], seed: int) -> ModelParams:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] projections, zero biases.

    Modalities are sampled in sorted order, so the result depends only on
    the dimensions and the seed.
    """
    if embed_dim < 1 or visual_dim < 1 or any(dim < 1 for dim in modality_dims.values()):
        raise UsageError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    lang = {}
    for mod in sorted(modality_dims):
        dim = modality_dims[mod]
        bound = 1.0 / math.sqrt(dim)
        lang[mod] = rng.uniform(-bound, bound, size=(embed_dim, dim))
    bound = 1.0 / math.sqrt(visual_dim)
    vis = rng.uniform(-bound, bound, size=(embed_dim, visual_dim))
    return ModelParams(
        lang_proj=lang,
        lang_bias=np.zeros(embed_dim),
        vis_proj=vis,
        vis_bias=np.zeros(embed_dim),
    )


def epoch_batches(n_images: int, batch_size: int, perm: np.ndarray) -> list[np.ndarray]:
    """Split a permutation of image indices into consecutive batches.

    Every index lands in exactly one batch; the last batch may be short.
    """
    return [perm[i : i + batch_size] for i in range(0, n_images, batch_size)]


def _val_top1(d: Dataset, params: ModelParams) -> float:
    val = sorted(d.split.val_classes)
    images = d.images_for(val)
    if not images:
        return float("nan")
    from .metrics import top1_per_class

    cache: dict[str, np.ndarray] = {}
    preds = []
    for x, true_class in images:
        scored = class_scores(x, val, d, params, _class_cache=cache)
        best = max(scored, key=lambda item: item[1])
        # class_scores is sorted by id, so max() keeps the smallest id on ties
        preds.append((x.image_id, best[0], true_class))
    return top1_per_class(preds)


def train(d: Dataset, cfg: TrainConfig) -> tuple[ModelParams, TrainReport]:
    """Run SGD over the training split and report per-epoch progress."""
    problems = validate_dataset(d)
    if problems:
        raise DataError("dataset invalid: " + "; ".join(problems))
    train_images = d.images_for(d.split.train_classes)
    if not train_images:
        raise DataError("no training images in dataset")

    params = init_params(cfg.embed_dim, visual_dim(d), modality_dims(d), cfg.seed)
    velocity = {key: np.zeros_like(arr) for key, arr in params.arrays().items()}
    shuffle_rng = np.random.default_rng([cfg.seed, 1])

    t0 = time.perf_counter()
    epoch_objectives: list[float] = []
    epoch_val: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(len(train_images))
        batch_losses = []
        for batch_idx in epoch_batches(len(train_images), cfg.batch_size, perm):
            batch = [train_images[i] for i in batch_idx]
            loss, grads = objective_and_gradient(batch, d, params, cfg.loss)
            step += 1
            if not np.isfinite(loss):
                raise DataError(
                    f"non-finite objective ({loss}) at epoch {epoch + 1}, step {step}"
                )
            batch_losses.append(loss)
            arrays = params.arrays()
            grad_arrays = grads.arrays()
            updated = {}
            for key, arr in arrays.items():
                velocity[key] = cfg.momentum * velocity[key] - cfg.learning_rate * grad_arrays[key]
                updated[key] = arr + velocity[key]
            params = ModelParams.from_arrays(updated)
        epoch_objectives.append(float(np.mean(batch_losses)))
        epoch_val.append(_val_top1(d, params))

    report = TrainReport(
        epoch_objectives=epoch_objectives,
        epoch_val_top1=epoch_val,
        wall_clock_seconds=time.perf_counter() - t0,
        params=params,
    )
    return params, report


DEFAULT_GRID_DELTAS = (0.1, 0.5, 1.0)
DEFAULT_GRID_LRS = (1e-3, 1e-2, 1e-1)
DEFAULT_GRID_DIMS = (64, 128, 256)


def default_grid() -> list[tuple[float, float, int]]:
    """(margin_delta, learning_rate, embed_dim) triples in search order."""
    return [
        (delta, lr, dim)
        for delta, lr, dim in itertools.product(
            DEFAULT_GRID_DELTAS, DEFAULT_GRID_LRS, DEFAULT_GRID_DIMS
        )
    ]


def validate_grid(d: Dataset, grid, cfg: TrainConfig) -> TrainConfig:
    """Train one model per grid point; return the config with the best
    validation Top-1. Ties go to the earliest grid point."""
    grid = list(grid)
    if not grid:
        raise UsageError("hyperparameter grid is empty")
    if not d.split.val_classes:
        raise UsageError("validation split is empty")
    best_cfg = None
    best_score = -math.inf
    for delta, lr, dim in grid:
        candidate = replace(
            cfg,
            learning_rate=lr,
            embed_dim=dim,
            loss=replace(cfg.loss, margin_delta=delta),
        )
        _, report = train(d, candidate)
        score = report.epoch_val_top1[-1]
        if score > best_score:
            best_cfg = candidate
            best_score = score
    return best_cfg
