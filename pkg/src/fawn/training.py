"""Mini-batch training with best-validation checkpointing."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import CsiSample
from .model import FawnParams, bind, fawn_loss, forward, init_params
from .numerics import AdamState, ContractError, Graph, Rng, adam_step

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise ValueError(f"split must be three non-negative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(self.split)}")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: FawnParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def split_dataset(samples: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 42):
    """Shuffle with ``seed`` then slice contiguous train/val/test blocks.

    Validation and test sizes are floored; train takes the remainder.
    """
    n = len(samples)
    if n == 0:
        raise ContractError("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    # the epsilon absorbs products like 0.1 * 70 landing just under an integer
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    order = Rng(seed).permutation(n)
    picked = [samples[i] for i in order]
    return picked[:n_train], picked[n_train : n_train + n_val], picked[n_train + n_val :]


def _stack(batch: Sequence[CsiSample]):
    return np.stack([s.x5g for s in batch]), np.stack([s.xwifi for s in batch]), [s.label for s in batch]


def batch_loss_and_grads(params: FawnParams, batch: Sequence[CsiSample], need_grads: bool = True):
    """Mean ``fawn_loss`` over ``batch`` and its gradient for every parameter."""
    x5g, xwifi, labels = _stack(batch)
    g = Graph()
    pv = bind(g, params)
    loss = fawn_loss(forward(g, pv, x5g, xwifi).heads, labels)
    if not need_grads:
        return float(loss.value), None
    g.backward(loss)
    return float(loss.value), {name: v.grad for name, v in pv.items()}


def dataset_loss(params: FawnParams, samples: Sequence[CsiSample], batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        loss, _ = batch_loss_and_grads(params, chunk, need_grads=False)
        total += loss * len(chunk)
    return total / len(samples)


def train(
    train_set: Sequence[CsiSample],
    val_set: Sequence[CsiSample],
    config: TrainConfig,
    rng: Rng,
    params: FawnParams | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Adam over shuffled mini-batches; keeps the parameters with the lowest validation loss.

    Parameters are initialised from ``rng`` unless given; the same ``rng`` then
    drives the per-epoch shuffles. With an empty validation set the epoch's
    training loss stands in for it.
    """
    if not train_set:
        raise ContractError("training set is empty")
    if params is None:
        params = init_params(rng)
    params = {k: v.copy() for k, v in params.items()}
    state = AdamState.zeros_like(params)
    result = TrainResult(params={k: v.copy() for k, v in params.items()})
    n = len(train_set)

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        seen, total = 0, 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            loss, grads = batch_loss_and_grads(params, batch)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError(f"non-finite loss or gradient at epoch {epoch + 1}, batch {b}")
            params, state = adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            total += loss * len(batch)
            seen += len(batch)
        train_loss = total / seen
        val_loss = dataset_loss(params, val_set) if val_set else train_loss
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch + 1}")
        rec = EpochRecord(epoch + 1, train_loss, val_loss)
        result.history.append(rec)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch + 1
            result.params = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d train %.5f val %.5f", rec.epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(rec)
    return result
