"""Minibatch training for the joint text-plus-rating objective.

The loss is mean token cross-entropy plus a weighted rating MSE. Epochs
shuffle with a seeded generator, gradients are clipped by global norm,
and the parameters giving the best validation joint loss are restored
at the end, with early stopping after a patience of flat epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .models import make_batch
from .nn import clip_global_norm


class DivergenceError(RuntimeError):
    """Raised when the loss leaves the finite floats; remembers the last good epoch."""

    def __init__(self, message: str, last_finite_epoch: int):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 32
    lr: float = 3e-3
    rating_weight: float = 1.0
    clip_norm: float = 5.0
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.rating_weight < 0:
            raise ValueError("rating_weight must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def joint_loss(model, reviews, vocab, rating_weight: float,
               batch_size: int = 64) -> tuple[float, float, float]:
    """(joint, nll, mse) over the reviews; nll is token-weighted across chunks."""
    if not reviews:
        raise ValueError("empty batch")
    if rating_weight < 0:
        raise ValueError("rating_weight must be >= 0")
    nll_sum = 0.0
    mse_sum = 0.0
    positions = 0
    for start in range(0, len(reviews), batch_size):
        chunk = reviews[start:start + batch_size]
        batch = make_batch(chunk, vocab)
        nll, mse = model.loss_nodes(Tape(), batch)
        n = batch.scored_positions
        nll_sum += float(nll.value) * n
        mse_sum += float(mse.value) * len(chunk)
        positions += n
    nll_mean = nll_sum / positions
    mse_mean = mse_sum / len(reviews)
    return nll_mean + rating_weight * mse_mean, nll_mean, mse_mean


def train_model(model, corpus, config: TrainConfig, log=None) -> list[dict]:
    """Optimize in place; returns the per-epoch history."""
    train = corpus.train
    if not train:
        raise ValueError("empty train split")
    vocab = corpus.vocab
    rng = np.random.default_rng([config.seed, 0x7E41])
    best_val = np.inf
    best_state = model.store.state_copy()
    flat_epochs = 0
    history: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        nll_sum = 0.0
        mse_sum = 0.0
        positions = 0
        seen = 0
        try:
            for start in range(0, len(train), config.batch_size):
                chunk = [train[j] for j in order[start:start + config.batch_size]]
                batch = make_batch(chunk, vocab)
                tape = Tape()
                nll, mse = model.loss_nodes(tape, batch)
                total = tape.add(nll, tape.scale(mse, config.rating_weight))
                if not np.isfinite(total.value):
                    raise FloatingPointError("non-finite loss")
                tape.backward(total)
                grads = tape.param_grads(model.store)
                grads, norm = clip_global_norm(grads, config.clip_norm)
                if not np.isfinite(norm):
                    raise FloatingPointError("non-finite gradient norm")
                model.store.adam_step(grads, config.lr)
                n = batch.scored_positions
                nll_sum += float(nll.value) * n
                mse_sum += float(mse.value) * len(chunk)
                positions += n
                seen += len(chunk)
            val_joint, val_nll, val_mse = joint_loss(
                model, corpus.validation, vocab, config.rating_weight)
            if not np.isfinite(val_joint):
                raise FloatingPointError("non-finite validation loss")
        except FloatingPointError as exc:
            raise DivergenceError(
                f"training diverged in epoch {epoch}: {exc}", epoch - 1) from exc
        entry = {
            "epoch": epoch,
            "train_nll": nll_sum / positions,
            "train_mse": mse_sum / seen,
            "val_joint": val_joint,
            "val_nll": val_nll,
            "val_mse": val_mse,
        }
        history.append(entry)
        if log is not None:
            log(f"epoch {epoch}: train nll {entry['train_nll']:.4f} "
                f"mse {entry['train_mse']:.4f} | val joint {val_joint:.4f}")
        if val_joint < best_val:
            best_val = val_joint
            best_state = model.store.state_copy()
            flat_epochs = 0
        else:
            flat_epochs += 1
            if flat_epochs >= config.patience:
                break
    model.store.load_state(best_state)
    return history
