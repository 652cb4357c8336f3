"""Training loops and evaluation metrics.

Flip models minimize cross-entropy between the position softmax and the
soft reference flip vector; validate models minimize two-class
cross-entropy with inverse-frequency class weights (the generator emits
five re-selects per continue).  Runs are seeded and checkpointed per
epoch; a NaN loss aborts immediately after writing the checkpoint.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataset import KIND_FDNC, KIND_FVDNC, TrainingSet
from .models import HEAD_FLIP, HEAD_VALIDATE, TrainConfig, build_model, state_to_steps


@dataclass
class FlipMetrics:
    loss: float
    rank_hits: np.ndarray
    rank_counts: np.ndarray

    @property
    def rank_rates(self) -> np.ndarray:
        return np.divide(
            self.rank_hits,
            self.rank_counts,
            out=np.zeros_like(self.rank_hits, dtype=float),
            where=self.rank_counts > 0,
        )


@dataclass
class ValidateMetrics:
    loss: float
    accuracy: float
    majority_accuracy: float
    reselect_precision: float
    reselect_recall: float
    continue_recall: float


def _batches(count: int, batch_size: int, generator: torch.Generator | None):
    order = (
        torch.randperm(count, generator=generator)
        if generator is not None
        else torch.arange(count)
    )
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def flip_loss(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Cross-entropy between the position softmax and a soft flip vector."""
    log_probs = torch.log_softmax(scores, dim=-1)
    return -(targets * log_probs).sum(dim=-1).mean()


def evaluate_flip(model: nn.Module, data: TrainingSet, k_max: int = 5, batch_size: int = 256) -> FlipMetrics:
    model.eval()
    hits = np.zeros(k_max, dtype=np.int64)
    counts = np.zeros(k_max, dtype=np.int64)
    losses = []
    with torch.no_grad():
        for idx in _batches(len(data), batch_size, None):
            states = torch.from_numpy(data.states[idx.numpy()])
            targets = torch.from_numpy(data.flip_targets[idx.numpy()])
            scores = model(state_to_steps(states, data.n_bits))
            losses.append(float(flip_loss(scores, targets)) * len(idx))
            pred_rank = torch.argsort(scores, dim=-1, descending=True).numpy()
            ref = targets.numpy()
            for row in range(ref.shape[0]):
                ref_positions = np.flatnonzero(ref[row] > 0)
                ref_order = ref_positions[np.argsort(-ref[row][ref_positions], kind="stable")]
                depth = min(k_max, ref_order.size)
                counts[:depth] += 1
                hits[:depth] += pred_rank[row, :depth] == ref_order[:depth]
    return FlipMetrics(loss=sum(losses) / len(data), rank_hits=hits, rank_counts=counts)


def evaluate_validate(model: nn.Module, data: TrainingSet, batch_size: int = 256) -> ValidateMetrics:
    model.eval()
    preds = []
    losses = []
    labels = torch.from_numpy(data.actions.astype(np.int64))
    with torch.no_grad():
        for idx in _batches(len(data), batch_size, None):
            states = torch.from_numpy(data.states[idx.numpy()])
            logits = model(state_to_steps(states, data.n_bits))
            losses.append(float(nn.functional.cross_entropy(logits, labels[idx])) * len(idx))
            preds.append(logits.argmax(dim=-1))
    pred = torch.cat(preds).numpy()
    truth = labels.numpy()
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    tn = int(((pred == 0) & (truth == 0)).sum())
    majority = max(truth.mean(), 1.0 - truth.mean())
    return ValidateMetrics(
        loss=sum(losses) / len(data),
        accuracy=(tp + tn) / len(data),
        majority_accuracy=float(majority),
        reselect_precision=tp / (tp + fp) if tp + fp else 0.0,
        reselect_recall=tp / (tp + fn) if tp + fn else 0.0,
        continue_recall=tn / (tn + fp) if tn + fp else 0.0,
    )


def _checkpoint(model: nn.Module, config: TrainConfig, path: str | None, epoch: int) -> None:
    if path:
        torch.save({"state_dict": model.state_dict(), "config": config.__dict__, "epoch": epoch}, path)


def train_flip_model(
    train: TrainingSet,
    val: TrainingSet,
    config: TrainConfig,
    checkpoint: str | None = None,
    shuffle_labels: bool = False,
    log=print,
) -> tuple[nn.Module, FlipMetrics]:
    """Fit a flip scorer; returns the model and held-out metrics.

    `shuffle_labels` permutes reference vectors across records (control
    run: validation loss must stay at chance level).
    """
    if train.kind != KIND_FDNC:
        raise ValueError("flip training needs an f_dnc dataset")
    if train.code_digest != val.code_digest:
        raise ValueError("train/validation datasets come from different codes")
    torch.manual_seed(config.seed)
    input_size = train.state_len // train.n_bits
    model = build_model(config, input_size, HEAD_FLIP)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)

    targets = train.flip_targets
    if shuffle_labels:
        perm = np.random.default_rng(config.seed).permutation(len(train))
        targets = targets[perm]

    for epoch in range(config.epochs):
        model.train()
        running = 0.0
        for idx in _batches(len(train), config.batch_size, generator):
            sel = idx.numpy()
            states = torch.from_numpy(train.states[sel])
            refs = torch.from_numpy(targets[sel])
            optimizer.zero_grad()
            loss = flip_loss(model(state_to_steps(states, train.n_bits)), refs)
            loss.backward()
            optimizer.step()
            running += loss.item() * len(idx)
            if not np.isfinite(running):
                _checkpoint(model, config, checkpoint, epoch)
                raise RuntimeError(f"training diverged (loss {loss}) at epoch {epoch}")
        _checkpoint(model, config, checkpoint, epoch)
        metrics = evaluate_flip(model, val)
        log(
            f"epoch {epoch + 1}/{config.epochs}: train loss {running / len(train):.4f}, "
            f"val loss {metrics.loss:.4f}, first-position rate {metrics.rank_rates[0]:.4f}"
        )
    return model, evaluate_flip(model, val)


def train_validate_model(
    train: TrainingSet,
    val: TrainingSet,
    config: TrainConfig,
    checkpoint: str | None = None,
    log=print,
) -> tuple[nn.Module, ValidateMetrics]:
    """Fit a flip-validate classifier with class reweighting."""
    if train.kind != KIND_FVDNC:
        raise ValueError("validate training needs an fv_dnc dataset")
    if train.code_digest != val.code_digest:
        raise ValueError("train/validation datasets come from different codes")
    torch.manual_seed(config.seed)
    input_size = train.state_len // train.n_bits
    model = build_model(config, input_size, HEAD_VALIDATE)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)

    reselect_frac = float(train.actions.mean())
    if config.reselect_weight is not None:
        weights = torch.tensor([1.0, float(config.reselect_weight)], dtype=torch.float32)
    else:
        # square-root inverse class frequency: softens the 5:1 imbalance
        # without suppressing re-select recall (full inverse weighting does)
        w_cont = np.sqrt(1.0 / max(1.0 - reselect_frac, 1e-6))
        w_res = np.sqrt(1.0 / max(reselect_frac, 1e-6))
        weights = torch.tensor([w_cont, w_res], dtype=torch.float32)
    labels = torch.from_numpy(train.actions.astype(np.int64))

    for epoch in range(config.epochs):
        model.train()
        running = 0.0
        for idx in _batches(len(train), config.batch_size, generator):
            states = torch.from_numpy(train.states[idx.numpy()])
            optimizer.zero_grad()
            logits = model(state_to_steps(states, train.n_bits))
            loss = nn.functional.cross_entropy(logits, labels[idx], weight=weights)
            loss.backward()
            optimizer.step()
            running += loss.item() * len(idx)
            if not np.isfinite(running):
                _checkpoint(model, config, checkpoint, epoch)
                raise RuntimeError(f"training diverged (loss {loss}) at epoch {epoch}")
        _checkpoint(model, config, checkpoint, epoch)
        metrics = evaluate_validate(model, val)
        log(
            f"epoch {epoch + 1}/{config.epochs}: train loss {running / len(train):.4f}, "
            f"val acc {metrics.accuracy:.4f} (majority {metrics.majority_accuracy:.4f}), "
            f"re-select recall {metrics.reselect_recall:.4f}"
        )
    return model, evaluate_validate(model, val)
