"""Training loop: SGD with momentum, step learning-rate schedule, checkpoints.

The recipe trains for `epochs` passes of mini-batch SGD on cross-entropy with
momentum and weight decay; the learning rate starts at `lr0` and is multiplied
by `lr_decay_factor` at each epoch in `lr_decay_epochs` (0-indexed: epoch 50
onward runs at the decayed rate). Batch order is fixed by (seed, epoch), so
results are independent of data-loading schedule.

When a run directory is given, the loop writes a per-epoch CSV log
(epoch, lr, loss, train_acc) and checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .models import save_checkpoint


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    lr0: float = 0.1
    lr_decay_epochs: tuple[int, ...] = (50, 100)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if min(self.epochs, self.batch_size) <= 0 or self.lr0 <= 0:
            raise ValueError("epochs, batch_size and lr0 must be positive")
        if not 0 < self.lr_decay_factor:
            raise ValueError("lr_decay_factor must be positive")
        if list(self.lr_decay_epochs) != sorted(set(self.lr_decay_epochs)):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if self.lr_decay_epochs and self.lr_decay_epochs[-1] >= self.epochs:
            raise ValueError("lr_decay_epochs must be < epochs")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-indexed epoch under the step schedule."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{config.epochs - 1}")
    drops = sum(1 for e in config.lr_decay_epochs if e <= epoch)
    return config.lr0 * config.lr_decay_factor ** drops


def _as_tensors(dataset) -> tuple[torch.Tensor, torch.Tensor]:
    pixels = torch.from_numpy(np.ascontiguousarray(dataset.pixels))
    labels = torch.from_numpy(np.ascontiguousarray(dataset.labels))
    return pixels, labels


def train(model: torch.nn.Module, dataset, config: TrainConfig,
          run_dir: Path | str | None = None,
          device: str | torch.device = "cpu") -> list[dict]:
    """Train in place; returns the per-epoch history (epoch, lr, loss, train_acc).

    `dataset` is any object with uint8 `.pixels` (N x C x 32 x 32) and int
    `.labels`; pixels are scaled to [0, 1] per batch.
    """
    device = torch.device(device)
    model.to(device).train()
    pixels, labels = _as_tensors(dataset)
    n = len(labels)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr0,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)
    run_dir = Path(run_dir) if run_dir is not None else None
    log_path = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        log_path = run_dir / "train_log.csv"
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "lr", "loss", "train_acc"])

    history: list[dict] = []
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, epoch])).permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start:start + config.batch_size])
            x = pixels[idx].to(device).float() / 255.0
            y = labels[idx].to(device)
            optimizer.zero_grad()
            scores = model(x)
            loss = F.cross_entropy(scores, y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, sample {start}: {loss.item()}")
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(y)
            correct += (scores.argmax(dim=1) == y).sum().item()
        record = {"epoch": epoch, "lr": lr, "loss": loss_sum / n,
                  "train_acc": correct / n}
        history.append(record)
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerow([epoch, lr, record["loss"], record["train_acc"]])
        at_interval = (config.checkpoint_every
                       and (epoch + 1) % config.checkpoint_every == 0)
        if run_dir is not None and (at_interval or epoch == config.epochs - 1):
            save_checkpoint(model, run_dir / "checkpoints" / f"epoch_{epoch:04d}.pt",
                            epoch)
    model.eval()
    return history


@torch.no_grad()
def predict(model: torch.nn.Module, dataset, batch_size: int = 512,
            device: str | torch.device = "cpu",
            channels: slice | None = None) -> np.ndarray:
    """Argmax predictions over a dataset; `channels` restricts input channels."""
    device = torch.device(device)
    model.to(device).eval()
    pixels, _ = _as_tensors(dataset)
    if channels is not None:
        pixels = pixels[:, channels]
    preds = []
    for start in range(0, len(pixels), batch_size):
        x = pixels[start:start + batch_size].to(device).float() / 255.0
        preds.append(model(x).argmax(dim=1).cpu().numpy())
    return np.concatenate(preds)
