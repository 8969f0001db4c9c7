"""Training and evaluation loops."""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint, check_compatible
from .data import DatasetManifest, load_dataset
from .losses import LossConfig, combined_loss
from .metrics import MetricsReport, aggregate, confusion
from .network import ModelParams, NetworkConfig, forward, init_params, predict_mask
from .optim import AdamState, EarlyStopState, adam_step, early_stop_update
from .tensor import no_grad

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_jaccard")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    max_steps: int | None = None
    patience: int = 9
    start_epoch: int = 10
    min_delta: float = 0.0
    monitor: str = "auto"  # jaccard when a validation set is given, else val_loss
    threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.monitor not in ("auto", "jaccard", "val_loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        """Batch 24, lr 1e-3, Adam(0.9, 0.999)."""
        return cls(batch_size=24, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown train config key(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict]
    batch_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def write_history(self, path) -> Path:
        return write_history(self.history, path)


def write_history(history: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k) for k in HISTORY_FIELDS})
    return path


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, DatasetManifest):
        return load_dataset(dataset)
    images, masks = dataset
    images = np.asarray(images, dtype=np.float32)
    masks = np.asarray(masks, dtype=np.float32)
    if masks.ndim == 3:
        masks = masks[..., None]
    if len(images) == 0:
        raise ValueError("dataset is empty")
    if images.shape[:3] != masks.shape[:3] or masks.shape[-1] != 1:
        raise ValueError(f"image/mask shape mismatch: {images.shape} vs {masks.shape}")
    return images, masks


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Sample order for an epoch; depends only on ``(seed, epoch)`` so a
    resumed run replays the same sequence."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def _step_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch, 1])


def _batch_loss(params, config, loss_cfg, x, y, rng, parts=None):
    prob = forward(x, params, config, "train", rng)
    return combined_loss(prob, y, loss_cfg, parts)


def _running_stats(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.registry().items() if not t.requires_grad}


def _restore_stats(params: ModelParams, saved: dict[str, np.ndarray]) -> None:
    reg = params.registry()
    for k, v in saved.items():
        reg[k].data = v


def probe_loss(params, config, loss_cfg, images, masks, seed, epoch, batch_size) -> float:
    """Train-mode loss of ``params`` on the first batch of ``epoch`` without
    updating anything (BN running statistics are restored afterwards)."""
    order = epoch_order(seed, epoch, len(images))
    idx = order[:batch_size]
    saved = _running_stats(params)
    with no_grad():
        loss = _batch_loss(params, config, loss_cfg, images[idx], masks[idx], _step_rng(seed, epoch, 0))
    _restore_stats(params, saved)
    return loss.item()


def train(config: NetworkConfig, dataset, loss_cfg: LossConfig | None = None, init: Checkpoint | None = None,
          train_cfg: TrainConfig | None = None, val_dataset=None, resume: bool = True,
          augment: Callable[[np.ndarray, np.ndarray, np.random.Generator], tuple[np.ndarray, np.ndarray]] | None = None,
          ) -> TrainResult:
    """Mini-batch Adam training with per-epoch validation and early stopping.

    ``init`` warm-starts from a checkpoint. With ``resume=True`` the epoch
    counter and optimizer moments continue from it, so an identical data
    order reproduces the run exactly; with ``resume=False`` only the weights
    are taken (transfer learning).
    """
    loss_cfg = loss_cfg or LossConfig()
    tc = train_cfg or TrainConfig()
    images, masks = _as_arrays(dataset)
    if images.shape[1] != config.input_size:
        raise ValueError(f"images are {images.shape[1]} px but the network expects {config.input_size}")
    val = _as_arrays(val_dataset) if val_dataset is not None else None
    monitor = tc.monitor if tc.monitor != "auto" else ("jaccard" if val is not None else "val_loss")
    val_images, val_masks = val if val is not None else (images, masks)

    start_epoch = 1
    if init is None:
        params = init_params(config, seed=tc.seed)
        opt = AdamState(tc.lr, tc.beta1, tc.beta2, tc.adam_eps)
        log.info("fresh init, seed=%d", tc.seed)
    else:
        check_compatible(init.config, config)
        params = init.to_params(config)
        opt = init.optimizer_state() if resume else None
        if opt is None:
            opt = AdamState(tc.lr, tc.beta1, tc.beta2, tc.adam_eps)
        if resume:
            start_epoch = init.epoch + 1
        log.info("warm start from checkpoint (epoch %d, resume=%s), seed=%d", init.epoch, resume, tc.seed)

    learn = params.learnable()
    stopper = EarlyStopState(monitor, tc.patience, tc.start_epoch, tc.min_delta)
    history: list[dict] = []
    batch_losses: list[float] = []
    best_value = None
    best_ckpt = None
    steps = 0
    stopped = False
    epoch = start_epoch - 1
    n = len(images)
    for epoch in range(start_epoch, start_epoch + tc.epochs):
        order = epoch_order(tc.seed, epoch, n)
        epoch_losses = []
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            x, y = images[idx], masks[idx]
            rng = _step_rng(tc.seed, epoch, b)
            if augment is not None:
                x, y = augment(x, y, rng)
            for t in learn.values():
                t.grad = None
            loss = _batch_loss(params, config, loss_cfg, x, y, rng)
            loss.backward()
            adam_step(learn, {k: t.grad for k, t in learn.items()}, opt)
            epoch_losses.append(loss.item())
            steps += 1
            if tc.max_steps is not None and steps >= tc.max_steps:
                break
        batch_losses.extend(epoch_losses)
        report = evaluate_params(params, config, (val_images, val_masks), loss_cfg, tc.threshold)
        val_loss = report.loss_bce * loss_cfg.bce_weight + report.loss_jaccard * loss_cfg.jaccard_weight
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_loss": val_loss,
               "val_jaccard": report.jaccard}
        history.append(row)
        log.info("epoch %d train_loss=%.5f val_loss=%.5f val_jaccard=%.4f", epoch, row["train_loss"], val_loss,
                 report.jaccard)
        value = report.jaccard if monitor == "jaccard" else val_loss
        better = best_value is None or (value > best_value if monitor == "jaccard" else value < best_value)
        if better:
            best_value = value
            best_ckpt = Checkpoint.from_params(params, config, None, tc.seed, epoch,
                                               {"monitor": monitor, "value": value})
        stopper, stop = early_stop_update(stopper, epoch, value)
        if stop:
            stopped = True
            log.info("early stop at epoch %d (best epoch %s)", epoch, stopper.best_epoch)
            break
        if tc.max_steps is not None and steps >= tc.max_steps:
            break

    final_loss = probe_loss(params, config, loss_cfg, images, masks, tc.seed, epoch + 1, tc.batch_size)
    last = Checkpoint.from_params(params, config, opt, tc.seed, epoch,
                                  {"final_loss": final_loss, "steps": steps, "monitor": monitor})
    return TrainResult(best_ckpt or last, last, history, batch_losses, stopped)


def evaluate_params(params: ModelParams, config: NetworkConfig, dataset, loss_cfg: LossConfig | None = None,
                    threshold: float = 0.5, mode: str = "per-image", batch_size: int = 8) -> MetricsReport:
    loss_cfg = loss_cfg or LossConfig()
    images, masks = _as_arrays(dataset)
    counts, bce, jac = [], [], []
    with no_grad():
        for start in range(0, len(images), batch_size):
            prob = forward(images[start:start + batch_size], params, config, "infer")
            pred = predict_mask(prob, threshold)
            for i in range(prob.shape[0]):
                gt = masks[start + i]
                parts: dict = {}
                combined_loss(prob.data[i], gt.astype(prob.dtype), loss_cfg, parts)
                bce.append(parts["bce"])
                jac.append(parts["jaccard"])
                counts.append(confusion(pred[i], gt[..., 0].astype(np.uint8)))
    return aggregate(counts, mode, float(np.mean(bce)), float(np.mean(jac)))


def evaluate(checkpoint: Checkpoint, dataset, loss_cfg: LossConfig | None = None, threshold: float = 0.5,
             mode: str = "per-image") -> MetricsReport:
    images, masks = _as_arrays(dataset)
    if images.shape[1] != checkpoint.config.input_size:
        raise ValueError(f"dataset images are {images.shape[1]} px, checkpoint expects {checkpoint.config.input_size}")
    params = checkpoint.to_params()
    return evaluate_params(params, checkpoint.config, (images, masks), loss_cfg, threshold, mode)


