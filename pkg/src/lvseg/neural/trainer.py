"""Mini-batch training loop with validation-based early stopping."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .augment import AugmentConfig, augment_pair
from .checkpoint import ModelCheckpoint
from .loss import generalized_dice_loss, one_hot
from .optim import Adam
from .unet import UNet

log = logging.getLogger(__name__)

CHECKPOINT_POLICIES = ("final_epoch", "best_val")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 50
    early_stop_patience: int = 15
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: Optional[AugmentConfig] = field(default_factory=AugmentConfig)
    seed: int = 0
    checkpoint_policy: str = "final_epoch"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.early_stop_patience >= self.max_epochs:
            raise ValueError("early_stop_patience must be smaller than max_epochs")
        if self.checkpoint_policy not in CHECKPOINT_POLICIES:
            raise ValueError(f"checkpoint_policy must be one of {CHECKPOINT_POLICIES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = None if self.augment is None else self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("augment"), dict):
            d["augment"] = AugmentConfig(**d["augment"])
        return cls(**d)


@dataclass
class SliceSet:
    """Stacked 2D training samples: images ``(N, H, W)`` in [0, 1], masks ``(N, H, W)`` bool."""

    images: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        if self.images.shape != self.masks.shape or self.images.ndim != 3:
            raise ValueError("images and masks must be congruent (N, H, W) stacks")

    def __len__(self):
        return self.images.shape[0]


def evaluate_loss(model: UNet, data: SliceSet, batch_size: int = 16) -> float:
    """Generalized Dice loss of the eval-mode model pooled over the whole set."""
    if len(data) == 0:
        return float("nan")
    probs = predict_probs(model, data.images, batch_size)
    return generalized_dice_loss(probs, one_hot(data.masks))[0]


def predict_probs(model: UNet, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    out = []
    for i in range(0, images.shape[0], batch_size):
        out.append(model.forward(images[i:i + batch_size, None], train=False))
    return np.concatenate(out, axis=0)


def train_step(model: UNet, opt: Adam, images: np.ndarray, masks: np.ndarray) -> float:
    probs = model.forward(images[:, None], train=True)
    loss, dprobs = generalized_dice_loss(probs, one_hot(masks))
    opt.step(model.params, model.backward(dprobs))
    return loss


def train_model(model: UNet, train: SliceSet, val: Optional[SliceSet], cfg: TrainConfig,
                history: Optional[dict] = None) -> tuple[ModelCheckpoint, dict]:
    """Train in place; returns the selected checkpoint and a run summary.

    The summary records the stopping epoch, the best validation epoch, the
    validation loss of the incoming model (``initial_val_loss``) and wall time.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    history = history if history is not None else {"train_loss": [], "val_loss": []}
    has_val = val is not None and len(val) > 0
    summary = {"initial_val_loss": evaluate_loss(model, val, cfg.batch_size) if has_val else None}
    best = (float("inf"), -1, None)
    since_best = 0
    t0 = time.perf_counter()
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            imgs, msks = train.images[idx], train.masks[idx]
            if cfg.augment is not None:
                pairs = [augment_pair(im, mk, cfg.augment, rng) for im, mk in zip(imgs, msks)]
                imgs = np.stack([p[0] for p in pairs])
                msks = np.stack([p[1] for p in pairs])
            losses.append(train_step(model, opt, imgs, msks))
        history["train_loss"].append(float(np.mean(losses)))
        if has_val:
            v = evaluate_loss(model, val, cfg.batch_size)
            history["val_loss"].append(v)
            if v < best[0]:
                best = (v, epoch, {k: a.copy() for k, a in model.state().items()})
                since_best = 0
            else:
                since_best += 1
            log.info("epoch %d train %.4f val %.4f", epoch, history["train_loss"][-1], v)
            if since_best >= cfg.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch, best[1])
                break
        else:
            log.info("epoch %d train %.4f", epoch, history["train_loss"][-1])
    summary.update(stop_epoch=epoch, best_epoch=best[1], best_val_loss=best[0] if has_val else None,
                   wall_seconds=time.perf_counter() - t0)
    if cfg.checkpoint_policy == "best_val" and best[2] is not None:
        model.load_state(best[2])
        chosen = best[1]
    else:
        chosen = epoch
    ckpt = ModelCheckpoint.from_model(model, epoch=chosen, history=history)
    return ckpt, summary
