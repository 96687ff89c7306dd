"""Generalized Dice loss with inverse squared class-volume weights."""
from __future__ import annotations

import numpy as np

GDL_EPS = 1e-6


def generalized_dice_loss(probs: np.ndarray, target: np.ndarray, eps: float = GDL_EPS):
    """Return ``(loss, d loss / d probs)`` pooled over the whole batch.

    ``loss = 1 - 2 * sum_l w_l sum_i r_li p_li / sum_l w_l sum_i (r_li + p_li)``
    with ``w_l = 1 / (sum_i r_li + eps)**2``.
    """
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape}, target {target.shape}")
    axes = (0,) + tuple(range(2, probs.ndim))
    w = 1.0 / (target.sum(axis=axes) + eps) ** 2
    num = (w * (target * probs).sum(axis=axes)).sum()
    den = (w * (target + probs).sum(axis=axes)).sum()
    loss = 1.0 - 2.0 * num / den
    shape = (1, -1) + (1,) * (probs.ndim - 2)
    wb = w.reshape(shape)
    grad = -2.0 * wb * (target * den - num) / den ** 2
    return float(loss), grad


def one_hot(masks: np.ndarray, n_classes: int = 2) -> np.ndarray:
    """``(N, H, W)`` integer/bool labels to ``(N, C, H, W)`` float one-hot."""
    labels = np.asarray(masks).astype(np.intp)
    out = np.zeros((labels.shape[0], n_classes) + labels.shape[1:])
    for c in range(n_classes):
        out[:, c] = labels == c
    return out
