"""Forward and backward passes of the U-Net building blocks.

All tensors are ``float64`` numpy arrays in ``(N, C, H, W)`` layout.  Each
``*_forward`` returns ``(out, cache)`` and the matching ``*_backward`` takes
``(dout, cache)`` and returns the input gradient followed by parameter
gradients.
"""
from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# convolution (stride 1, "same" padding, odd square kernel)
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, h, w))
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * h * w)


def conv2d_forward(x, w, b):
    _check(x.ndim == 4 and w.ndim == 4, "conv2d expects 4D input and weight")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    _check(ci == c, f"conv2d channel mismatch: input {c}, weight {ci}")
    _check(k == k2 and k % 2 == 1, "conv2d kernel must be square and odd")
    _check(b.shape == (o,), "conv2d bias shape mismatch")
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = _im2col(xp, k, h, wd)
    out = (w.reshape(o, -1) @ cols).reshape(o, n, h, wd).transpose(1, 0, 2, 3)
    out += b[None, :, None, None]
    return out, (cols, w, x.shape)


def conv2d_backward(dout, cache):
    cols, w, xshape = cache
    n, c, h, wd = xshape
    o, _, k, _ = w.shape
    p = k // 2
    d = dout.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (d @ cols.T).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = (w.reshape(o, -1).T @ d).reshape(c, k, k, n, h, wd)
    dxp = np.zeros((c, n, h + 2 * p, wd + 2 * p))
    for dy in range(k):
        for dx in range(k):
            dxp[:, :, dy:dy + h, dx:dx + wd] += dcols[:, dy, dx]
    dx_ = dxp[:, :, p:p + h, p:p + wd].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx_), dw, db


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2
# ---------------------------------------------------------------------------

def maxpool2d_forward(x):
    n, c, h, w = x.shape
    _check(h % 2 == 0 and w % 2 == 0, f"maxpool needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # ties go to the first maximal element of the window (row-major)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2d_backward(dout, cache):
    idx, (n, c, h, w) = cache
    win = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(win, idx[..., None], dout[..., None], axis=-1)
    dx = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return dx


# ---------------------------------------------------------------------------
# 2x2 transposed convolution, stride 2; weight is (C_in, C_out, 2, 2)
# ---------------------------------------------------------------------------

def tconv2d_forward(x, w, b):
    n, c, h, wd = x.shape
    _check(w.ndim == 4 and w.shape[0] == c and w.shape[2:] == (2, 2),
           f"tconv weight {w.shape} incompatible with input channels {c}")
    o = w.shape[1]
    y = np.tensordot(x, w, axes=([1], [0]))  # n, h, w, o, 2, 2
    out = y.transpose(0, 3, 1, 4, 2, 5).reshape(n, o, 2 * h, 2 * wd)
    out += b[None, :, None, None]
    return out, (x, w)


def tconv2d_backward(dout, cache):
    x, w = cache
    n, c, h, wd = x.shape
    o = w.shape[1]
    d = dout.reshape(n, o, h, 2, wd, 2)
    dx = np.tensordot(d, w, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    dw = np.tensordot(x, d, axes=([0, 2, 3], [0, 2, 4]))
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# batch normalization over (N, H, W) per channel
# ---------------------------------------------------------------------------

def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """In train mode the running statistics are updated in place."""
    _check(gamma.shape == (x.shape[1],), "batchnorm parameter shape mismatch")
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= BN_MOMENTUM
        running_mean += (1.0 - BN_MOMENTUM) * mean
        running_var *= BN_MOMENTUM
        running_var += (1.0 - BN_MOMENTUM) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, train)


def batchnorm2d_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True) / m
          - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / m)
    return dx * inv_std[None, :, None, None], dgamma, dbeta


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def softmax_forward(logits):
    """Softmax over the channel axis."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dprobs, probs):
    return probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
