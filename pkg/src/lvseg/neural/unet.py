"""A 2D U-Net with explicit backward pass.

Every encoder level is two ``conv3x3 -> batchnorm -> relu`` units; levels are
joined by 2x2 max pooling and the filter count doubles on the way down.  The
decoder mirrors this with 2x2 transposed convolutions that halve the filter
count, concatenates the encoder features of the same resolution, and ends in
a 1x1 convolution and a two-class softmax.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 5
    base_filters: int = 8
    input_hw: tuple = (96, 96)
    in_channels: int = 1
    out_channels: int = 2

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("a U-Net needs at least 2 levels")
        if self.base_filters < 1:
            raise ValueError("base_filters must be positive")
        object.__setattr__(self, "input_hw", tuple(int(v) for v in self.input_hw))
        step = 2 ** (self.levels - 1)
        if any(v % step for v in self.input_hw):
            raise ValueError(f"input size {self.input_hw} not divisible by {step}")

    def filters(self, level: int) -> int:
        return self.base_filters * 2 ** level

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        return d

    @classmethod
    def paper_profile(cls) -> "UNetConfig":
        return cls(levels=5, base_filters=64, input_hw=(256, 256))


class UNet:
    """Parameters live in ``params`` and batchnorm statistics in ``buffers``,
    both as ordered name -> array dicts."""

    def __init__(self, config: UNetConfig, rng: np.random.Generator = None):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = rng if rng is not None else np.random.default_rng(0)
        c_in = config.in_channels
        for lvl in range(config.levels):
            f = config.filters(lvl)
            self._double_conv(f"enc{lvl}", c_in, f, rng)
            c_in = f
        for lvl in range(config.levels - 2, -1, -1):
            f = config.filters(lvl)
            fan_in = config.filters(lvl + 1) * 4
            self.params[f"up{lvl}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (config.filters(lvl + 1), f, 2, 2))
            self.params[f"up{lvl}.b"] = np.zeros(f)
            self._double_conv(f"dec{lvl}", 2 * f, f, rng)
        f0 = config.filters(0)
        self.params["head.w"] = rng.normal(0.0, np.sqrt(2.0 / f0), (config.out_channels, f0, 1, 1))
        self.params["head.b"] = np.zeros(config.out_channels)
        self._cache = None

    def _double_conv(self, name, c_in, c_out, rng):
        for i, ci in ((1, c_in), (2, c_out)):
            self.params[f"{name}.conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / (ci * 9)), (c_out, ci, 3, 3))
            self.params[f"{name}.conv{i}.b"] = np.zeros(c_out)
            self.params[f"{name}.bn{i}.gamma"] = np.ones(c_out)
            self.params[f"{name}.bn{i}.beta"] = np.zeros(c_out)
            self.buffers[f"{name}.bn{i}.running_mean"] = np.zeros(c_out)
            self.buffers[f"{name}.bn{i}.running_var"] = np.ones(c_out)

    # -- forward -----------------------------------------------------------

    def _unit_forward(self, name, x, train, caches):
        p, b = self.params, self.buffers
        for i in (1, 2):
            x, c_conv = L.conv2d_forward(x, p[f"{name}.conv{i}.w"], p[f"{name}.conv{i}.b"])
            x, c_bn = L.batchnorm2d_forward(x, p[f"{name}.bn{i}.gamma"], p[f"{name}.bn{i}.beta"],
                                            b[f"{name}.bn{i}.running_mean"],
                                            b[f"{name}.bn{i}.running_var"], train)
            x, c_relu = L.relu_forward(x)
            caches[name + str(i)] = (c_conv, c_bn, c_relu)
        return x

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Class probabilities ``(N, out_channels, H, W)``."""
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected input (N, {cfg.in_channels}, H, W), got {x.shape}")
        step = 2 ** (cfg.levels - 1)
        if x.shape[2] % step or x.shape[3] % step:
            raise ValueError(f"spatial size {x.shape[2:]} not divisible by {step}")
        caches = {}
        skips = []
        h = np.asarray(x, dtype=np.float64)
        for lvl in range(cfg.levels):
            h = self._unit_forward(f"enc{lvl}", h, train, caches)
            if lvl < cfg.levels - 1:
                skips.append(h)
                h, caches[f"pool{lvl}"] = L.maxpool2d_forward(h)
        for lvl in range(cfg.levels - 2, -1, -1):
            h, caches[f"up{lvl}"] = L.tconv2d_forward(h, self.params[f"up{lvl}.w"], self.params[f"up{lvl}.b"])
            h = np.concatenate([skips[lvl], h], axis=1)
            h = self._unit_forward(f"dec{lvl}", h, train, caches)
        logits, caches["head"] = L.conv2d_forward(h, self.params["head.w"], self.params["head.b"])
        probs = L.softmax_forward(logits)
        caches["probs"] = probs
        self._cache = caches
        return probs

    # -- backward ----------------------------------------------------------

    def _unit_backward(self, name, d, grads, caches):
        for i in (2, 1):
            c_conv, c_bn, c_relu = caches[name + str(i)]
            d = L.relu_backward(d, c_relu)
            d, grads[f"{name}.bn{i}.gamma"], grads[f"{name}.bn{i}.beta"] = L.batchnorm2d_backward(d, c_bn)
            d, grads[f"{name}.conv{i}.w"], grads[f"{name}.conv{i}.b"] = L.conv2d_backward(d, c_conv)
        return d

    def backward(self, dprobs: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every parameter given d(loss)/d(probs) of the last forward."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        caches = self._cache
        cfg = self.config
        grads: dict[str, np.ndarray] = {}
        d = L.softmax_backward(dprobs, caches["probs"])
        d, grads["head.w"], grads["head.b"] = L.conv2d_backward(d, caches["head"])
        dskips = {}
        for lvl in range(cfg.levels - 1):
            d = self._unit_backward(f"dec{lvl}", d, grads, caches)
            f = cfg.filters(lvl)
            dskips[lvl] = d[:, :f]
            d, grads[f"up{lvl}.w"], grads[f"up{lvl}.b"] = L.tconv2d_backward(
                np.ascontiguousarray(d[:, f:]), caches[f"up{lvl}"])
        for lvl in range(cfg.levels - 1, -1, -1):
            d = self._unit_backward(f"enc{lvl}", d, grads, caches)
            if lvl > 0:
                d = L.maxpool2d_backward(d, caches[f"pool{lvl - 1}"]) + dskips[lvl - 1]
        self.input_grad_ = d
        return {k: grads[k] for k in self.params}

    # -- state ---------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        """Parameters followed by buffers, in a fixed order."""
        out = dict(self.params)
        out.update(self.buffers)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for store in (self.params, self.buffers):
            for k in store:
                if k not in state:
                    raise KeyError(f"missing tensor {k!r}")
                if state[k].shape != store[k].shape:
                    raise ValueError(f"tensor {k!r}: shape {state[k].shape} != {store[k].shape}")
                store[k] = np.array(state[k], dtype=np.float64)

    def copy(self) -> "UNet":
        other = UNet.__new__(UNet)
        other.config = self.config
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        other._cache = None
        return other


def unet_forward(model: UNet, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    return model.forward(batch, train=mode == "train")
