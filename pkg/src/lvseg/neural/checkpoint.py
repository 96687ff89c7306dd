"""Checkpoint files: one JSON manifest line, then float64 tensors in manifest order."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .unet import UNet, UNetConfig

FORMAT = "lvseg-checkpoint/1"


@dataclass(eq=False)
class ModelCheckpoint:
    config: UNetConfig
    tensors: dict
    epoch: int = 0
    history: dict = field(default_factory=lambda: {"train_loss": [], "val_loss": []})
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: UNet, epoch=0, history=None, meta=None) -> "ModelCheckpoint":
        return cls(model.config, {k: v.copy() for k, v in model.state().items()}, epoch,
                   history or {"train_loss": [], "val_loss": []}, dict(meta or {}))

    def to_model(self) -> UNet:
        model = UNet(self.config)
        model.load_state(self.tensors)
        return model

    def to_bytes(self) -> bytes:
        names = list(self.tensors)
        manifest = {
            "format": FORMAT,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "history": self.history,
            "meta": self.meta,
            "tensors": [{"name": n, "shape": list(self.tensors[n].shape)} for n in names],
        }
        head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
        body = b"".join(np.ascontiguousarray(self.tensors[n], dtype="<f8").tobytes() for n in names)
        return head + b"\n" + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        nl = data.find(b"\n")
        if nl < 0:
            raise ValueError("malformed checkpoint: no manifest line")
        manifest = json.loads(data[:nl].decode("utf-8"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
        cfg = UNetConfig(**manifest["config"])
        tensors = {}
        pos = nl + 1
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) * 8
            if pos + n > len(data):
                raise ValueError("malformed checkpoint: payload too short")
            tensors[entry["name"]] = np.frombuffer(data[pos:pos + n], dtype="<f8").reshape(shape).copy()
            pos += n
        if pos != len(data):
            raise ValueError("malformed checkpoint: trailing bytes")
        ckpt = cls(cfg, tensors, manifest["epoch"], manifest["history"], manifest.get("meta", {}))
        ckpt.to_model()  # validates names and shapes against the config
        return ckpt

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())
