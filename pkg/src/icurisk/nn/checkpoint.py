"""Binary checkpoint container.

Layout (little-endian):

    magic            4 bytes  b"ICKP"
    version          u32      (currently 1)
    kind             u16 len + utf-8   ("deep" or "logreg")
    n_params         u32
    per parameter:   u16 name len + utf-8 name, u8 ndim, u32 dims...,
                     float32 values (C order)
    has_moments      u8
    if has_moments:  u64 step, then per parameter m then v (float32)
    footer:          u32 epoch, f64 best validation AUROC, u32 patience
                     counter, u32 config block length + utf-8 key=value
                     lines
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ParameterSet

MAGIC = b"ICKP"
VERSION = 1


@dataclass
class Checkpoint:
    kind: str  # "deep" | "logreg"
    arrays: dict[str, np.ndarray]
    epoch: int = 0
    best_val_auroc: float = float("nan")
    patience_counter: int = 0
    config_text: str = ""
    step: int = 0
    moments_m: dict[str, np.ndarray] = field(default_factory=dict)
    moments_v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def has_moments(self) -> bool:
        return bool(self.moments_m)

    def config_dict(self) -> dict[str, str]:
        out = {}
        for line in self.config_text.splitlines():
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
        return out


def from_parameter_set(params: ParameterSet, kind: str = "deep",
                       include_moments: bool = False, **meta) -> Checkpoint:
    ckpt = Checkpoint(kind=kind, arrays=params.state_arrays(), **meta)
    if include_moments and params.m:
        ckpt.step = params.step
        ckpt.moments_m = {k: v.copy() for k, v in params.m.items()}
        ckpt.moments_v = {k: v.copy() for k, v in params.v.items()}
    return ckpt


def _write_str(fh, text: str) -> None:
    raw = text.encode()
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode()


def save(ckpt: Checkpoint, path: Path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, ckpt.kind)
        names = list(ckpt.arrays)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(ckpt.arrays[name], np.float32)
            _write_str(fh, name)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
        fh.write(struct.pack("<B", 1 if ckpt.has_moments else 0))
        if ckpt.has_moments:
            fh.write(struct.pack("<Q", ckpt.step))
            for name in names:
                fh.write(np.ascontiguousarray(ckpt.moments_m[name],
                                              np.float32).tobytes())
                fh.write(np.ascontiguousarray(ckpt.moments_v[name],
                                              np.float32).tobytes())
        raw_cfg = ckpt.config_text.encode()
        fh.write(struct.pack("<IdI", ckpt.epoch, ckpt.best_val_auroc,
                             ckpt.patience_counter))
        fh.write(struct.pack("<I", len(raw_cfg)))
        fh.write(raw_cfg)


def load(path: Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        kind = _read_str(fh)
        (n_params,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            name = _read_str(fh)
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(
                fh.read(4 * count), np.float32).reshape(shape).copy()
        (has_moments,) = struct.unpack("<B", fh.read(1))
        ckpt = Checkpoint(kind=kind, arrays=arrays)
        if has_moments:
            (ckpt.step,) = struct.unpack("<Q", fh.read(8))
            for name in arrays:
                count = arrays[name].size
                shape = arrays[name].shape
                ckpt.moments_m[name] = np.frombuffer(
                    fh.read(4 * count), np.float32).reshape(shape).copy()
                ckpt.moments_v[name] = np.frombuffer(
                    fh.read(4 * count), np.float32).reshape(shape).copy()
        ckpt.epoch, ckpt.best_val_auroc, ckpt.patience_counter = struct.unpack(
            "<IdI", fh.read(16))
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        ckpt.config_text = fh.read(cfg_len).decode()
    return ckpt
