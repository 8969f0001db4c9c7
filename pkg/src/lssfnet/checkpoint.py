"""Binary checkpoint format.

Layout::

    b"LSSFCKPT"            8-byte magic
    uint32 LE              format version
    uint64 LE              header length in bytes
    header                 UTF-8 JSON: config, seed, epoch, optimizer scalars,
                           metadata and the tensor table
                           [{name, dims, offset, count}]
    payload                little-endian float32 values, tensors back to back

The header also carries the SHA-256 of the payload so truncation and
corruption are caught on load.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import ModelParams, NetworkConfig, init_params
from .optim import AdamState

MAGIC = b"LSSFCKPT"
VERSION = 1
_ARCH_KEYS = ("input_size", "widths", "in_channels", "sab_projections", "gsa_factor", "shuffle_groups",
              "focal_kernels", "mlp_ratio")


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: NetworkConfig
    tensors: dict[str, np.ndarray]
    optimizer: AdamState | None = None
    seed: int = 0
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, params: ModelParams, config: NetworkConfig, optimizer: AdamState | None = None,
                    seed: int = 0, epoch: int = 0, meta: dict | None = None) -> "Checkpoint":
        tensors = {k: t.data.astype("<f4", copy=True) for k, t in params.registry().items()}
        opt = None
        if optimizer is not None:
            opt = AdamState(**optimizer.hyper(),
                            m={k: v.astype("<f4", copy=True) for k, v in optimizer.m.items()},
                            v={k: v.astype("<f4", copy=True) for k, v in optimizer.v.items()})
        return cls(config, tensors, opt, seed, epoch, dict(meta or {}))

    def to_params(self, config: NetworkConfig | None = None, dtype=np.float32) -> ModelParams:
        if config is not None:
            check_compatible(self.config, config)
        params = init_params(self.config, dtype=dtype)
        reg = params.registry()
        missing = sorted(set(reg) - set(self.tensors))
        extra = sorted(set(self.tensors) - set(reg))
        if missing or extra:
            raise ConfigMismatchError(f"checkpoint tensors do not match the network: missing {missing[:5]}, extra {extra[:5]}")
        for name, t in reg.items():
            src = self.tensors[name]
            if src.shape != t.shape:
                raise ConfigMismatchError(f"{name}: checkpoint shape {src.shape} != network shape {t.shape}")
            t.data = src.astype(dtype, copy=True)
        return params

    def optimizer_state(self, dtype=np.float32) -> AdamState | None:
        if self.optimizer is None:
            return None
        o = self.optimizer
        return AdamState(**o.hyper(), m={k: v.astype(dtype, copy=True) for k, v in o.m.items()},
                         v={k: v.astype(dtype, copy=True) for k, v in o.v.items()})


def check_compatible(saved: NetworkConfig, wanted: NetworkConfig) -> None:
    a, b = saved.to_dict(), wanted.to_dict()
    diffs = [f"{k}: checkpoint {a[k]} vs requested {b[k]}" for k in _ARCH_KEYS if a[k] != b[k]]
    if diffs:
        raise ConfigMismatchError("checkpoint config mismatch: " + "; ".join(diffs))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    table = []
    blobs = []
    offset = 0
    items = list(ckpt.tensors.items())
    if ckpt.optimizer is not None:
        items += [(f"adam.m/{k}", v) for k, v in ckpt.optimizer.m.items()]
        items += [(f"adam.v/{k}", v) for k, v in ckpt.optimizer.v.items()]
    for name, arr in items:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "dims": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(data)
        offset += len(data)
    payload = b"".join(blobs)
    header = {
        "config": ckpt.config.to_dict(),
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "optimizer": None if ckpt.optimizer is None else ckpt.optimizer.hyper(),
        "meta": ckpt.meta,
        "tensors": table,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        fh.write(payload)
    return path


def load_checkpoint(path, config: NetworkConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if len(raw) < 20:
        raise CheckpointError(f"{path} is truncated")
    version, head_len = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(raw) < 20 + head_len:
        raise CheckpointError(f"{path} is truncated inside the header")
    header = json.loads(raw[20:20 + head_len].decode())
    payload = raw[20 + head_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path} is truncated: payload has {len(payload)} of {header['payload_bytes']} bytes")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path} payload checksum mismatch")
    tensors: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for row in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=row["count"], offset=row["offset"]).reshape(row["dims"]).copy()
        name = row["name"]
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            tensors[name] = arr
    opt = None if header["optimizer"] is None else AdamState(**header["optimizer"], m=m, v=v)
    cfg = NetworkConfig.from_dict(header["config"])
    if config is not None:
        check_compatible(cfg, config)
    return Checkpoint(cfg, tensors, opt, header["seed"], header["epoch"], header["meta"])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
