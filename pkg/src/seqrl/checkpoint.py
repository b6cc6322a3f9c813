"""Checkpoint container and its on-disk format.

Layout: magic, a little-endian uint64 header length, a JSON header naming
the format version, step, publish version, model config, and the tensor
index (name + shape, in order), then the payloads concatenated row-major
as little-endian float32.  Loading restores float64 working copies; a
load/save round trip reproduces the file byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig

MAGIC = b"SQRLCKP1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PolicyCheckpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    step: int = 0
    version: int = 0

    def with_params(self, params: dict[str, np.ndarray], step: int, version: int) -> "PolicyCheckpoint":
        return PolicyCheckpoint(params=params, config=self.config, step=step, version=version)


def save_checkpoint(ckpt: PolicyCheckpoint, path) -> None:
    names = list(ckpt.params.keys())
    header = {
        "format": FORMAT_VERSION,
        "step": int(ckpt.step),
        "version": int(ckpt.version),
        "model": dataclasses.asdict(ckpt.config),
        "tensors": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> PolicyCheckpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    (hlen,) = np.frombuffer(raw[off : off + 8], dtype="<u8")
    off += 8
    try:
        header = json.loads(raw[off : off + int(hlen)].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt checkpoint header") from e
    off += int(hlen)
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
    params: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 4 * count
        if end > len(raw):
            raise ValueError(f"{path}: truncated payload for tensor {entry['name']}")
        arr = np.frombuffer(raw[off:end], dtype="<f4").reshape(shape)
        params[entry["name"]] = arr.astype(np.float64)
        off = end
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor payloads")
    cfg = ModelConfig(**header["model"])
    return PolicyCheckpoint(params=params, config=cfg,
                            step=int(header["step"]), version=int(header["version"]))
