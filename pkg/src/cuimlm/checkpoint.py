"""Binary checkpoint format.

Layout::

    b"UMLB" | uint32 LE version | uint32 LE header length | UTF-8 JSON header | payload

The header carries the configs, counters, RNG state, vocabulary and a tensor
directory (name, shape, byte offset into the payload). The payload is the
raw little-endian float64 data of every tensor in directory order.
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import BinaryIO, Union

import numpy as np

from .model import ModelConfig, check_params
from .training import Checkpoint, OptimizerState, TrainConfig

MAGIC = b"UMLB"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(Exception):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def _tensors(ckpt: Checkpoint) -> list:
    out = [("param/" + k, v) for k, v in ckpt.params.items()]
    out += [("adam_m/" + k, v) for k, v in ckpt.opt_state.m.items()]
    out += [("adam_v/" + k, v) for k, v in ckpt.opt_state.v.items()]
    return out


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    directory, chunks, offset = [], [], 0
    for name, arr in _tensors(ckpt):
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "step": ckpt.step,
        "optimizer_step": ckpt.opt_state.step,
        "rng_state": ckpt.rng_state,
        "vocab": list(ckpt.vocab),
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _U32.pack(VERSION) + _U32.pack(len(blob)) + blob + b"".join(chunks)


def save_checkpoint(ckpt: Checkpoint, sink: Union[str, os.PathLike, BinaryIO]) -> None:
    data = checkpoint_bytes(ckpt)
    if hasattr(sink, "write"):
        sink.write(data)
        return
    tmp = f"{os.fspath(sink)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, sink)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointTruncatedError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def load_checkpoint(source: Union[str, os.PathLike, BinaryIO, bytes]) -> Checkpoint:
    if isinstance(source, (bytes, bytearray)):
        return load_checkpoint(io.BytesIO(source))
    if not hasattr(source, "read"):
        with open(source, "rb") as fh:
            return load_checkpoint(fh)
    fh = source
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = _U32.unpack(_read_exact(fh, 4, "version"))
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    (length,) = _U32.unpack(_read_exact(fh, 4, "header length"))
    try:
        header = json.loads(_read_exact(fh, length, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start, end = entry["offset"], entry["offset"] + 8 * count
        if end > len(payload):
            raise CheckpointTruncatedError(f"tensor {entry['name']} needs bytes [{start}, {end}), payload has {len(payload)}")
        tensors[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f8").astype(np.float64).reshape(shape)

    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    model_cfg = ModelConfig.from_dict(header["model_config"])
    params = group("param/")
    check_params(params, model_cfg)
    return Checkpoint(
        model_config=model_cfg,
        params=params,
        opt_state=OptimizerState(group("adam_m/"), group("adam_v/"), header["optimizer_step"]),
        train_config=TrainConfig.from_dict(header["train_config"]),
        rng_state=header["rng_state"],
        step=header["step"],
        vocab=header["vocab"],
        version=version,
    )
