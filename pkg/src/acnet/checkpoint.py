"""Binary checkpoint format.

Layout: ``b"ACN1"``, format version (u32 LE), header length (u32 LE), UTF-8
JSON header, then every tensor as little-endian float32 in directory order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import AcnetConfig, AcnetModel, build_model
from .optim import HyperParams, TrainState

MAGIC = b"ACN1"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def to_bytes(model: AcnetModel, state: TrainState | None = None, rng_state: dict | None = None) -> bytes:
    tensors = list(model.parameters().items())
    header = {
        "version": VERSION,
        "config": model.config.to_dict(),
        "fused": model.fused,
        "tensors": [],
    }
    if state is not None:
        header["train_state"] = {
            "step": state.step,
            "rng_seed": state.rng_seed,
            "hyper": vars(state.hyper),
            "rng_state": rng_state,
        }
        tensors += [(f"adam.m.{k}", v) for k, v in state.m.items()]
        tensors += [(f"adam.v.{k}", v) for k, v in state.v.items()]
    chunks = []
    offset = 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        header["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)


def save(path, model: AcnetModel, state: TrainState | None = None, rng_state: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(model, state, rng_state))
    tmp.replace(path)


def from_bytes(blob: bytes):
    """Returns ``(model, train_state or None, rng_state or None)``."""
    if len(blob) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + head_len
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from e
    if header.get("version") != version:
        raise CheckpointError("header version disagrees with file version")
    payload = memoryview(blob)[start:]
    values = {}
    expected = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if entry["offset"] != expected or n < 1:
            raise CheckpointError(f"tensor {entry['name']}: inconsistent offset")
        end = expected + 4 * n
        if end > len(payload):
            raise CheckpointError(f"tensor {entry['name']}: payload truncated")
        values[entry["name"]] = np.frombuffer(payload[expected:end], dtype="<f4").astype(np.float32).reshape(shape)
        expected = end
    if expected != len(payload):
        raise CheckpointError("trailing bytes after the last tensor")

    config = AcnetConfig.from_dict(header["config"])
    model = build_model(config, fused=bool(header["fused"]))
    params = {k: v for k, v in values.items() if not k.startswith("adam.")}
    model.load_parameters(params)

    state = rng_state = None
    ts = header.get("train_state")
    if ts is not None:
        state = TrainState(
            m={k: values[f"adam.m.{k}"] for k in params},
            v={k: values[f"adam.v.{k}"] for k in params},
            step=int(ts["step"]),
            hyper=HyperParams(**ts["hyper"]),
            rng_seed=int(ts["rng_seed"]),
        )
        rng_state = ts.get("rng_state")
    return model, state, rng_state


def load(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())


def load_model(path) -> AcnetModel:
    return load(path)[0]
