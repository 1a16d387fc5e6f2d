"""Binary training checkpoints.

Layout
------
``b"AFCK"`` magic, uint32 LE format version, uint32 LE header length ``H``,
then ``H`` bytes of UTF-8 JSON (sorted keys), then the raw little-endian
array blobs back to back. The header holds the config, epoch counter, Adam
step, loss history, generator state and a blob table
``[{"name", "dtype", "shape", "offset", "nbytes", "crc32"}]`` with offsets
relative to the start of the blob section.

Blob names are ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``.
Saving the result of a load reproduces the original file byte for byte.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..numerics import Tensor
from .config import TrainConfig
from .optim import AdamState
from .training import TrainState

MAGIC = b"AFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def _blobs(state: TrainState):
    for name, p in state.params.items():
        yield f"param/{name}", p.data
    for name in state.params:
        yield f"adam.m/{name}", state.adam.m[name]
    for name in state.params:
        yield f"adam.v/{name}", state.adam.v[name]


def to_bytes(state: TrainState) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in _blobs(state):
        arr = np.asarray(arr)
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        table.append({
            "name": name, "dtype": arr.dtype.newbyteorder("<").str, "shape": list(arr.shape),
            "offset": offset, "nbytes": len(raw), "crc32": zlib.crc32(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "adam_step": state.adam.step,
        "history": state.history,
        "step_losses": state.step_losses,
        "rng": state.rng.bit_generator.state,
        "blobs": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)


def from_bytes(raw: bytes) -> TrainState:
    if len(raw) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    body = raw[start:]
    arrays = {}
    for entry in header["blobs"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(body):
            raise CheckpointError(f"blob {entry['name']} runs past end of file")
        chunk = body[lo:hi]
        if zlib.crc32(chunk) != entry["crc32"]:
            raise CheckpointError(f"CRC mismatch in blob {entry['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    if header["blobs"] and header["blobs"][-1]["offset"] + header["blobs"][-1]["nbytes"] != len(body):
        raise CheckpointError("trailing bytes after last blob")

    config = TrainConfig.from_dict(header["config"])
    names = [e["name"][len("param/"):] for e in header["blobs"] if e["name"].startswith("param/")]
    params = {n: Tensor(arrays[f"param/{n}"], requires_grad=True, name=n) for n in names}
    adam = AdamState(header["adam_step"], {n: arrays[f"adam.m/{n}"] for n in names},
                     {n: arrays[f"adam.v/{n}"] for n in names})
    rng = np.random.default_rng()
    if header["rng"]["bit_generator"] != type(rng.bit_generator).__name__:
        raise CheckpointError(f"unsupported bit generator {header['rng']['bit_generator']}")
    rng.bit_generator.state = header["rng"]
    return TrainState(config, params, adam, rng, header["epoch"], header["history"], header["step_losses"])


def save_checkpoint(path, state: TrainState) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(state))
    return path


def load_checkpoint(path) -> TrainState:
    return from_bytes(Path(path).read_bytes())
