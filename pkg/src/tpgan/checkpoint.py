"""Self-describing checkpoint container.

Layout::

    b"TPGANCK1" | uint32 LE header length | JSON header | tensor data

The header names each network and lists its tensors in order as
``{name, shape, dtype, offset, count}``. Tensor data is raw little-endian
float32 regardless of the in-memory dtype; ``dtype`` records what to cast
back to on load.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import CorruptCheckpoint

MAGIC = b"TPGANCK1"


def save_checkpoint(path: str | Path, tensors: Mapping[str, Mapping[str, torch.Tensor]], profile: str,
                    epoch: int, meta: dict | None = None) -> Path:
    path = Path(path)
    header = {"profile": profile, "epoch": int(epoch), "meta": meta or {}, "networks": {}}
    chunks: list[bytes] = []
    offset = 0
    for net_name, state in tensors.items():
        entries = []
        for name, tensor in state.items():
            arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
            raw = np.ascontiguousarray(arr).tobytes()
            entries.append({"name": name, "shape": list(tensor.shape), "dtype": str(tensor.dtype).replace("torch.", ""),
                            "offset": offset, "count": int(arr.size)})
            chunks.append(raw)
            offset += len(raw)
        header["networks"][net_name] = entries
    blob = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for raw in chunks:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, dict[str, torch.Tensor]]]:
    """Return ``(header, {network: {tensor name: tensor}})``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc
    if raw[:8] != MAGIC or len(raw) < 12:
        raise CorruptCheckpoint(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen])
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    data = memoryview(raw)[12 + hlen:]
    nets: dict[str, dict[str, torch.Tensor]] = {}
    try:
        for net_name, entries in header["networks"].items():
            state = {}
            for e in entries:
                end = e["offset"] + 4 * e["count"]
                if end > len(data):
                    raise CorruptCheckpoint(f"{path}: tensor {net_name}.{e['name']} truncated")
                arr = np.frombuffer(data[e["offset"]:end], dtype="<f4").reshape(e["shape"])
                state[e["name"]] = torch.from_numpy(arr.copy()).to(getattr(torch, e["dtype"]))
            nets[net_name] = state
        header["epoch"], header["profile"]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed header ({exc})") from exc
    return header, nets
