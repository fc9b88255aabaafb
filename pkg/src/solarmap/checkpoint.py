"""Named-tensor archive used for both network checkpoints.

Binary layout (little-endian, documented bit-exactly in docs/formats.md):

    bytes 0..7    uint64 LE: byte length H of the JSON header
    bytes 8..8+H  UTF-8 JSON: {"tensors": {name: {"dtype", "shape", "offset",
                  "nbytes"}}, "metadata": {...}}
    8+H..         tensor payload; each tensor is raw C-order bytes at
                  `offset` relative to the payload start

Tensor names are sorted and the header JSON is canonical (sorted keys, no
whitespace), so identical content produces identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

_HEADER_LEN_BYTES = 8


@dataclass
class ModelCheckpoint:
    """Named weight tensors plus training metadata (config snapshot, epoch,
    loss history)."""

    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def save_checkpoint(ckpt: ModelCheckpoint, path: Path | str) -> None:
    path = Path(path)
    names = sorted(ckpt.tensors)
    index = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name])
        raw = arr.tobytes()
        index[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"tensors": index, "metadata": ckpt.metadata}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(header).to_bytes(_HEADER_LEN_BYTES, "little"))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: Path | str) -> ModelCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER_LEN_BYTES:
        raise CheckpointError(f"{path}: truncated archive")
    hlen = int.from_bytes(data[:_HEADER_LEN_BYTES], "little")
    if len(data) < _HEADER_LEN_BYTES + hlen:
        raise CheckpointError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(data[_HEADER_LEN_BYTES : _HEADER_LEN_BYTES + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or "tensors" not in header:
        raise CheckpointError(f"{path}: header missing 'tensors'")

    payload = data[_HEADER_LEN_BYTES + hlen :]
    tensors: dict[str, np.ndarray] = {}
    for name, spec in header["tensors"].items():
        try:
            start, nbytes = spec["offset"], spec["nbytes"]
            raw = payload[start : start + nbytes]
            if len(raw) != nbytes:
                raise CheckpointError(f"{path}: tensor '{name}' payload truncated")
            arr = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad tensor record '{name}': {exc}") from exc
        tensors[name] = arr.copy()
    return ModelCheckpoint(tensors=tensors, metadata=header.get("metadata", {}))
