"""Binary checkpoint format for trained weights.

Layout: 8-byte magic "ICLCOT01", a uint32-LE length-prefixed UTF-8 JSON
header (model config plus a parameter manifest of name/shape/offset/dtype),
the raw little-endian tensor payloads in manifest order, and a trailing
uint32-LE CRC32 of the payload. The header JSON is canonical (sorted keys)
so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointMismatchError,
)
from .model import ModelConfig, TransformerWeights

MAGIC = b"ICLCOT01"

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def save_checkpoint(weights: TransformerWeights, path: str | Path) -> None:
    names = sorted(weights.arrays)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        a = weights.arrays[name]
        dtype = "<f8" if a.dtype == np.float64 else "<f4"
        blob = np.ascontiguousarray(a, dtype=_DTYPES[dtype]).tobytes()
        manifest.append(
            {"name": name, "shape": list(a.shape), "offset": offset, "dtype": dtype}
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"model_config": weights.config.to_dict(), "manifest": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(blobs)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(
    path: str | Path, expected_config: ModelConfig | None = None
) -> TransformerWeights:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if len(raw) < header_end + 4:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[header_start:header_end].decode("utf-8"))
        config = ModelConfig.from_dict(header["model_config"])
        manifest = header["manifest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: unparseable header ({exc})") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointMismatchError(
            f"{path}: checkpoint config {config.to_dict()} != runtime config "
            f"{expected_config.to_dict()}"
        )
    payload = raw[header_end:-4]
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(payload) != crc_stored:
        raise CheckpointIntegrityError(f"{path}: payload CRC mismatch")
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointFormatError(f"{path}: unknown dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape)) * dtype.itemsize
        start = entry["offset"]
        if start + n_bytes > len(payload):
            raise CheckpointFormatError(f"{path}: truncated payload at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(
            payload[start : start + n_bytes], dtype=dtype
        ).reshape(shape).copy()
    return TransformerWeights(config, arrays)
