"""
Parameter checkpoints

Byte layout (all integers little-endian):

    offset  size  field
    0       8     magic  b"DFGCKPT\\x00"
    8       4     uint32 format version (1)
    12      4     uint32 length L of the JSON config
    16      L     UTF-8 JSON config (model / training settings)
    16+L    4     uint32 number of parameter blocks N
    then N blocks:
            2     uint16 length of the parameter name
            n     UTF-8 parameter name
            1     uint8 rank R
            4·R   uint32 extents
            4·P   float32 values, row-major (P = product of extents)
"""

import json
import os
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

MAGIC = b"DFGCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint"""


def encode_checkpoint(params: Dict[str, np.ndarray], config: Dict) -> bytes:
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(config_bytes)), config_bytes,
              struct.pack("<I", len(params))]
    for name, value in params.items():
        name_bytes = name.encode("utf-8")
        value = np.asarray(value)
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Tuple[Dict, Dict[str, np.ndarray]]:
    offset = 0

    def read(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(blob):
            raise CheckpointError(f"checkpoint truncated at byte {offset} (needed {size} more)")
        chunk = blob[offset:offset + size]
        offset += size
        return chunk

    if read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, config_len = struct.unpack("<II", read(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = json.loads(read(config_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"bad config block: {e}") from e

    (count,) = struct.unpack("<I", read(4))
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read(2))
        name = read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", read(1))
        shape = struct.unpack(f"<{rank}I", read(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(read(4 * size), dtype="<f4").reshape(shape).copy()
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after the last block")
    return config, params


def save_checkpoint(path: Union[str, Path], params: Dict[str, np.ndarray], config: Dict) -> Path:
    """Write atomically (temp file + rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(params, config))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict, Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        return decode_checkpoint(path.read_bytes())
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from e
