"""
Binary checkpoints of parameter vectors.

Layout (little-endian): 4-byte magic b"FCEW", uint32 version, uint64 d, then d float64.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np

from fedce.exceptions.errors import CheckpointFormatError
from fedce.models.predictor import ParamVector

MAGIC = b"FCEW"
VERSION = 1
HEADER = struct.Struct("<4sIQ")


def encode_params(w: ParamVector) -> bytes:
    values = np.asarray(w, dtype=np.float64)
    if values.ndim != 1:
        raise CheckpointFormatError("only flat parameter vectors can be checkpointed")
    if not np.all(np.isfinite(values)):
        raise CheckpointFormatError("parameter vector has non-finite entries")
    return HEADER.pack(MAGIC, VERSION, values.size) + values.astype("<f8").tobytes()


def decode_params(payload: bytes) -> ParamVector:
    if len(payload) < HEADER.size:
        raise CheckpointFormatError(f"checkpoint is {len(payload)} bytes, shorter than its header")
    magic, version, d = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    body = payload[HEADER.size :]
    if len(body) != 8 * d:
        raise CheckpointFormatError(f"checkpoint declares d={d} but holds {len(body)} payload bytes")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise CheckpointFormatError("checkpoint holds non-finite entries")
    return values


class CheckpointRepository:
    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def save(self, name: str, w: ParamVector) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{name}.bin"
        path.write_bytes(encode_params(w))
        return path

    def load(self, name: str) -> ParamVector:
        path = self.directory / f"{name}.bin"
        if not path.exists():
            raise CheckpointFormatError(f"checkpoint not found at {path}")
        return decode_params(path.read_bytes())
