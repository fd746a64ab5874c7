import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from hadamard.core.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from hadamard.core.logging import get_logger
from hadamard.domain.exceptions import (
    BadMagicError,
    CheckpointError,
    IncompleteCheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from hadamard.domain.model.hyper import HYPER_FIELD_ORDER, HyperParams
from hadamard.domain.model.params import ModelParams, param_shapes

logger = get_logger(__name__)

_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
_HYPER = struct.Struct("<" + "I" * len(HYPER_FIELD_ORDER))


def encode_checkpoint(params: ModelParams) -> bytes:
    chunks = [
        CHECKPOINT_MAGIC,
        _U32.pack(CHECKPOINT_VERSION),
        _HYPER.pack(*params.hyper.as_tuple()),
        _U32.pack(len(params.names())),
    ]
    for name in params.names():
        value = params[name]
        encoded_name = name.encode("utf-8")
        chunks.append(_U16.pack(len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(_U8.pack(value.ndim))
        chunks.append(np.asarray(value.shape, dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.offset = 0

    def take(self, size: int) -> memoryview:
        if self.offset + size > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint is truncated at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct) -> tuple:
        return layout.unpack(self.take(layout.size))


def decode_checkpoint(data: bytes) -> ModelParams:
    reader = _Reader(data)
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagicError()
    reader.take(len(CHECKPOINT_MAGIC))
    (version,) = reader.unpack(_U32)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        hyper = HyperParams.from_tuple(reader.unpack(_HYPER))
    except ValidationError as e:
        raise CheckpointError(f"invalid hyperparameters: {e.errors()[0]['msg']}") from e

    tensors: dict[str, np.ndarray] = {}
    (count,) = reader.unpack(_U32)
    for _ in range(count):
        (name_length,) = reader.unpack(_U16)
        name = bytes(reader.take(name_length)).decode("utf-8")
        (rank,) = reader.unpack(_U8)
        dims = tuple(int(d) for d in np.frombuffer(reader.take(4 * rank), dtype="<u4"))
        size = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(dims)
        if name in tensors:
            raise IncompleteCheckpointError(f"duplicate tensor '{name}'")
        tensors[name] = values.astype(np.float64)

    missing = param_shapes(hyper).keys() - tensors.keys()
    if missing:
        raise IncompleteCheckpointError(f"incomplete checkpoint: missing {sorted(missing)}")
    return ModelParams(hyper=hyper, tensors=tensors)


def save_checkpoint(params: ModelParams, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params))
    logger.info("checkpoint_saved", path=str(path), tensors=len(params.names()))


def load_checkpoint(path: Path) -> ModelParams:
    params = decode_checkpoint(path.read_bytes())
    logger.info("checkpoint_loaded", path=str(path), hyper=params.hyper.model_dump())
    return params
