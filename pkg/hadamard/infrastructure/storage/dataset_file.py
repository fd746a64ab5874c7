import struct
from pathlib import Path

import numpy as np

from hadamard.core.constants import (
    ANSWERS_SECTION,
    CELL_PIXELS,
    DATASET_MAGIC,
    VOCAB_SECTION,
)
from hadamard.core.logging import get_logger
from hadamard.domain.exceptions import DatasetFormatError
from hadamard.synth.questions import ANSWERS, KIND_ORDER, VOCABULARY, noun_positions
from hadamard.synth.sample import Sample
from hadamard.synth.scene import DEFAULT_IMAGE_SIZE

logger = get_logger(__name__)

_U32 = struct.Struct("<I")
_U8 = struct.Struct("<B")


def encode_samples(samples: list[Sample], image_size: int = DEFAULT_IMAGE_SIZE) -> bytes:
    lattice = image_size // CELL_PIXELS
    chunks = [DATASET_MAGIC, _U32.pack(len(samples))]
    for sample in samples:
        if sample.image.shape != (3, image_size, image_size):
            raise DatasetFormatError(f"Image must be 3x{image_size}x{image_size}")
        if sample.relevance_mask.shape != (lattice, lattice):
            raise DatasetFormatError(f"Mask must be {lattice}x{lattice}")
        chunks.append(_U32.pack(len(sample.token_ids)))
        chunks.append(np.asarray(sample.token_ids, dtype="<u4").tobytes())
        chunks.append(_U32.pack(sample.answer_id))
        chunks.append(_U8.pack(KIND_ORDER.index(sample.kind)))
        chunks.append(np.asarray(sample.relevance_mask, dtype=np.uint8).tobytes())
        chunks.append(np.asarray(sample.image, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = memoryview(data)
        self.offset = 0
        self.path = path

    def take(self, size: int) -> memoryview:
        if self.offset + size > len(self.data):
            raise DatasetFormatError(f"{self.path}: truncated at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]

    def u8(self) -> int:
        return _U8.unpack(self.take(_U8.size))[0]


def decode_samples(data: bytes, path: Path, image_size: int = DEFAULT_IMAGE_SIZE) -> list[Sample]:
    lattice = image_size // CELL_PIXELS
    reader = _Reader(data, path)
    if bytes(reader.take(len(DATASET_MAGIC))) != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic")

    samples = []
    for _ in range(reader.u32()):
        length = reader.u32()
        token_ids = tuple(int(t) for t in np.frombuffer(reader.take(4 * length), dtype="<u4"))
        if any(token >= len(VOCABULARY) for token in token_ids):
            raise DatasetFormatError(f"{path}: token id outside the vocabulary in {token_ids}")
        answer_id = reader.u32()
        if answer_id >= len(ANSWERS):
            raise DatasetFormatError(f"{path}: answer id {answer_id} outside the answer set")
        kind_index = reader.u8()
        if kind_index >= len(KIND_ORDER):
            raise DatasetFormatError(f"{path}: unknown question kind {kind_index}")
        mask = np.frombuffer(reader.take(lattice * lattice), dtype=np.uint8)
        pixels = np.frombuffer(reader.take(4 * 3 * image_size * image_size), dtype="<f4")
        samples.append(
            Sample(
                image=pixels.astype(np.float64).reshape(3, image_size, image_size),
                token_ids=token_ids,
                answer_id=answer_id,
                relevance_mask=mask.reshape(lattice, lattice).astype(bool),
                kind=KIND_ORDER[kind_index],
                noun_positions=noun_positions(token_ids),
            )
        )
    if reader.offset != len(reader.data):
        raise DatasetFormatError(f"{path}: trailing bytes after {len(samples)} samples")
    return samples


def write_dataset(path: Path, samples: list[Sample]) -> None:
    path.write_bytes(encode_samples(samples))
    logger.info("dataset_written", path=str(path), samples=len(samples))


def read_dataset(path: Path) -> list[Sample]:
    samples = decode_samples(path.read_bytes(), path)
    logger.info("dataset_loaded", path=str(path), samples=len(samples))
    return samples


def write_vocab(path: Path) -> None:
    lines = [VOCAB_SECTION, *VOCABULARY, ANSWERS_SECTION, *ANSWERS]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_vocab(path: Path) -> tuple[list[str], list[str]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if VOCAB_SECTION not in lines or ANSWERS_SECTION not in lines:
        raise DatasetFormatError(f"{path}: missing section header")
    vocab_at, answers_at = lines.index(VOCAB_SECTION), lines.index(ANSWERS_SECTION)
    return lines[vocab_at + 1 : answers_at], lines[answers_at + 1 :]
