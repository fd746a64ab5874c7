"""Binary PGM (P5) and PPM (P6) files with maxval 255."""

import re
from pathlib import Path

import numpy as np

from hadamard.autodiff.tensor import Tensor
from hadamard.core.constants import PGM_CLAMP, PGM_MAXVAL
from hadamard.domain.exceptions import ImageFormatError

_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(\d+)\s+(\d+)\s")


def saliency_to_gray(values: Tensor) -> np.ndarray:
    """Clamp to [-3, 3] and map affinely onto 0..255, rounding half up."""
    clamped = np.clip(values, -PGM_CLAMP, PGM_CLAMP)
    scaled = (clamped + PGM_CLAMP) / (2 * PGM_CLAMP) * PGM_MAXVAL
    return np.floor(scaled + 0.5).astype(np.uint8)


def upsample_nearest(values: Tensor, factor: int) -> Tensor:
    return np.repeat(np.repeat(values, factor, axis=0), factor, axis=1)


def encode_pgm(gray: np.ndarray) -> bytes:
    height, width = gray.shape
    return f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode() + gray.astype(np.uint8).tobytes()


def encode_ppm(image: Tensor) -> bytes:
    """3 x H x W image in [0, 1] to P6."""
    channels, height, width = image.shape
    if channels != 3:
        raise ImageFormatError(f"PPM needs 3 channels, got {channels}")
    levels = np.floor(np.clip(image, 0.0, 1.0) * PGM_MAXVAL + 0.5).astype(np.uint8)
    return f"P6\n{width} {height}\n{PGM_MAXVAL}\n".encode() + levels.transpose(1, 2, 0).tobytes()


def write_pgm(path: Path, gray: np.ndarray) -> None:
    path.write_bytes(encode_pgm(gray))


def write_saliency_pgm(path: Path, values: Tensor) -> None:
    write_pgm(path, saliency_to_gray(values))


def write_ppm(path: Path, image: Tensor) -> None:
    path.write_bytes(encode_ppm(image))


def decode_pnm(data: bytes) -> np.ndarray:
    """Return H x W (P5) or H x W x 3 (P6) uint8 pixels."""
    match = _HEADER.match(data)
    if match is None:
        raise ImageFormatError("Not a binary PGM/PPM file")
    magic, width, height, maxval = match.group(1), *(int(g) for g in match.groups()[1:])
    if maxval != PGM_MAXVAL:
        raise ImageFormatError(f"Only maxval {PGM_MAXVAL} is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    body = data[match.end() :]
    expected = width * height * channels
    if len(body) < expected:
        raise ImageFormatError(f"Pixel data truncated: {len(body)} of {expected} bytes")
    pixels = np.frombuffer(body[:expected], dtype=np.uint8)
    return pixels.reshape(height, width, 3) if channels == 3 else pixels.reshape(height, width)


def read_ppm(path: Path) -> Tensor:
    """Read a P6 file as a 3 x H x W float image in [0, 1]."""
    pixels = decode_pnm(path.read_bytes())
    if pixels.ndim != 3:
        raise ImageFormatError(f"{path} is not a color (P6) image")
    return pixels.transpose(2, 0, 1).astype(np.float64) / PGM_MAXVAL
