"""Perturbation bank: the pool of tiles cropped from held-out images that
serve as replacement values, plus the classic baseline fills (zero, mean,
noise, blur) kept around for contrast experiments.

Bank file format (bit-exact, version 1):

    magic   "PDCRBANK"          8 bytes
    version u16 little-endian   currently 1
    block   u16 LE              block edge length in pixels
    chans   u8                  1 or 3
    reserved u8                 0
    count   u32 LE              number of blocks
    digest  32 bytes            sha256 over the source image list
    blocks  count * block^2 * chans raw bytes, row-major per block
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import BankBuildError, FormatError, ShapeError
from .imaging import Block, Image, PatchGrid
from .sampling import SampleStream

__all__ = [
    "PerturbationBank",
    "BaselineKind",
    "build_bank",
    "sample_block",
    "baseline_block",
    "save_bank",
    "load_bank",
    "DEFAULT_BANK_SIZE",
]

_MAGIC = b"PDCRBANK"
_VERSION = 1
_HEADER = struct.Struct("<8sHHBBI")

# >= 200x the default trial budget, so repeated draws within one patch's
# trial set stay rare.
DEFAULT_BANK_SIZE = 10_000


@dataclass(frozen=True)
class PerturbationBank:
    """Immutable pool of square tiles; shape (count, size, size, channels)."""

    blocks: np.ndarray
    source_digest: bytes

    def __post_init__(self):
        b = self.blocks
        if b.dtype != np.uint8 or b.ndim != 4 or b.shape[1] != b.shape[2]:
            raise ShapeError(f"bank blocks must be uint8 (N, P, P, C), got {b.shape}")
        if b.shape[0] < 1:
            raise ShapeError("bank must contain at least one block")
        if b.shape[3] not in (1, 3):
            raise ShapeError(f"bank channels must be 1 or 3, got {b.shape[3]}")
        if len(self.source_digest) != 32:
            raise ShapeError("source digest must be 32 bytes")
        b.setflags(write=False)

    @property
    def count(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def channels(self) -> int:
        return self.blocks.shape[3]

    def block(self, index: int) -> Block:
        return Block(self.blocks[index])


class BaselineKind(enum.Enum):
    ZERO = "zero"
    MEAN = "mean"
    GAUSS_NOISE = "gauss_noise"
    BLUR = "blur"


def _digest_sources(images: list[Image]) -> bytes:
    h = hashlib.sha256()
    for img in images:
        h.update(struct.pack("<III", img.width, img.height, img.channels))
        h.update(img.data.tobytes())
    return h.digest()


def build_bank(
    source_images: list[Image], block_size: int, count: int = DEFAULT_BANK_SIZE, seed: int = 0
) -> PerturbationBank:
    """Crop `count` blocks at positions drawn uniformly over (image, x, y).

    Deterministic for fixed inputs and seed. The caller is responsible for
    the split discipline: source images must exclude the image under
    explanation. The digest of the source list is recorded for audit.
    """
    if not source_images:
        raise BankBuildError("source image list is empty")
    if count < 1:
        raise BankBuildError(f"bank size must be >= 1, got {count}")
    if block_size < 1:
        raise BankBuildError(f"block size must be >= 1, got {block_size}")
    channels = source_images[0].channels
    for n, img in enumerate(source_images):
        if img.width < block_size or img.height < block_size:
            raise BankBuildError(
                f"source image #{n} is {img.width}x{img.height}, smaller than "
                f"block size {block_size}"
            )
        if img.channels != channels:
            raise BankBuildError(
                f"source image #{n} has {img.channels} channels, expected {channels}"
            )

    rng = np.random.default_rng(seed)
    blocks = np.empty((count, block_size, block_size, channels), dtype=np.uint8)
    for b in range(count):
        img = source_images[int(rng.integers(len(source_images)))]
        x = int(rng.integers(img.width - block_size + 1))
        y = int(rng.integers(img.height - block_size + 1))
        blocks[b] = img.data[y : y + block_size, x : x + block_size, :]
    return PerturbationBank(blocks=blocks, source_digest=_digest_sources(source_images))


def sample_block(bank: PerturbationBank, stream: SampleStream) -> Block:
    """Uniform draw with replacement from the bank."""
    return bank.block(stream.next_index(bank.count))


def _round_half_up_u8(a: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(a, 0.0, 255.0) + 0.5).astype(np.uint8)


def baseline_block(
    kind: BaselineKind,
    image: Image,
    grid: PatchGrid,
    patch_index: int,
    stream: SampleStream,
    *,
    sigma: float = 25.0,
    radius: int = 1,
) -> Block:
    """Classic perturbation fills for the indexed patch.

    ZERO: all-zero tile. MEAN: tile filled with the whole-image per-channel
    mean. GAUSS_NOISE: original patch plus Gaussian noise (result clipped to
    8-bit, since unclipped noise wrecks the image). BLUR: original patch box
    blurred with clamp padding.
    """
    r = grid.rect(patch_index)
    patch = image.data[r.y : r.y + r.h, r.x : r.x + r.w, :]
    if kind is BaselineKind.ZERO:
        return Block(np.zeros_like(patch))
    if kind is BaselineKind.MEAN:
        mean = image.data.reshape(-1, image.channels).mean(axis=0, dtype=np.float64)
        tile = np.broadcast_to(_round_half_up_u8(mean), patch.shape)
        return Block(np.ascontiguousarray(tile))
    if kind is BaselineKind.GAUSS_NOISE:
        if sigma <= 0:
            raise ValueError(f"noise sigma must be > 0, got {sigma}")
        noise = stream.next_rng().normal(0.0, sigma, size=patch.shape)
        return Block(_round_half_up_u8(patch.astype(np.float64) + noise))
    if kind is BaselineKind.BLUR:
        if radius < 1:
            raise ValueError(f"blur radius must be >= 1, got {radius}")
        blurred = uniform_filter(
            patch.astype(np.float64), size=(2 * radius + 1, 2 * radius + 1, 1), mode="nearest"
        )
        return Block(_round_half_up_u8(blurred))
    raise ValueError(f"unknown baseline kind: {kind!r}")


# ---------------------------------------------------------------------------
# Bank file I/O
# ---------------------------------------------------------------------------

def save_bank(bank: PerturbationBank, path: str | Path) -> None:
    header = _HEADER.pack(
        _MAGIC, _VERSION, bank.block_size, bank.channels, 0, bank.count
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(bank.source_digest)
        f.write(bank.blocks.tobytes())


def load_bank(path: str | Path) -> PerturbationBank:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size + 32:
        raise FormatError(f"bank file too short: {len(raw)} bytes")
    magic, version, block_size, channels, _reserved, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad bank magic: {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported bank version: {version}")
    digest = raw[_HEADER.size : _HEADER.size + 32]
    body = raw[_HEADER.size + 32 :]
    expected = count * block_size * block_size * channels
    if len(body) != expected:
        raise FormatError(f"bank payload is {len(body)} bytes, expected {expected}")
    blocks = np.frombuffer(body, dtype=np.uint8).reshape(
        count, block_size, block_size, channels
    )
    return PerturbationBank(blocks=blocks.copy(), source_digest=digest)
