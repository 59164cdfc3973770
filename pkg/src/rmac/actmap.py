"""Quantized activation tensors and their sparse binary interchange format.

A map stores the post-ReLU responses of one image as 3-bit levels on a dense
(H, W, K) grid. Raw responses are clamped at 128, floored, and binned
uniformly into 8 levels of width 16; level 0 means "exactly zero" and is
never written to disk. The ``.actmap`` container spends one delta-coded byte
per non-zero element plus a fixed header, which is what makes a database of
these maps cheap to hold.

File layout (little-endian)::

    magic   4s   "AMP1"
    version u16  1
    W, H, K u16  feature-map columns, rows, channels
    W_I,H_I u32  source image width/height in pixels
    id      u16 length + UTF-8 bytes
    K channel blocks, each:
        nnz  u32
        nnz element bytes, with escape bytes interleaved as needed

Each element byte packs a 5-bit position delta (0-30, zeros skipped since
the previous element) in the high bits and the 3-bit level (1-7) in the low
bits. Channels are scanned row-major. A gap longer than 30 is bridged by one
or more escape bytes 0xF8 (delta field 31, level 0), each meaning "skip 31
positions, no element here". Escape bytes do not count toward ``nnz``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, FormatError, InvalidInputError

MAGIC = b"AMP1"
VERSION = 1

_ESCAPE_BYTE = 0xF8
_ESCAPE_SKIP = 31
_MAX_DELTA = 30
_U16_MAX = 0xFFFF


@dataclass(frozen=True)
class QuantizationParams:
    """Uniform 8-level quantizer with a hard response ceiling."""

    clamp_max: float = 128.0
    num_levels: int = 8

    def __post_init__(self):
        if self.clamp_max <= 0:
            raise InvalidInputError("clamp_max must be positive")
        if self.num_levels < 2:
            raise InvalidInputError("need at least 2 quantization levels")

    @property
    def bin_width(self) -> float:
        return self.clamp_max / self.num_levels

    def reconstruction_table(self) -> np.ndarray:
        """Representative value per level: 0 for level 0, bin midpoints above."""
        levels = np.arange(self.num_levels, dtype=np.float64)
        table = levels * self.bin_width + self.bin_width / 2.0
        table[0] = 0.0
        return table


DEFAULT_QUANT = QuantizationParams()


@dataclass(frozen=True)
class ImageMeta:
    """Identity and pixel dimensions of the source image."""

    image_id: str
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise InvalidInputError("image dimensions must be positive")


class ActivationMap:
    """Immutable quantized response tensor with image provenance.

    ``levels`` has shape (H, W, K), dtype uint8, values in 0..num_levels-1.
    """

    __slots__ = ("levels", "meta", "params")

    def __init__(self, levels, meta: ImageMeta, params: QuantizationParams = DEFAULT_QUANT):
        arr = np.ascontiguousarray(levels, dtype=np.uint8)
        if arr.ndim != 3 or arr.size == 0:
            raise InvalidInputError("levels must be a non-empty (H, W, K) array")
        if int(arr.max()) >= params.num_levels:
            raise InvalidInputError(
                f"level index out of range: max {int(arr.max())} >= {params.num_levels}"
            )
        h, w, _ = arr.shape
        if meta.image_width < w or meta.image_height < h:
            raise InvalidInputError("feature map cannot outsize its source image")
        arr.setflags(write=False)
        self.levels = arr
        self.meta = meta
        self.params = params

    @property
    def height(self) -> int:
        return self.levels.shape[0]

    @property
    def width(self) -> int:
        return self.levels.shape[1]

    @property
    def channels(self) -> int:
        return self.levels.shape[2]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.levels))

    @property
    def sparsity(self) -> float:
        """Fraction of zero entries."""
        return 1.0 - self.nnz / self.levels.size

    def dequantize(self) -> np.ndarray:
        """Dense (H, W, K) float64 tensor of reconstruction values."""
        return self.params.reconstruction_table()[self.levels]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationMap):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.params == other.params
            and self.levels.shape == other.levels.shape
            and bool(np.array_equal(self.levels, other.levels))
        )

    def __hash__(self):
        return hash((self.meta, self.params, self.levels.shape))

    def __repr__(self):
        return (
            f"ActivationMap({self.width}x{self.height}x{self.channels}, "
            f"id={self.meta.image_id!r}, nnz={self.nnz})"
        )


def quantize(raw, meta: ImageMeta | None = None, params: QuantizationParams = DEFAULT_QUANT) -> ActivationMap:
    """Clamp at the ceiling, floor, and bin a raw non-negative response tensor.

    A value v maps to level floor(min(v, clamp)) // bin_width, saturating at
    the top level so that v == clamp_max lands in the last bin.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 3 or arr.size == 0:
        raise InvalidInputError("raw tensor must be a non-empty (H, W, K) array")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("raw tensor contains non-finite values")
    if np.any(arr < 0):
        raise InvalidInputError("negative responses: input is not a post-ReLU tensor")
    clamped = np.minimum(arr, params.clamp_max)
    levels = np.floor(np.floor(clamped) / params.bin_width)
    np.minimum(levels, params.num_levels - 1, out=levels)
    h, w, _ = arr.shape
    if meta is None:
        meta = ImageMeta("", w, h)
    return ActivationMap(levels.astype(np.uint8), meta, params)


def dequantize_value(level: int, params: QuantizationParams = DEFAULT_QUANT) -> float:
    """Reconstruction value for one level index."""
    if not 0 <= level < params.num_levels:
        raise InvalidInputError(f"level {level} outside 0..{params.num_levels - 1}")
    return float(params.reconstruction_table()[level])


def _encode_channel(plane: np.ndarray) -> tuple[int, bytes]:
    """Delta-code one channel plane (row-major). Returns (nnz, payload)."""
    flat = plane.ravel()
    pos = np.flatnonzero(flat)
    nnz = len(pos)
    if nnz == 0:
        return 0, b""
    vals = flat[pos].astype(np.uint64)
    gaps = np.empty(nnz, dtype=np.int64)
    gaps[0] = pos[0]
    gaps[1:] = np.diff(pos) - 1
    escapes = gaps // _ESCAPE_SKIP
    rem = gaps % _ESCAPE_SKIP
    total = nnz + int(escapes.sum())
    buf = np.full(total, _ESCAPE_BYTE, dtype=np.uint8)
    slots = np.cumsum(escapes + 1) - 1
    buf[slots] = ((rem.astype(np.uint64) << 3) | vals).astype(np.uint8)
    return nnz, buf.tobytes()


def encode(amap: ActivationMap) -> bytes:
    """Serialize a map to the ``.actmap`` byte layout.

    Raises CapacityError when a header field cannot represent the map
    (dimensions beyond u16, image id longer than 65535 UTF-8 bytes).
    """
    h, w, k = amap.levels.shape
    if max(w, h, k) > _U16_MAX:
        raise CapacityError(f"dimensions {w}x{h}x{k} exceed the u16 header fields")
    ident = amap.meta.image_id.encode("utf-8")
    if len(ident) > _U16_MAX:
        raise CapacityError("image id longer than 65535 bytes")
    parts = [
        MAGIC,
        struct.pack(
            "<HHHHIIH",
            VERSION,
            w,
            h,
            k,
            amap.meta.image_width,
            amap.meta.image_height,
            len(ident),
        ),
        ident,
    ]
    for ch in range(k):
        nnz, payload = _encode_channel(amap.levels[:, :, ch])
        parts.append(struct.pack("<I", nnz))
        parts.append(payload)
    return b"".join(parts)


@dataclass(frozen=True)
class ActmapStats:
    """Summary returned by the validator."""

    width: int
    height: int
    channels: int
    image_width: int
    image_height: int
    image_id: str
    nnz: int
    escape_bytes: int
    total_bytes: int

    @property
    def sparsity(self) -> float:
        return 1.0 - self.nnz / (self.width * self.height * self.channels)


def _decode_channel(data: bytes, offset: int, nnz: int, cells: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Walk one channel block. Returns (positions, levels, end offset, escapes)."""
    if nnz == 0:
        return np.empty(0, np.int64), np.empty(0, np.uint8), offset, 0
    tail = np.frombuffer(data, dtype=np.uint8, offset=offset)
    is_elem = tail != _ESCAPE_BYTE
    counts = np.cumsum(is_elem)
    ends = np.flatnonzero(counts == nnz)
    if len(ends) == 0:
        raise FormatError(f"channel payload truncated: {nnz} elements expected", offset)
    end = int(ends[0]) + 1
    block = tail[:end]
    elem = is_elem[:end]
    deltas = (block >> 3).astype(np.int64)
    levels = block & 0x07
    bad = elem & ((deltas == _ESCAPE_SKIP) | (levels == 0))
    if np.any(bad):
        raise FormatError("invalid element byte (delta 31 or level 0)", offset + int(np.flatnonzero(bad)[0]))
    advance = np.where(elem, deltas + 1, _ESCAPE_SKIP)
    positions = np.cumsum(advance)[elem] - 1
    if positions[-1] >= cells:
        raise FormatError("element position beyond channel extent", offset + end - 1)
    return positions, levels[elem], offset + end, end - nnz


def _parse_header(data: bytes) -> tuple[int, int, int, ImageMeta, int]:
    if len(data) < 22:
        raise FormatError("stream shorter than the fixed header", len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    version, w, h, k, wi, hi, idlen = struct.unpack_from("<HHHHIIH", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if w < 1 or h < 1 or k < 1:
        raise FormatError("zero feature-map dimension", 6)
    offset = 22
    if len(data) < offset + idlen:
        raise FormatError("truncated image id", offset)
    try:
        ident = data[offset : offset + idlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"image id is not valid UTF-8: {exc}", offset) from exc
    offset += idlen
    try:
        meta = ImageMeta(ident, wi, hi)
    except InvalidInputError as exc:
        raise FormatError(str(exc), 12) from exc
    return w, h, k, meta, offset


def decode(data: bytes, params: QuantizationParams = DEFAULT_QUANT) -> ActivationMap:
    """Parse ``.actmap`` bytes back into an ActivationMap (exact round-trip)."""
    w, h, k, meta, offset = _parse_header(data)
    levels = np.zeros((h * w, k), dtype=np.uint8)
    for ch in range(k):
        if len(data) < offset + 4:
            raise FormatError(f"truncated before channel {ch} count", offset)
        (nnz,) = struct.unpack_from("<I", data, offset)
        offset += 4
        positions, vals, offset, _ = _decode_channel(data, offset, nnz, h * w)
        levels[positions, ch] = vals
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last channel", offset)
    return ActivationMap(levels.reshape(h, w, k), meta, params)


def inspect(data: bytes) -> ActmapStats:
    """Validate the byte layout and summarize contents without materializing."""
    w, h, k, meta, offset = _parse_header(data)
    nnz_total = 0
    escapes_total = 0
    for ch in range(k):
        if len(data) < offset + 4:
            raise FormatError(f"truncated before channel {ch} count", offset)
        (nnz,) = struct.unpack_from("<I", data, offset)
        offset += 4
        _, _, offset, escapes = _decode_channel(data, offset, nnz, h * w)
        nnz_total += nnz
        escapes_total += escapes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last channel", offset)
    return ActmapStats(
        width=w,
        height=h,
        channels=k,
        image_width=meta.image_width,
        image_height=meta.image_height,
        image_id=meta.image_id,
        nnz=nnz_total,
        escape_bytes=escapes_total,
        total_bytes=len(data),
    )


def save_actmap(amap: ActivationMap, path) -> None:
    Path(path).write_bytes(encode(amap))


def load_actmap(path, params: QuantizationParams = DEFAULT_QUANT) -> ActivationMap:
    return decode(Path(path).read_bytes(), params)
