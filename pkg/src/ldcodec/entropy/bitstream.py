"""The ``.ldc`` container.

Layout (little-endian)::

    offset  size  field
    0       4     magic "LDC1"
    4       1     version (1)
    5       1     flags: bit0 context model, bit1 rescaled denoising input
    6       2     image height (original, before padding)
    8       2     image width
    10      1     latent channels C
    11      1     downsampling factor f
    12      1     schedule kind (0 linear, 1 scaled_linear)
    13      2     T_max
    15      8     beta_start (float64)
    23      8     beta_end (float64)
    31      2     denoising timestep t
    33      1     lambda index into the trained set (255: other)
    34      2     latent symbol bound K
    36      2     hyper-latent symbol bound
    38      8*C   gamma: C pairs (log_scale, offset) of float32
    ..      4     hyper payload length
    ..      4     latent payload length
    ..      4     CRC-32 of both payloads
    ..            hyper payload, latent payload
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

MAGIC = b"LDC1"
VERSION = 1
FLAG_CONTEXT = 1
FLAG_RESCALE = 2
LAMBDA_OTHER = 255

_FIXED = struct.Struct("<4sBBHHBBBHddHBHH")
_LENGTHS = struct.Struct("<III")
FIXED_HEADER_SIZE = _FIXED.size


class StreamError(ValueError):
    pass


class BadMagicError(StreamError):
    pass


class VersionError(StreamError):
    pass


class LengthError(StreamError):
    pass


class ChecksumError(StreamError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    height: int
    width: int
    channels: int
    factor: int
    schedule_kind: int
    T_max: int
    beta_start: float
    beta_end: float
    timestep: int
    lambda_index: int
    symbol_bound: int
    hyper_bound: int
    log_scale: tuple
    offset: tuple
    flags: int = 0

    @property
    def context(self) -> bool:
        return bool(self.flags & FLAG_CONTEXT)

    @property
    def rescale(self) -> bool:
        return bool(self.flags & FLAG_RESCALE)

    def gamma_bytes(self) -> bytes:
        pairs = []
        for s, b in zip(self.log_scale, self.offset):
            pairs += [s, b]
        return struct.pack(f"<{2 * self.channels}f", *pairs)


@dataclass(frozen=True)
class CompressedStream:
    header: StreamHeader
    hyper: bytes
    main: bytes

    @property
    def num_bytes(self) -> int:
        return len(serialize(self))


def serialize(stream: CompressedStream) -> bytes:
    h = stream.header
    if len(h.log_scale) != h.channels or len(h.offset) != h.channels:
        raise StreamError("gamma length does not match channel count")
    fixed = _FIXED.pack(
        MAGIC, VERSION, h.flags, h.height, h.width, h.channels, h.factor,
        h.schedule_kind, h.T_max, h.beta_start, h.beta_end, h.timestep,
        h.lambda_index, h.symbol_bound, h.hyper_bound,
    )
    crc = zlib.crc32(stream.hyper + stream.main)
    lengths = _LENGTHS.pack(len(stream.hyper), len(stream.main), crc)
    return fixed + h.gamma_bytes() + lengths + stream.hyper + stream.main


def parse(data: bytes) -> CompressedStream:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not an LDC stream (bad magic)")
    if len(data) < _FIXED.size:
        raise LengthError("stream shorter than the fixed header")
    (_, version, flags, height, width, channels, factor, kind, T_max,
     beta_start, beta_end, timestep, lam_idx, bound, hbound) = _FIXED.unpack_from(data, 0)
    if version != VERSION:
        raise VersionError(f"unsupported stream version {version}")
    pos = _FIXED.size
    gsize = 8 * channels
    if len(data) < pos + gsize + _LENGTHS.size:
        raise LengthError("stream truncated inside the header")
    gamma = struct.unpack_from(f"<{2 * channels}f", data, pos)
    pos += gsize
    hyper_len, main_len, crc = _LENGTHS.unpack_from(data, pos)
    pos += _LENGTHS.size
    if pos + hyper_len + main_len != len(data):
        raise LengthError(
            f"payload lengths {hyper_len}+{main_len} disagree with {len(data) - pos} available bytes"
        )
    hyper = data[pos : pos + hyper_len]
    main = data[pos + hyper_len :]
    if zlib.crc32(hyper + main) != crc:
        raise ChecksumError("payload checksum mismatch")
    header = StreamHeader(
        height, width, channels, factor, kind, T_max, beta_start, beta_end, timestep,
        lam_idx, bound, hbound, tuple(gamma[0::2]), tuple(gamma[1::2]), flags,
    )
    return CompressedStream(header, bytes(hyper), bytes(main))
