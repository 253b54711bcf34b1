"""32-bit range coder over 16-bit fixed-point frequency tables.

Integer-only, with carry propagation in the style of the LZMA coder. The
encoder's first output byte is always zero and is omitted from the stream;
the decoder re-inserts it.
"""
from __future__ import annotations

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class CoderError(ValueError):
    """Symbol outside its table, malformed table, or a corrupt/truncated stream."""


def check_cdf(cdf: np.ndarray) -> None:
    """A cdf row has length ``n + 1``, starts at 0, ends at TOTAL, strictly increases."""
    cdf = np.asarray(cdf)
    if cdf.ndim == 1:
        cdf = cdf[None]
    if cdf.shape[-1] < 2 or (cdf[:, 0] != 0).any() or (cdf[:, -1] != TOTAL).any():
        raise CoderError("cdf rows must start at 0 and end at 2**16")
    if (np.diff(cdf, axis=-1) <= 0).any():
        raise CoderError("every symbol needs nonzero mass")


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, start: int, freq: int) -> None:
        r = self.range >> PRECISION
        self.low += start * r
        self.range = freq * r
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        # drop the constant leading zero byte
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = b"\x00" + bytes(data)
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = (self.code << 8) | self._next()
        self.code &= _MASK32

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise CoderError("truncated stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, cdf) -> int:
        r = self.range >> PRECISION
        v = self.code // r
        if v >= TOTAL:
            raise CoderError("corrupt stream: code outside the coding interval")
        s = int(np.searchsorted(cdf, v, side="right")) - 1
        start = int(cdf[s])
        freq = int(cdf[s + 1]) - start
        self.code -= start * r
        self.range = freq * r
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8
        return s

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def range_encode(symbols, cdfs) -> bytes:
    """Encode symbol indices; ``cdfs`` is one shared row or one row per symbol.

    Symbols are indices into the table (0..n-1), not signed values.
    """
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    cdfs = np.asarray(cdfs, dtype=np.int64)
    shared = cdfs.ndim == 1
    if not shared and cdfs.shape[0] != len(symbols):
        raise CoderError(f"{cdfs.shape[0]} cdf rows for {len(symbols)} symbols")
    check_cdf(cdfs)
    nsym = cdfs.shape[-1] - 1
    if len(symbols) and (symbols.min() < 0 or symbols.max() >= nsym):
        raise CoderError("symbol outside cdf support")
    if shared:
        starts = cdfs[symbols]
        freqs = cdfs[symbols + 1] - starts
    else:
        rows = np.arange(len(symbols))
        starts = cdfs[rows, symbols]
        freqs = cdfs[rows, symbols + 1] - starts
    enc = RangeEncoder()
    for s, f in zip(starts.tolist(), freqs.tolist()):
        enc.encode(s, f)
    return enc.finish()


def range_decode(data: bytes, cdfs, count: int) -> np.ndarray:
    cdfs = np.asarray(cdfs, dtype=np.int64)
    shared = cdfs.ndim == 1
    if not shared and cdfs.shape[0] != count:
        raise CoderError(f"{cdfs.shape[0]} cdf rows for {count} symbols")
    check_cdf(cdfs)
    dec = RangeDecoder(data)
    out = np.empty(count, dtype=np.int64)
    if shared:
        for i in range(count):
            out[i] = dec.decode(cdfs)
    else:
        for i in range(count):
            out[i] = dec.decode(cdfs[i])
    if not dec.exhausted:
        raise CoderError("trailing bytes after the last symbol")
    return out


def quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """Float pmf rows -> integer cdf rows summing to 2**16 with every mass >= 1.

    ``floor(p * (TOTAL - n)) + 1`` guarantees the floor of one unit; the
    leftover is assigned to each row's most probable symbol.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    squeeze = pmf.ndim == 1
    pmf = np.atleast_2d(pmf)
    n = pmf.shape[-1]
    if n > TOTAL:
        raise CoderError("alphabet larger than the fixed-point total")
    pmf = np.clip(pmf, 0.0, None)
    pmf = pmf / pmf.sum(axis=-1, keepdims=True)
    freq = np.floor(pmf * (TOTAL - n)).astype(np.int64) + 1
    deficit = TOTAL - freq.sum(axis=-1)
    freq[np.arange(len(freq)), np.argmax(pmf, axis=-1)] += deficit
    cdf = np.zeros((len(freq), n + 1), dtype=np.int64)
    np.cumsum(freq, axis=-1, out=cdf[:, 1:])
    return cdf[0] if squeeze else cdf
