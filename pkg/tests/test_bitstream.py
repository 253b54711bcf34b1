import struct
import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldcodec.entropy.bitstream import (
    FIXED_HEADER_SIZE,
    BadMagicError,
    ChecksumError,
    CompressedStream,
    LengthError,
    StreamError,
    StreamHeader,
    VersionError,
    parse,
    serialize,
)

from conftest import GOLDEN


def sample_header(**kw):
    fields = dict(
        height=512, width=768, channels=4, factor=8, schedule_kind=1, T_max=1000,
        beta_start=0.00085, beta_end=0.012, timestep=37, lambda_index=2,
        symbol_bound=255, hyper_bound=63,
        log_scale=(0.5, -0.25, 1.0, 0.0), offset=(0.125, 0.0, -2.0, 3.5), flags=1,
    )
    fields.update(kw)
    return StreamHeader(**fields)


def hand_assembled(header, hyper, main):
    """Byte-by-byte layout written independently of the struct format string."""
    le = lambda v, n: int(v).to_bytes(n, "little")
    out = b"LDC1" + le(1, 1) + le(header.flags, 1)
    out += le(header.height, 2) + le(header.width, 2)
    out += le(header.channels, 1) + le(header.factor, 1) + le(header.schedule_kind, 1)
    out += le(header.T_max, 2)
    out += struct.pack("<d", header.beta_start) + struct.pack("<d", header.beta_end)
    out += le(header.timestep, 2) + le(header.lambda_index, 1)
    out += le(header.symbol_bound, 2) + le(header.hyper_bound, 2)
    for s, b in zip(header.log_scale, header.offset):
        out += struct.pack("<f", s) + struct.pack("<f", b)
    out += le(len(hyper), 4) + le(len(main), 4) + le(zlib.crc32(hyper + main), 4)
    return out + hyper + main


def test_layout_matches_hand_assembly():
    s = CompressedStream(sample_header(), b"\x01\x02\x03", b"\xff" * 10)
    assert serialize(s) == hand_assembled(s.header, s.hyper, s.main)


def test_gamma_block_is_32_bytes_for_four_channels():
    h = sample_header()
    assert len(h.gamma_bytes()) == 32
    assert len(serialize(CompressedStream(h, b"", b""))) == FIXED_HEADER_SIZE + 32 + 12
    assert FIXED_HEADER_SIZE == 38


def test_golden_header():
    s = CompressedStream(sample_header(), b"\x01\x02\x03", b"\xff" * 10)
    golden = (GOLDEN / "header_c4.ldc").read_bytes()
    assert serialize(s) == golden
    assert parse(golden) == s


def test_round_trip():
    s = CompressedStream(sample_header(flags=3), b"hyper", b"main payload")
    assert parse(serialize(s)) == s
    assert parse(serialize(s)).header.context and parse(serialize(s)).header.rescale


def test_bad_magic():
    data = bytearray(serialize(CompressedStream(sample_header(), b"a", b"b")))
    data[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        parse(bytes(data))
    with pytest.raises(BadMagicError):
        parse(b"")


def test_version_mismatch():
    data = bytearray(serialize(CompressedStream(sample_header(), b"a", b"b")))
    data[4] = 2
    with pytest.raises(VersionError):
        parse(bytes(data))


def test_length_overrun_and_truncation():
    data = serialize(CompressedStream(sample_header(), b"abc", b"defg"))
    with pytest.raises(LengthError):
        parse(data[:-1])
    with pytest.raises(LengthError):
        parse(data + b"\x00")
    with pytest.raises(LengthError):
        parse(data[:20])


def test_payload_corruption_detected():
    data = bytearray(serialize(CompressedStream(sample_header(), b"abc", b"defg")))
    data[-2] ^= 0x01
    with pytest.raises(ChecksumError):
        parse(bytes(data))


def test_distinct_error_types():
    assert len({BadMagicError, VersionError, LengthError, ChecksumError}) == 4
    for e in (BadMagicError, VersionError, LengthError, ChecksumError):
        assert issubclass(e, StreamError)


def test_gamma_length_validated():
    with pytest.raises(StreamError):
        serialize(CompressedStream(sample_header(log_scale=(0.0,)), b"", b""))


f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 65535), st.integers(1, 65535), st.integers(1, 16),
    st.integers(0, 65535), st.integers(0, 255), st.integers(0, 3),
    st.floats(allow_nan=False), st.data(), st.binary(max_size=64), st.binary(max_size=64),
)
def test_round_trip_property(H, W, C, t, lam, flags, beta, data, hyper, main):
    h = sample_header(
        height=H, width=W, channels=C, timestep=t, lambda_index=lam, flags=flags, beta_start=beta,
        log_scale=tuple(data.draw(st.lists(f32, min_size=C, max_size=C))),
        offset=tuple(data.draw(st.lists(f32, min_size=C, max_size=C))),
    )
    s = CompressedStream(h, hyper, main)
    assert parse(serialize(s)) == s
