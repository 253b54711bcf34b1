import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldcodec.entropy.rangecoder import (
    TOTAL,
    CoderError,
    RangeDecoder,
    check_cdf,
    quantize_pmf,
    range_decode,
    range_encode,
)

# a 32-bit range with 16-bit totals truncates range/TOTAL with range >= 2**24,
# so each symbol costs at most log2(1 + 2**-8) extra bits
EPS_PRECISION = math.log2(1 + 2.0**-8)


def ideal_bits(symbols, cdf):
    cdf = np.asarray(cdf)
    if cdf.ndim == 1:
        freq = cdf[np.asarray(symbols) + 1] - cdf[np.asarray(symbols)]
    else:
        rows = np.arange(len(symbols))
        freq = cdf[rows, np.asarray(symbols) + 1] - cdf[rows, np.asarray(symbols)]
    return float(-np.log2(freq / TOTAL).sum())


def within_bound(data, symbols, cdf):
    return len(data) * 8 <= ideal_bits(symbols, cdf) + 32 + 2 * len(symbols) * EPS_PRECISION


def test_uniform_256_symbols():
    rng = np.random.default_rng(0)
    sym = rng.integers(0, 256, 10_000)
    cdf = np.arange(257) * 256
    data = range_encode(sym, cdf)
    assert 10_000 <= len(data) <= 10_000 + 8
    assert np.array_equal(range_decode(data, cdf, len(sym)), sym)


def test_highly_skewed_single_symbol():
    cdf = np.array([0, TOTAL - 1, TOTAL])
    sym = np.zeros(1000, dtype=np.int64)
    data = range_encode(sym, cdf)
    assert len(data) <= 30
    # ideal code length: 1000 * -log2(65535/65536) bits
    assert ideal_bits(sym, cdf) == pytest.approx(1000 * 2.2013947263955502e-05, rel=1e-9)
    assert np.array_equal(range_decode(data, cdf, 1000), sym)


def test_empty_input():
    cdf = np.array([0, TOTAL])
    data = range_encode([], cdf)
    assert len(data) <= 4
    assert range_decode(data, cdf, 0).size == 0


def test_skewed_source_close_to_entropy():
    rng = np.random.default_rng(1)
    p = np.array([0.6, 0.2, 0.1, 0.05, 0.03, 0.02])
    cdf = quantize_pmf(p)
    sym = rng.choice(6, size=5000, p=p)
    data = range_encode(sym, cdf)
    assert within_bound(data, sym, cdf)
    assert np.array_equal(range_decode(data, cdf, len(sym)), sym)


def test_per_symbol_cdf_rows():
    rng = np.random.default_rng(2)
    pmf = rng.dirichlet(np.ones(9) * 0.3, size=2000)
    cdf = quantize_pmf(pmf)
    sym = np.array([rng.choice(9, p=row) for row in pmf])
    data = range_encode(sym, cdf)
    assert within_bound(data, sym, cdf)
    assert np.array_equal(range_decode(data, cdf, len(sym)), sym)


def test_edge_symbols_with_minimum_mass():
    cdf = quantize_pmf(np.r_[0.0, np.ones(5), 0.0])
    assert cdf[1] - cdf[0] == 1 and cdf[-1] - cdf[-2] == 1
    sym = np.array([0, 6] * 200 + [3])
    data = range_encode(sym, cdf)
    assert within_bound(data, sym, cdf)
    assert np.array_equal(range_decode(data, cdf, len(sym)), sym)


def test_quantize_pmf_properties():
    rng = np.random.default_rng(3)
    pmf = rng.dirichlet(np.ones(511) * 0.01, size=50)
    cdf = quantize_pmf(pmf)
    assert np.all(cdf[:, 0] == 0) and np.all(cdf[:, -1] == TOTAL)
    assert np.all(np.diff(cdf, axis=1) >= 1)
    # the quantized distribution is close to the original where mass is large
    q = np.diff(cdf, axis=1) / TOTAL
    assert np.max(np.abs(q - pmf)) < 511 / TOTAL + 1e-3


def test_symbol_outside_support():
    cdf = np.arange(5) * (TOTAL // 4)
    with pytest.raises(CoderError):
        range_encode([0, 4], cdf)
    with pytest.raises(CoderError):
        range_encode([-1], cdf)


def test_invalid_cdf_rejected():
    for bad in ([0, 100, 100, TOTAL], [0, TOTAL - 1], [1, TOTAL], [0, 40000, 30000, TOTAL]):
        with pytest.raises(CoderError):
            check_cdf(np.array(bad))


def test_truncated_stream():
    rng = np.random.default_rng(4)
    cdf = np.arange(257) * 256
    sym = rng.integers(0, 256, 500)
    data = range_encode(sym, cdf)
    with pytest.raises(CoderError):
        range_decode(data[: len(data) // 2], cdf, len(sym))


def test_trailing_bytes_rejected():
    cdf = np.arange(257) * 256
    data = range_encode([1, 2, 3], cdf)
    with pytest.raises(CoderError):
        range_decode(data + b"\x00", cdf, 3)


def test_row_count_mismatch():
    cdf = quantize_pmf(np.full((3, 4), 0.25))
    with pytest.raises(CoderError):
        range_encode([0, 1], cdf)


def test_decoder_exhausted_flag():
    cdf = np.arange(3) * (TOTAL // 2)
    data = range_encode([1, 0, 1, 1], cdf)
    dec = RangeDecoder(data)
    out = [dec.decode(cdf) for _ in range(4)]
    assert out == [1, 0, 1, 1]
    assert dec.exhausted


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40).filter(lambda p: sum(p) > 0),
    st.integers(0, 400),
    st.integers(0, 2**31 - 1),
)
def test_round_trip_property(weights, n, seed):
    p = np.asarray(weights) / sum(weights)
    cdf = quantize_pmf(p)
    rng = np.random.default_rng(seed)
    # sample from the quantized table so zero-weight symbols appear too
    sym = rng.choice(len(p), size=n, p=np.diff(cdf) / TOTAL)
    data = range_encode(sym, cdf)
    assert within_bound(data, sym, cdf)
    assert np.array_equal(range_decode(data, cdf, n), sym)
