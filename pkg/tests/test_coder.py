import numpy as np
import pytest
from hypothesis import given, strategies as st

from rahtskip.coder import (
    BYPASS,
    CTX_ISONE,
    CTX_ISTWO,
    CTX_SIGN,
    PROB_MAX,
    PROB_MIN,
    BinCoderState,
    Quantizer,
    RangeDecoder,
    RangeEncoder,
    binarize_run,
    binarize_value,
    decode_stream,
    dequantize,
    eg0_bits,
    encode_stream,
    estimate_bits,
    estimate_prefix_bits,
    quantize,
    tokenize,
)
from rahtskip.errors import BitstreamError

EG0_TABLE = {0: "1", 1: "010", 2: "011", 3: "00100", 4: "00101", 5: "00110", 6: "00111", 7: "0001000"}


def bits_of(bins):
    return "".join(str(b) for _, b in bins)


def sparse_levels(rng, n, density):
    mags = rng.geometric(0.45, n)
    signs = rng.choice([-1, 1], n)
    return (np.where(rng.random(n) < density, mags * signs, 0)).astype(int).tolist()


def test_quantizer_steps():
    assert Quantizer(12).step == 1.0
    assert Quantizer(18).step == 2.0
    assert Quantizer(24).step == 4.0
    for bad in (3, 52):
        with pytest.raises(ValueError):
            Quantizer(bad)


def test_quantize_examples():
    assert quantize(0.0, Quantizer(40)) == 0
    assert quantize(7.5, Quantizer(12)) == 8
    assert quantize(-3.2, Quantizer(18)) == -2
    assert quantize(-7.5, Quantizer(12)) == -8


@given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(4, 51))
def test_dequantize_error_bound(x, qp):
    q = Quantizer(qp)
    assert abs(dequantize(quantize(x, q), q) - x) <= q.step / 2 * (1 + 1e-12)


def test_eg0_table():
    for n, code in EG0_TABLE.items():
        assert "".join(map(str, eg0_bits(n))) == code


def test_binarize_value_examples():
    assert binarize_value(1) == [(CTX_SIGN, 0), (CTX_ISONE, 1)]
    assert binarize_value(-2) == [(CTX_SIGN, 1), (CTX_ISONE, 0), (CTX_ISTWO, 1)]
    bins = binarize_value(5)
    assert bins[:3] == [(CTX_SIGN, 0), (CTX_ISONE, 0), (CTX_ISTWO, 0)]
    assert all(c is BYPASS for c, _ in bins[3:])
    assert bits_of(bins[3:]) == EG0_TABLE[2]
    with pytest.raises(ValueError):
        binarize_value(0)


def test_binarize_run_examples():
    assert bits_of(binarize_run(0)) == "0"
    assert bits_of(binarize_run(2)) == "110"
    assert bits_of(binarize_run(3)) == "111" + EG0_TABLE[0]
    assert bits_of(binarize_run(7)) == "111" + EG0_TABLE[4]
    assert [c for c, _ in binarize_run(2)] == [0, 1, 2]


def test_tokenize_example():
    assert tokenize([0, 0, 3, 0, -1]) == [("run", 2), ("value", 3), ("run", 1), ("value", -1), ("run", 0)]
    assert tokenize([0] * 9) == [("run", 9)]


@pytest.mark.parametrize("levels", [[], [0], [0] * 100, [0, 0, 3, 0, -1], [7], [-300, 0, 0, 1, 2, 0]])
def test_stream_roundtrip_examples(levels):
    data, nbits = encode_stream(levels)
    assert decode_stream(data, len(levels)) == levels
    assert nbits <= 8 * len(data)


def test_stream_roundtrip_random(rng):
    for n in (1, 10, 1000, 100_000):
        levels = sparse_levels(rng, n, 0.05)
        data, _ = encode_stream(levels)
        assert decode_stream(data, n) == levels


@given(st.lists(st.integers(-(2**20), 2**20), max_size=300))
def test_stream_roundtrip_property(levels):
    data, nbits = encode_stream(levels)
    assert decode_stream(data, len(levels)) == levels
    assert 0 <= nbits <= 8 * len(data)


def test_raw_range_coder_roundtrip(rng):
    probs = [PROB_MIN, 1000, 32768, 60000, PROB_MAX]
    plan = [(int(rng.integers(0, len(probs))), int(rng.random() < 0.3)) for _ in range(5000)]
    enc = RangeEncoder()
    ctx = list(probs)
    for c, b in plan:
        if c == 0:
            enc.encode_bypass(b)
        else:
            enc.encode_bit(ctx, c, b)
    data, _ = enc.finish()
    dec = RangeDecoder(data)
    ctx = list(probs)
    for c, b in plan:
        got = dec.decode_bypass() if c == 0 else dec.decode_bit(ctx, c)
        assert got == b


def test_decode_overflow_is_an_error():
    data, _ = encode_stream([0] * 50)
    with pytest.raises(BitstreamError):
        decode_stream(data, 10)


def test_probabilities_stay_clamped():
    state = BinCoderState()
    encode_stream([1] * 5000, state)
    assert all(PROB_MIN <= p <= PROB_MAX for p in state.contexts)


def test_estimate_empty_is_terminal_run_only():
    est = estimate_bits([])
    assert est.bits == pytest.approx(1.0)  # one run bin "0" at p = 1/2


@pytest.mark.parametrize("density", [0.01, 0.05, 0.2, 0.6])
def test_estimator_within_two_percent_on_long_streams(rng, density):
    levels = sparse_levels(rng, 20_000, density)
    _, actual = encode_stream(levels)
    est = estimate_bits(levels).bits
    assert abs(est - actual) / actual <= 0.02


def test_estimator_within_eight_percent_on_short_streams(rng):
    for _ in range(30):
        levels = sparse_levels(rng, 200, 0.3)
        _, actual = encode_stream(levels)
        assert abs(estimate_bits(levels).bits - actual) / actual <= 0.08


@given(st.lists(st.integers(-50, 50), max_size=200), st.integers(1, 40))
def test_appended_zeros_cost_more(levels, extra):
    assert estimate_bits(levels + [0] * extra).bits > estimate_bits(levels).bits


@given(st.lists(st.integers(-5, 5), max_size=200))
def test_estimate_does_not_touch_state(levels):
    state = BinCoderState()
    encode_stream([1, 0, 2, 0, 0, -1], state)
    before = state.digest()
    estimate_bits(levels, state)
    estimate_prefix_bits(levels, [0, len(levels)], state)
    assert state.digest() == before


@given(st.lists(st.integers(-4, 4), max_size=300), st.data())
def test_prefix_estimates_match_independent_calls(levels, data):
    splits = sorted(set(data.draw(st.lists(st.integers(0, len(levels)), min_size=1, max_size=5))))
    got = estimate_prefix_bits(levels, splits)
    want = [estimate_bits(levels[:s]).bits for s in splits]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_encoding_is_deterministic(rng):
    levels = sparse_levels(rng, 5000, 0.1)
    assert encode_stream(levels) == encode_stream(levels)
