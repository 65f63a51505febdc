import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fp8ptq.fp8_core import (
    E4M3,
    E5M2,
    Fp8Code,
    decode,
    encode_nearest,
    enumerate_levels,
    get_format,
    round_to_bf16,
    round_to_fp8,
)

from oracles import decode_exact, finite_codes, nearest_code_oracle, round_bf16_oracle

finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("fmt", [E4M3, E5M2], ids=lambda f: f.name)
def test_decode_matches_exact_field_oracle(fmt):
    for code in range(256):
        want = decode_exact(code, fmt.name)
        got = decode(code, fmt)
        if want == "nan":
            assert math.isnan(got)
        elif want in ("+inf", "-inf"):
            assert got == (math.inf if want == "+inf" else -math.inf)
        else:
            assert Fraction(got) == want
            assert math.copysign(1.0, got) == (-1.0 if code & 0x80 else 1.0)


def test_decode_examples():
    assert decode(0x00, E4M3) == 0.0 and math.copysign(1, decode(0x00, E4M3)) == 1
    assert decode(0x7E, E4M3) == 448.0
    assert decode(0x38, E4M3) == 1.0
    assert decode(0x01, E4M3) == 0.001953125 == 2.0**-9
    assert math.isnan(decode(0x7F, E4M3))
    assert math.isnan(decode(0xFF, E4M3))
    assert decode(0x7B, E5M2) == 57344.0
    assert decode(0x7C, E5M2) == math.inf
    assert decode(0xFC, E5M2) == -math.inf
    assert math.copysign(1, decode(0x80, E4M3)) == -1


def test_decode_array_is_float32():
    out = decode(np.arange(256, dtype=np.uint8), E4M3)
    assert out.dtype == np.float32 and out.shape == (256,)


def test_format_descriptors():
    assert (E4M3.exponent_bits, E4M3.mantissa_bits, E4M3.bias) == (4, 3, 7)
    assert (E5M2.exponent_bits, E5M2.mantissa_bits, E5M2.bias) == (5, 2, 15)
    assert E4M3.max_finite == 448.0
    assert E5M2.max_finite == 57344.0 == (2 - 2**-2) * 2**15
    for fmt in (E4M3, E5M2):
        vals = [decode(c, fmt) for c in range(256)]
        assert fmt.max_finite == max(v for v in vals if math.isfinite(v))
    assert get_format("E4M3") is E4M3
    with pytest.raises(ValueError):
        get_format("e3m4")
    with pytest.raises(ValueError):
        type(E4M3)("bad", 4, 4, 7, E4M3.special_convention)


@pytest.mark.parametrize("fmt", [E4M3, E5M2], ids=lambda f: f.name)
def test_exhaustive_round_trip(fmt):
    for code in finite_codes(fmt.name):
        assert encode_nearest(decode(code, fmt), fmt) == code


def test_encode_examples():
    assert encode_nearest(17.0, E4M3) == encode_nearest(16.0, E4M3) == 0x58
    assert encode_nearest(1000.0, E4M3) == 0x7E
    assert encode_nearest(-1000.0, E4M3) == 0xFE
    assert encode_nearest(0.0, E4M3) == 0x00
    assert encode_nearest(0.0, E5M2) == 0x00
    assert encode_nearest(-0.0, E4M3) == 0x80
    assert decode(encode_nearest(0.017, E4M3), E4M3) == 0.017578125


def test_encode_specials():
    assert encode_nearest(math.nan, E4M3) == E4M3.nan_code == 0x7F
    assert math.isnan(decode(encode_nearest(math.nan, E5M2), E5M2))
    assert encode_nearest(math.inf, E4M3) == 0x7E
    assert encode_nearest(-math.inf, E4M3) == 0xFE
    assert encode_nearest(math.inf, E5M2) == 0x7C
    assert encode_nearest(-math.inf, E5M2) == 0xFC
    assert encode_nearest(1e9, E5M2) == 0x7B


def test_encode_ties_go_to_even():
    # midpoint between 0 and the smallest subnormal
    assert encode_nearest(2.0**-10, E4M3) == 0x00
    # 3 * 2**-10 sits between codes 0x01 and 0x02
    assert encode_nearest(3 * 2.0**-10, E4M3) == 0x02
    # 15.5 between 15 (mantissa 111) and 16 (next binade, mantissa 000)
    assert decode(encode_nearest(15.5, E4M3), E4M3) == 16.0


@pytest.mark.parametrize("name", ["e4m3", "e5m2"])
def test_encode_matches_bruteforce_on_midpoints(name):
    levels = np.array([float(decode_exact(c, name)) for c in finite_codes(name) if c < 128])
    mids = (levels[1:] + levels[:-1]) / 2
    probes = np.concatenate([mids, -mids, np.nextafter(mids.astype(np.float32), np.inf)])
    assert np.array_equal(encode_nearest(probes, name), nearest_code_oracle(probes, name))


def test_encode_scalar_vs_array_types():
    assert isinstance(encode_nearest(1.0, E4M3), int)
    arr = encode_nearest(np.array([1.0, 2.0]), E4M3)
    assert arr.dtype == np.uint8 and arr.shape == (2,)


def test_fp8_code_wrapper():
    c = Fp8Code(0x58, E4M3)
    assert c.value == 16.0 and str(c) == "0x58" and decode(c) == 16.0


def test_round_to_fp8_examples():
    assert round_to_fp8(1.0, E4M3) == 1.0
    assert round_to_fp8(17.0, E4M3) == 16.0


def test_round_to_fp8_idempotent_million():
    rng = np.random.default_rng(7)
    x = (rng.standard_normal(1_000_000) * 10.0 ** rng.uniform(-4, 3, 1_000_000)).astype(np.float32)
    for fmt in (E4M3, E5M2):
        once = round_to_fp8(x, fmt)
        assert np.array_equal(round_to_fp8(once, fmt), once)


@settings(max_examples=300, deadline=None)
@given(finite32, finite32)
def test_round_to_fp8_monotone(x, y):
    lo, hi = min(x, y), max(x, y)
    for fmt in (E4M3, E5M2):
        assert round_to_fp8(lo, fmt) <= round_to_fp8(hi, fmt)


@settings(max_examples=300, deadline=None)
@given(finite32)
def test_round_to_fp8_sign_symmetric(x):
    for fmt in (E4M3, E5M2):
        assert round_to_fp8(-x, fmt) == -round_to_fp8(x, fmt)


@settings(max_examples=500, deadline=None)
@given(st.floats(min_value=2.0**-6, max_value=448.0, width=32), st.booleans())
def test_half_ulp_error_bound_e4m3(x, neg):
    x = -x if neg else x
    bound = 2.0 ** (-E4M3.mantissa_bits - 1) * 2.0 ** math.ceil(math.log2(abs(x)))
    assert abs(round_to_fp8(x, E4M3) - x) <= bound


@settings(max_examples=500, deadline=None)
@given(st.floats(min_value=2.0**-14, max_value=57344.0, width=32))
def test_half_ulp_error_bound_e5m2(x):
    bound = 2.0 ** (-E5M2.mantissa_bits - 1) * 2.0 ** math.ceil(math.log2(x))
    assert abs(round_to_fp8(x, E5M2) - x) <= bound


def test_enumerate_levels():
    lv = enumerate_levels(E4M3)
    assert lv[0] == -448.0 and lv[-1] == 448.0
    assert np.all(np.diff(lv) > 0)
    assert set(lv.tolist()) == set((-lv).tolist())
    # count = distinct finite decodes with +-0 merged
    for fmt in (E4M3, E5M2):
        distinct = {float(decode_exact(c, fmt.name)) for c in finite_codes(fmt.name)}
        assert len(enumerate_levels(fmt)) == len(distinct)
    assert len(lv) == 253
    assert len(enumerate_levels(E5M2)) == 247


def test_level_spacing_is_non_uniform():
    lv = enumerate_levels(E4M3)
    gaps = np.diff(lv)
    zero = np.flatnonzero(lv == 0)[0]
    assert gaps[zero] == 2.0**-9
    top = lv[lv >= 256]
    assert np.all(np.diff(top) == 32.0)


def test_round_to_bf16_examples():
    assert round_to_bf16(1.0) == 1.0
    assert round_to_bf16(1.0 + 2**-9) == 1.0
    neg0 = round_to_bf16(-0.0)
    assert neg0 == 0.0 and math.copysign(1.0, neg0) == -1.0
    assert math.isnan(round_to_bf16(math.nan))
    assert round_to_bf16(math.inf) == math.inf


def test_round_to_bf16_ties_and_shape():
    # exact midpoint 1 + 2**-8 lies between 1.0 and 1 + 2**-7; 1.0 has the even mantissa
    assert round_to_bf16(1.0 + 2**-8) == 1.0
    assert round_to_bf16(1.0 + 3 * 2**-8) == 1.0 + 2**-6
    out = round_to_bf16(np.ones((2, 3), dtype=np.float32))
    assert out.shape == (2, 3) and out.dtype == np.float32


@settings(max_examples=1000, deadline=None)
@given(st.floats(width=32, allow_nan=False, allow_infinity=False, min_value=-(2.0**127), max_value=2.0**127))
def test_round_to_bf16_matches_rational_oracle(x):
    assert round_to_bf16(x) == round_bf16_oracle(x)


def test_round_to_bf16_matches_ml_dtypes():
    ml_dtypes = pytest.importorskip("ml_dtypes")
    rng = np.random.default_rng(3)
    x = (rng.standard_normal(200_000) * 10.0 ** rng.uniform(-30, 30, 200_000)).astype(np.float32)
    want = x.astype(ml_dtypes.bfloat16).astype(np.float32)
    assert np.array_equal(round_to_bf16(x), want)


def test_encode_matches_ml_dtypes():
    ml_dtypes = pytest.importorskip("ml_dtypes")
    rng = np.random.default_rng(4)
    x = (rng.standard_normal(200_000) * 10.0 ** rng.uniform(-5, 4, 200_000)).astype(np.float32)
    # ml_dtypes does not saturate, so compare inside the finite range only
    x4 = np.clip(x, -448, 448)
    assert np.array_equal(encode_nearest(x4, E4M3), x4.astype(ml_dtypes.float8_e4m3fn).view(np.uint8))
    x5 = np.clip(x, -57344, 57344)
    assert np.array_equal(encode_nearest(x5, E5M2), x5.astype(ml_dtypes.float8_e5m2).view(np.uint8))
