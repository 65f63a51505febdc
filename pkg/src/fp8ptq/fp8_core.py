"""Bit-exact software emulation of FP8 (E4M3, E5M2) and BF16 rounding.

FP8 values are simulated by conversion only: a real number is cast to the
nearest representable 8-bit code and decoded back to FP32. Arithmetic is
never carried out on FP8 operands.

Layout of an FP8 byte (MSB first)::

    S EEEE MMM   (E4M3, bias 7,  no infinities, S.1111.111 is NaN)
    S EEEEE MM   (E5M2, bias 15, IEEE-style inf/NaN)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "SpecialConvention",
    "Fp8Format",
    "Fp8Code",
    "E4M3",
    "E5M2",
    "FORMATS",
    "get_format",
    "decode",
    "encode_nearest",
    "round_to_fp8",
    "round_to_bf16",
    "enumerate_levels",
]


class SpecialConvention(enum.Enum):
    E4M3_STYLE = "e4m3"  # no inf; only all-ones exponent + all-ones mantissa is NaN
    IEEE_STYLE = "ieee"  # all-ones exponent is inf (mantissa 0) or NaN


@dataclass(frozen=True)
class Fp8Format:
    """Parameterized 8-bit minifloat format descriptor."""

    name: str
    exponent_bits: int
    mantissa_bits: int
    bias: int
    special_convention: SpecialConvention
    nan_code: int = field(default=0x7F)

    def __post_init__(self):
        if self.exponent_bits + self.mantissa_bits + 1 != 8:
            raise ValueError("FP8 format needs 1 + exponent_bits + mantissa_bits == 8")

    def __reduce__(self):
        return (get_format, (self.name,))

    @cached_property
    def _table(self) -> np.ndarray:
        table = np.array([_decode_fields(c, self) for c in range(256)], dtype=np.float64)
        table.setflags(write=False)
        return table

    @cached_property
    def _positive_levels(self) -> np.ndarray:
        # codes 0x00..0x7F are monotone in value up to the first special
        pos = self._table[:128]
        finite = pos[np.isfinite(pos)]
        assert np.all(np.diff(finite) > 0)
        return finite

    @property
    def max_finite(self) -> float:
        return float(self._positive_levels[-1])

    @property
    def max_code(self) -> int:
        return len(self._positive_levels) - 1

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, 1 - self.bias)

    @property
    def min_subnormal(self) -> float:
        return math.ldexp(1.0, 1 - self.bias - self.mantissa_bits)

    @property
    def inf_code(self) -> int | None:
        if self.special_convention is SpecialConvention.IEEE_STYLE:
            return ((1 << self.exponent_bits) - 1) << self.mantissa_bits
        return None

    def is_finite_code(self, code: int) -> bool:
        return bool(np.isfinite(self._table[code & 0xFF]))


E4M3 = Fp8Format("e4m3", 4, 3, 7, SpecialConvention.E4M3_STYLE, nan_code=0x7F)
# canonical quiet NaN for E5M2: all-ones exponent, mantissa MSB set
E5M2 = Fp8Format("e5m2", 5, 2, 15, SpecialConvention.IEEE_STYLE, nan_code=0x7E)

FORMATS = {"e4m3": E4M3, "e5m2": E5M2}


def get_format(name: str | Fp8Format) -> Fp8Format:
    if isinstance(name, Fp8Format):
        return name
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown FP8 format {name!r}; expected one of {sorted(FORMATS)}") from None


def _decode_fields(code: int, fmt: Fp8Format) -> float:
    m = fmt.mantissa_bits
    sign = -1.0 if code & 0x80 else 1.0
    exp_field = (code >> m) & ((1 << fmt.exponent_bits) - 1)
    man_field = code & ((1 << m) - 1)
    exp_all_ones = exp_field == (1 << fmt.exponent_bits) - 1

    if fmt.special_convention is SpecialConvention.IEEE_STYLE and exp_all_ones:
        return sign * math.inf if man_field == 0 else math.nan
    if (
        fmt.special_convention is SpecialConvention.E4M3_STYLE
        and exp_all_ones
        and man_field == (1 << m) - 1
    ):
        return math.nan
    if exp_field == 0:
        return sign * math.ldexp(man_field, 1 - fmt.bias - m)
    return sign * math.ldexp((1 << m) + man_field, exp_field - fmt.bias - m)


@dataclass(frozen=True)
class Fp8Code:
    bits: int
    format: Fp8Format

    @property
    def value(self) -> float:
        return float(self.format._table[self.bits])

    def __str__(self) -> str:
        return f"0x{self.bits:02X}"


def decode(code, fmt: Fp8Format | str = E4M3):
    """Decode FP8 code(s) to real values.

    Accepts an int, an :class:`Fp8Code`, or an integer array of codes. Arrays
    come back as float32 (every finite FP8 value is exact in FP32); scalars
    come back as Python floats.
    """
    if isinstance(code, Fp8Code):
        return code.value
    fmt = get_format(fmt)
    if isinstance(code, (int, np.integer)):
        return float(fmt._table[int(code) & 0xFF])
    codes = np.asarray(code)
    return fmt._table[codes.astype(np.uint8)].astype(np.float32)


def encode_nearest(x, fmt: Fp8Format | str = E4M3):
    """Round FP32 value(s) to the nearest FP8 code, ties to even, saturating.

    Inputs are first taken to FP32. Magnitudes beyond ``max_finite`` clip to
    ``±max_finite``; NaN maps to the canonical NaN code; infinities saturate
    for E4M3 and stay infinite for E5M2. Returns an ``int`` for scalar input
    and a ``uint8`` array otherwise.
    """
    fmt = get_format(fmt)
    scalar = np.ndim(x) == 0 and not isinstance(x, np.ndarray)
    xf = np.asarray(x, dtype=np.float32).astype(np.float64)

    sign = np.signbit(xf)
    ax = np.abs(xf)
    nan = np.isnan(ax)
    inf = np.isinf(ax)
    ax = np.where(nan | inf, 0.0, ax)

    m = fmt.mantissa_bits
    _, e2 = np.frexp(ax)  # ax = f * 2**e2, f in [0.5, 1)
    exp = np.maximum(e2 - 1, 1 - fmt.bias)
    # scaling by a power of two is exact in float64, so rint sees the true quotient
    q = np.rint(np.ldexp(ax, m - exp))
    rounded = np.minimum(np.ldexp(q, exp - m), fmt.max_finite)

    codes = np.searchsorted(fmt._positive_levels, rounded).astype(np.uint16)
    if fmt.inf_code is None:
        codes = np.where(inf, fmt.max_code, codes)
    else:
        codes = np.where(inf, fmt.inf_code, codes)
    codes = codes | (sign.astype(np.uint16) << 7)
    codes = np.where(nan, fmt.nan_code, codes).astype(np.uint8)

    if scalar:
        return int(codes)
    return codes


def round_to_fp8(x, fmt: Fp8Format | str = E4M3):
    """Fake-quantize to FP8: ``decode(encode_nearest(x))`` in FP32."""
    fmt = get_format(fmt)
    return decode(encode_nearest(x, fmt), fmt)


def round_to_bf16(x):
    """Round FP32 value(s) to the nearest BF16 value (ties to even).

    The result is returned in FP32. NaN and infinities pass through; finite
    values beyond the BF16 range round to infinity as in IEEE conversion.
    """
    scalar = np.ndim(x) == 0 and not isinstance(x, np.ndarray)
    xf = np.array(x, dtype=np.float32, copy=True, ndmin=1)
    bits = xf.view(np.uint32)
    lsb = (bits >> 16) & 1
    rounded = ((bits.astype(np.uint64) + 0x7FFF + lsb) & 0xFFFF0000).astype(np.uint32)
    out = np.where(np.isnan(xf), xf, rounded.view(np.float32))
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(x))


def enumerate_levels(fmt: Fp8Format | str = E4M3) -> np.ndarray:
    """All distinct finite values of the format, strictly increasing.

    ``+0`` and ``-0`` count once; special codes are excluded.
    """
    fmt = get_format(fmt)
    pos = fmt._positive_levels
    return np.concatenate([-pos[:0:-1], pos])
