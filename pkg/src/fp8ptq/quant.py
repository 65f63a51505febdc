"""Symmetric min/max quantization to FP8 and the uniform INT8 baseline.

The scale maps the calibrated magnitude onto the top of the target grid::

    S = max(|alpha|, |beta|) / M      M = max_finite (FP8) or 127 (INT8)

and quantization is a cast of ``r / S`` onto that grid with zero point 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import CalibrationError, NonFiniteError, ParameterError
from .fp8_core import FORMATS, decode, encode_nearest, get_format

__all__ = [
    "INT8_MAX",
    "TARGETS",
    "CalibRange",
    "QuantParams",
    "QTensor",
    "observe",
    "merge",
    "scale_from_range",
    "per_tensor_params",
    "per_channel_params",
    "quantize",
    "quantize_fp8",
    "quantize_int8",
    "dequantize",
    "fake_quant",
    "calibrate",
]

INT8_MAX = 127
TARGETS = ("int8", *FORMATS)

PER_TENSOR = "per_tensor"
PER_CHANNEL = "per_channel"


def _target_max(target: str) -> float:
    if target == "int8":
        return float(INT8_MAX)
    return get_format(target).max_finite


def _check_target(target) -> str:
    name = getattr(target, "name", target)
    if name not in TARGETS:
        raise ParameterError(f"unknown quantization target {target!r}; expected one of {TARGETS}")
    return name


@dataclass(frozen=True)
class CalibRange:
    """Running min/max of everything observed so far."""

    alpha: float = float("inf")
    beta: float = float("-inf")
    count: int = 0

    @property
    def absmax(self) -> float:
        return max(abs(self.alpha), abs(self.beta))

    def to_record(self) -> dict:
        return {"alpha": repr(self.alpha), "beta": repr(self.beta), "count": self.count}

    @classmethod
    def from_record(cls, rec: dict) -> "CalibRange":
        return cls(float(rec["alpha"]), float(rec["beta"]), int(rec["count"]))


def observe(rng: CalibRange, t) -> CalibRange:
    t = np.asarray(t, dtype=np.float32)
    if t.size == 0:
        return rng
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("calibration data contains non-finite values")
    return CalibRange(
        min(rng.alpha, float(t.min())),
        max(rng.beta, float(t.max())),
        rng.count + int(t.size),
    )


def merge(a: CalibRange, b: CalibRange) -> CalibRange:
    return CalibRange(min(a.alpha, b.alpha), max(a.beta, b.beta), a.count + b.count)


def _scale_from_absmax(absmax, target: str) -> np.ndarray:
    absmax = np.asarray(absmax, dtype=np.float32)
    scale = absmax / np.float32(_target_max(target))
    # tiny but nonzero ranges must not underflow to a zero scale
    scale = np.maximum(scale, np.finfo(np.float32).smallest_subnormal)
    # all-zero data: any positive scale gives the same all-zero output
    return np.where(absmax > 0, scale, np.float32(1.0)).astype(np.float32)


@dataclass(frozen=True, eq=False)
class QuantParams:
    """Static symmetric quantization parameters.

    ``scale`` is a 0-d FP32 array for per-tensor granularity and a 1-d FP32
    array (one entry per slice along ``axis``) for per-channel granularity.
    """

    scale: np.ndarray
    target: str
    granularity: str = PER_TENSOR
    axis: int | None = None
    zero_point: float = 0.0

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=np.float32)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "target", _check_target(self.target))
        if not np.all(np.isfinite(scale)) or not np.all(scale > 0):
            raise ParameterError("scales must be strictly positive and finite")
        if self.zero_point != 0:
            raise ParameterError("only symmetric quantization (zero_point = 0) is supported")
        if self.granularity == PER_TENSOR:
            if scale.ndim != 0:
                raise ParameterError("per-tensor params need a scalar scale")
        elif self.granularity == PER_CHANNEL:
            if scale.ndim != 1 or self.axis is None:
                raise ParameterError("per-channel params need a scale vector and an axis")
        else:
            raise ParameterError(f"unknown granularity {self.granularity!r}")

    def __eq__(self, other):
        if not isinstance(other, QuantParams):
            return NotImplemented
        return (
            self.target == other.target
            and self.granularity == other.granularity
            and self.axis == other.axis
            and self.scale.shape == other.scale.shape
            and np.array_equal(self.scale, other.scale)
        )

    def broadcast_scale(self, shape) -> np.ndarray:
        if self.granularity == PER_TENSOR:
            return self.scale
        ndim = len(shape)
        axis = self.axis % ndim if -ndim <= self.axis < ndim else None
        if axis is None or shape[axis] != self.scale.shape[0]:
            raise ParameterError(
                f"scale vector of length {self.scale.shape[0]} does not match "
                f"extent along axis {self.axis} of shape {tuple(shape)}"
            )
        view = [1] * ndim
        view[axis] = -1
        return self.scale.reshape(view)

    def to_record(self) -> dict:
        """JSON-ready record; scales as shortest round-trip FP32 decimals."""
        if self.granularity == PER_TENSOR:
            scale = str(self.scale[()])
        else:
            scale = [str(s) for s in self.scale]
        return {
            "target": self.target,
            "granularity": self.granularity,
            "axis": self.axis,
            "scale": scale,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QuantParams":
        scale = rec["scale"]
        if isinstance(scale, list):
            arr = np.array([np.float32(s) for s in scale], dtype=np.float32)
        else:
            arr = np.float32(scale)
        return cls(arr, rec["target"], rec["granularity"], rec.get("axis"))


@dataclass(frozen=True, eq=False)
class QTensor:
    """Stored 8-bit codes (uint8 FP8 codes or int8 integers) plus their params."""

    codes: np.ndarray
    params: QuantParams

    @property
    def shape(self) -> tuple:
        return self.codes.shape


def scale_from_range(rng: CalibRange, target) -> QuantParams:
    target = _check_target(target)
    if rng.count == 0:
        raise CalibrationError("no calibration data")
    return QuantParams(_scale_from_absmax(rng.absmax, target), target)


def per_tensor_params(t, target) -> QuantParams:
    return scale_from_range(observe(CalibRange(), t), target)


def per_channel_params(w, axis: int, target) -> QuantParams:
    """One scale per slice of ``w`` along ``axis``, each from that slice's own range."""
    target = _check_target(target)
    w = np.asarray(w, dtype=np.float32)
    if w.size == 0 or w.ndim == 0:
        raise CalibrationError("no calibration data")
    if not -w.ndim <= axis < w.ndim:
        raise ParameterError(f"axis {axis} out of range for {w.ndim}-d tensor")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("weights contain non-finite values")
    axis = axis % w.ndim
    reduce_axes = tuple(i for i in range(w.ndim) if i != axis)
    absmax = np.abs(w).max(axis=reduce_axes) if reduce_axes else np.abs(w)
    return QuantParams(_scale_from_absmax(absmax, target), target, PER_CHANNEL, axis)


def _scaled(t, params: QuantParams) -> np.ndarray:
    t = np.asarray(t, dtype=np.float32)
    return t / params.broadcast_scale(t.shape)


def quantize_fp8(t, params: QuantParams) -> QTensor:
    if params.target == "int8":
        raise ParameterError("quantize_fp8 needs an FP8 target")
    return QTensor(encode_nearest(_scaled(t, params), params.target), params)


def quantize_int8(t, params: QuantParams) -> QTensor:
    if params.target != "int8":
        raise ParameterError("quantize_int8 needs the int8 target")
    q = np.clip(np.rint(_scaled(t, params)), -INT8_MAX, INT8_MAX)
    return QTensor(q.astype(np.int8), params)


def quantize(t, params: QuantParams) -> QTensor:
    if params.target == "int8":
        return quantize_int8(t, params)
    return quantize_fp8(t, params)


def dequantize(q: QTensor) -> np.ndarray:
    p = q.params
    if p.target == "int8":
        levels = q.codes.astype(np.float32)
    else:
        levels = decode(q.codes, p.target)
    return (levels * p.broadcast_scale(q.shape)).astype(np.float32)


def fake_quant(t, params: QuantParams) -> np.ndarray:
    """Quantize then dequantize; the FP32 stand-in for low-precision execution."""
    return dequantize(quantize(t, params))


def calibrate(batches: Iterable) -> CalibRange:
    rng = CalibRange()
    for b in batches:
        rng = observe(rng, b)
    return rng
