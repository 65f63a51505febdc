"""Dense FP32 operators: deterministic GEMM, BF16-simulated nonlinears, metrics.

Tensors are plain ``numpy.float32`` arrays. The ``*_bf16`` operators round
their inputs and outputs to BF16 and keep internal reductions in FP32; the
unsuffixed variants are the pure FP32 reference used by the FP32 run mode.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ParameterError
from .fp8_core import round_to_bf16

__all__ = [
    "gemm",
    "softmax",
    "softmax_bf16",
    "gelu",
    "gelu_bf16",
    "layernorm",
    "layernorm_bf16",
    "metrics",
]

_f32 = np.float32


def gemm(a, b, bias=None) -> np.ndarray:
    """``a @ b (+ bias)`` with FP32 accumulation in ascending-k order.

    Leading batch dimensions of ``a`` and ``b`` broadcast like ``matmul``.
    Each output element is accumulated as ``acc = acc + a[i, k] * b[k, j]``
    for k = 0, 1, ..., so results are bit-identical to a naive triple loop
    and independent of BLAS threading.
    """
    a = np.asarray(a, dtype=_f32)
    b = np.asarray(b, dtype=_f32)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ParameterError(f"gemm shape mismatch: {a.shape} x {b.shape}")
    k = a.shape[-1]
    out_shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
    acc = np.zeros(out_shape, dtype=_f32)
    for kk in range(k):
        acc += a[..., :, kk, None] * b[..., kk, None, :]
    if bias is not None:
        bias = np.asarray(bias, dtype=_f32)
        if bias.shape != (b.shape[-1],):
            raise ParameterError(f"bias shape {bias.shape} does not match {b.shape[-1]} outputs")
        acc += bias
    return acc


def _check_axis(t: np.ndarray, axis: int) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise ParameterError(f"invalid axis {axis} for {t.ndim}-d tensor")
    return axis


def softmax(t, axis: int = -1) -> np.ndarray:
    t = np.asarray(t, dtype=_f32)
    axis = _check_axis(t, axis)
    e = np.exp(t - t.max(axis=axis, keepdims=True))
    return (e / e.sum(axis=axis, keepdims=True, dtype=_f32)).astype(_f32)


def softmax_bf16(t, axis: int = -1) -> np.ndarray:
    return round_to_bf16(softmax(round_to_bf16(np.asarray(t, dtype=_f32)), axis))


def gelu(t) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)`` via erf (not the tanh approximation)."""
    x = np.asarray(t, dtype=_f32)
    return (x * _f32(0.5) * (_f32(1.0) + erf(x * _f32(1.0 / math.sqrt(2.0))))).astype(_f32)


def gelu_bf16(t) -> np.ndarray:
    return round_to_bf16(gelu(round_to_bf16(np.asarray(t, dtype=_f32))))


def layernorm(t, gamma, beta, axis: int = -1, epsilon: float = 1e-5) -> np.ndarray:
    t = np.asarray(t, dtype=_f32)
    axis = _check_axis(t, axis)
    gamma = np.asarray(gamma, dtype=_f32)
    beta = np.asarray(beta, dtype=_f32)
    n = t.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ParameterError(f"layernorm params must have shape ({n},)")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    view = [1] * t.ndim
    view[axis] = n
    mean = t.mean(axis=axis, keepdims=True, dtype=_f32)
    centered = t - mean
    var = (centered * centered).mean(axis=axis, keepdims=True, dtype=_f32)
    normed = centered / np.sqrt(var + _f32(epsilon))
    return (normed * gamma.reshape(view) + beta.reshape(view)).astype(_f32)


def layernorm_bf16(t, gamma, beta, axis: int = -1, epsilon: float = 1e-5) -> np.ndarray:
    x = round_to_bf16(np.asarray(t, dtype=_f32))
    return round_to_bf16(layernorm(x, gamma, beta, axis, epsilon))


def metrics(a, b) -> dict:
    """Error of ``b`` against reference ``a``.

    ``sqnr_db`` is ``inf`` when the two agree exactly. ``sqnr_db`` and
    ``cosine`` are ``None`` (undefined) for an all-zero reference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"metrics shape mismatch: {a.shape} vs {b.shape}")
    err = a - b
    err_power = float(np.sum(err * err))
    sig_power = float(np.sum(a * a))
    mse = err_power / a.size if a.size else 0.0
    max_abs = float(np.max(np.abs(err))) if a.size else 0.0

    if sig_power == 0.0:
        sqnr = None
        cosine = None
    else:
        sqnr = math.inf if err_power == 0.0 else 10.0 * math.log10(sig_power / err_power)
        nb = math.sqrt(float(np.sum(b * b)))
        if err_power == 0.0:
            cosine = 1.0
        elif nb == 0.0:
            cosine = 0.0
        else:
            cosine = float(np.sum(a * b)) / (math.sqrt(sig_power) * nb)
            cosine = min(1.0, max(-1.0, cosine))
    return {"mse": mse, "sqnr_db": sqnr, "cosine": cosine, "max_abs_err": max_abs}
