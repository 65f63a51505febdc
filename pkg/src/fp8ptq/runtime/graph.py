"""Graph execution in FP32 / quantization-simulation mode and the PTQ pipeline.

Only GEMMs are quantized. In ``quant_sim`` mode every GEMM multiplies
fake-quantized operands with FP32 accumulation, while Softmax, GELU and
LayerNorm run through their BF16-simulated variants. Residual adds and bias
adds stay in FP32.

Calibration hooks sit on every GEMM operand that is an activation. Keys are
``"<layer index>:<operand>"``, for example ``"0:act"`` or ``"3:scores.lhs"``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .. import tensor as T
from ..errors import CalibrationError, NonFiniteError, ParameterError
from ..quant import (
    PER_CHANNEL,
    PER_TENSOR,
    CalibRange,
    QuantParams,
    fake_quant,
    observe,
    per_channel_params,
    per_tensor_params,
    scale_from_range,
)
from .container import (
    ATTENTION_BLOCK,
    GELU,
    GEMM,
    LAYERNORM,
    RESIDUAL_ADD,
    SOFTMAX,
    LayerSpec,
    ModelContainer,
)

FP32 = "fp32"
QUANT_SIM = "quant_sim"
MODES = (FP32, QUANT_SIM)

WEIGHT_AXIS = 1  # weights are stored (in_features, out_features)

ATTN_PROJ = ("q", "k", "v")
ATTN_INTERNAL = ("scores.lhs", "scores.rhs", "context.lhs", "context.rhs")

Observer = Callable[[str, np.ndarray], None]


def gemm_sites(layer: LayerSpec, index: int) -> tuple[list[str], dict[str, str]]:
    """Activation hook keys and ``{weight quant key: tensor name}`` of a layer."""
    if layer.kind == GEMM:
        return [f"{index}:act"], {"weight": layer.params["weight"]}
    if layer.kind == ATTENTION_BLOCK:
        acts = [f"{index}:qkv.act", f"{index}:out.act"]
        if layer.attrs.get("quant_internal", True):
            acts += [f"{index}:{k}" for k in ATTN_INTERNAL]
        weights = {f"{p}.weight": layer.params[f"w{p}"] for p in ATTN_PROJ}
        weights["out.weight"] = layer.params["wo"]
        return acts, weights
    return [], {}


class _Executor:
    def __init__(self, m: ModelContainer, mode: str, observer: Observer | None):
        if mode not in MODES:
            raise ParameterError(f"unknown run mode {mode!r}; expected one of {MODES}")
        self.m = m
        self.quant = mode == QUANT_SIM
        self.observer = observer
        if self.quant:
            self.softmax, self.gelu, self.layernorm = T.softmax_bf16, T.gelu_bf16, T.layernorm_bf16
        else:
            self.softmax, self.gelu, self.layernorm = T.softmax, T.gelu, T.layernorm

    def operand(self, layer: LayerSpec, index: int, key: str, x: np.ndarray) -> np.ndarray:
        if self.observer is not None:
            self.observer(f"{index}:{key}", x)
        if not self.quant:
            return x
        try:
            params = layer.quant[key]
        except KeyError:
            raise ParameterError(
                f"layer {index} ({layer.kind}) has no quant params for {key!r}; run ptq first"
            ) from None
        return fake_quant(x, params)

    def weight(self, layer: LayerSpec, index: int, key: str, name: str) -> np.ndarray:
        w = self.m.tensors[name]
        if not self.quant:
            return w
        try:
            return fake_quant(w, layer.quant[key])
        except KeyError:
            raise ParameterError(
                f"layer {index} ({layer.kind}) has no quant params for {key!r}; run ptq first"
            ) from None

    def bias(self, layer: LayerSpec, role: str):
        name = layer.params.get(role)
        return None if name is None else self.m.tensors[name]

    def gemm_layer(self, layer, i, x):
        a = self.operand(layer, i, "act", x)
        w = self.weight(layer, i, "weight", layer.params["weight"])
        return T.gemm(a, w, self.bias(layer, "bias"))

    def attention(self, layer, i, x):
        heads = int(layer.attrs["heads"])
        internal = not self.quant or layer.attrs.get("quant_internal", True)
        d = x.shape[-1]
        if d % heads:
            raise ParameterError(f"model width {d} not divisible by {heads} heads")
        dh = d // heads

        xq = self.operand(layer, i, "qkv.act", x)
        proj = {
            p: T.gemm(xq, self.weight(layer, i, f"{p}.weight", layer.params[f"w{p}"]),
                      self.bias(layer, f"b{p}"))
            for p in ATTN_PROJ
        }

        def split(t):  # (..., s, d) -> (..., h, s, dh)
            return np.swapaxes(t.reshape(t.shape[:-1] + (heads, dh)), -3, -2)

        q, k, v = split(proj["q"]), split(proj["k"]), split(proj["v"])
        kt = np.swapaxes(k, -1, -2)
        if internal:
            q = self.operand(layer, i, "scores.lhs", q)
            kt = self.operand(layer, i, "scores.rhs", kt)
        scores = T.gemm(q, kt) * np.float32(1.0 / math.sqrt(dh))
        probs = self.softmax(scores, -1)
        if internal:
            probs = self.operand(layer, i, "context.lhs", probs)
            v = self.operand(layer, i, "context.rhs", v)
        ctx = T.gemm(probs, v)
        ctx = np.swapaxes(ctx, -3, -2)
        ctx = np.ascontiguousarray(ctx).reshape(ctx.shape[:-2] + (d,))

        co = self.operand(layer, i, "out.act", ctx)
        wo = self.weight(layer, i, "out.weight", layer.params["wo"])
        return T.gemm(co, wo, self.bias(layer, "bo"))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float32)
        saved: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.m.graph):
            tag = layer.attrs.get("save_input_as")
            if tag:
                saved[tag] = h
            kind = layer.kind
            if kind == GEMM:
                h = self.gemm_layer(layer, i, h)
            elif kind == ATTENTION_BLOCK:
                h = self.attention(layer, i, h)
            elif kind == GELU:
                h = self.gelu(h)
            elif kind == SOFTMAX:
                h = self.softmax(h, int(layer.attrs.get("axis", -1)))
            elif kind == LAYERNORM:
                h = self.layernorm(
                    h,
                    self.m.tensors[layer.params["gamma"]],
                    self.m.tensors[layer.params["beta"]],
                    -1,
                    float(layer.attrs.get("epsilon", 1e-5)),
                )
            elif kind == RESIDUAL_ADD:
                other = saved[layer.attrs["add"]]
                if other.shape != h.shape:
                    raise ParameterError(f"layer {i}: residual shape {other.shape} != {h.shape}")
                h = h + other
        return h


def run(m: ModelContainer, x, mode: str = FP32, observer: Observer | None = None) -> np.ndarray:
    """Forward pass. ``observer(key, tensor)`` sees every GEMM activation operand."""
    return _Executor(m, mode, observer)(x)


def collect_ranges(m: ModelContainer, calib: Iterable) -> dict[str, CalibRange]:
    """Run calibration batches through the FP32 graph and record min/max per hook."""
    ranges: dict[str, CalibRange] = {}

    def hook(key, t):
        try:
            ranges[key] = observe(ranges.get(key, CalibRange()), t)
        except NonFiniteError:
            idx = int(key.split(":")[0])
            raise NonFiniteError(
                f"non-finite activation at layer {idx} ({m.graph[idx].kind}), operand {key}"
            ) from None

    n = 0
    for batch in calib:
        run(m, batch, FP32, hook)
        n += 1
    if n == 0:
        raise CalibrationError("no calibration data")
    return ranges


def attach_params(
    m: ModelContainer,
    ranges: dict[str, CalibRange],
    target: str,
    weight_granularity: str = PER_CHANNEL,
    quant_attn_internal: bool = True,
) -> ModelContainer:
    """New container with static params on every GEMM; weights are left untouched."""
    if weight_granularity not in (PER_CHANNEL, PER_TENSOR):
        raise ParameterError(f"unknown weight granularity {weight_granularity!r}")
    graph = []
    for i, layer in enumerate(m.graph):
        attrs = dict(layer.attrs)
        if layer.kind == ATTENTION_BLOCK:
            attrs["quant_internal"] = bool(quant_attn_internal)
        new = LayerSpec(layer.kind, dict(layer.params), attrs, {})
        acts, weights = gemm_sites(new, i)
        for key in acts:
            if key not in ranges:
                raise CalibrationError(f"no calibration data for {key}")
            new.quant[key.split(":", 1)[1]] = scale_from_range(ranges[key], target)
        for key, name in weights.items():
            w = m.tensors[name]
            if weight_granularity == PER_CHANNEL:
                new.quant[key] = per_channel_params(w, WEIGHT_AXIS, target)
            else:
                new.quant[key] = per_tensor_params(w, target)
        graph.append(new)

    meta = dict(m.metadata)
    meta["quant.target"] = str(getattr(target, "name", target))
    meta["quant.weights"] = weight_granularity
    meta["quant.attn_internal"] = str(bool(quant_attn_internal)).lower()
    return ModelContainer(dict(m.tensors), graph, meta)


def ptq(
    m: ModelContainer,
    calib: Iterable,
    target: str,
    weight_granularity: str = PER_CHANNEL,
    quant_attn_internal: bool = True,
) -> ModelContainer:
    """Post-training quantization: calibrate, derive static params, attach them."""
    ranges = collect_ranges(m, calib)
    return attach_params(m, ranges, target, weight_granularity, quant_attn_internal)
