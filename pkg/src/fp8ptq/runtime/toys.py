"""Desk-scale models and datasets: outlier-injected encoder block, tiny MLP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..errors import ParameterError
from .container import (
    ATTENTION_BLOCK,
    GELU,
    GEMM,
    LAYERNORM,
    RESIDUAL_ADD,
    LayerSpec,
    ModelContainer,
)
from .graph import run

DATASET_KINDS = ("gauss_outliers", "two_moons", "clusters")


def _outlier_count(frac: float, n: int) -> int:
    # round() guards against 0.001 * 4096 style products landing a hair above an integer
    return math.ceil(round(frac * n, 9))


def gauss_outliers(n: int, seed: int, outlier_frac: float = 0.001, outlier_mag: float = 50.0,
                   dim: int | None = None) -> np.ndarray:
    """N(0, 1) samples with ``ceil(frac * n)`` entries replaced by ``±mag``."""
    if n <= 0:
        raise ParameterError("n must be positive")
    if not 0.0 <= outlier_frac <= 1.0:
        raise ParameterError("outlier fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n).astype(np.float32)
    k = _outlier_count(outlier_frac, n)
    idx = rng.choice(n, size=k, replace=False)
    signs = np.where(rng.random(k) < 0.5, -1.0, 1.0)
    x[idx] = (signs * outlier_mag).astype(np.float32)
    if dim:
        if n % dim:
            raise ParameterError(f"n={n} is not a multiple of dim={dim}")
        x = x.reshape(n // dim, dim)
    return x


def two_moons(n: int, seed: int, noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    n0 = n // 2
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n - n0)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0), np.ones(n - n0)])
    perm = rng.permutation(n)
    return x[perm].astype(np.float32), y[perm].astype(np.float32)


def clusters(n: int, seed: int, spread: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Two well separated Gaussian blobs centred at (-2, -2) and (2, 2)."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(np.float32)
    centres = np.where(y[:, None] > 0, 2.0, -2.0)
    x = centres + spread * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    return x[perm].astype(np.float32), y[perm]


def make_dataset(kind: str, n: int, seed: int, outlier_frac: float = 0.001,
                 outlier_mag: float = 50.0, dim: int | None = None) -> ModelContainer:
    """Dataset as a graph-less container holding ``x`` (and ``y`` for labelled kinds)."""
    if n <= 0:
        raise ParameterError("n must be positive")
    meta = {"kind": kind, "n": str(n), "seed": str(seed)}
    if kind == "gauss_outliers":
        x = gauss_outliers(n, seed, outlier_frac, outlier_mag, dim)
        meta.update(outlier_frac=repr(float(outlier_frac)), outlier_mag=repr(float(outlier_mag)),
                    max_abs=repr(float(np.abs(x).max())))
        return ModelContainer({"x": x}, [], meta)
    if kind == "two_moons":
        x, y = two_moons(n, seed)
    elif kind == "clusters":
        x, y = clusters(n, seed)
    else:
        raise ParameterError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    return ModelContainer({"x": x, "y": y}, [], meta)


# -- encoder ---------------------------------------------------------------


@dataclass(frozen=True)
class OutlierSpec:
    """Where and how strongly to inject outliers.

    For each target tensor ``ceil(fraction * size)`` entries (at least one) are
    set to ``±magnitude`` times the tensor's nominal scale (the init standard
    deviation for weights, 1 for LayerNorm gains).
    """

    fraction: float = 0.001
    magnitude: float = 50.0
    targets: tuple[str, ...] = ("ln1.gamma", "wv", "w1")


def build_toy_encoder(seed: int = 0, d_model: int = 64, heads: int = 4, ffn: int = 256,
                      seq_len: int = 32, outliers: OutlierSpec | None = OutlierSpec()) -> ModelContainer:
    """One post-LN transformer encoder block with seeded Gaussian weights."""
    if min(d_model, heads, ffn, seq_len) <= 0 or d_model % heads:
        raise ParameterError("invalid encoder dims: need positive dims and d_model % heads == 0")
    rng = np.random.default_rng(seed)
    shapes = {
        "wq": (d_model, d_model), "wk": (d_model, d_model),
        "wv": (d_model, d_model), "wo": (d_model, d_model),
        "w1": (d_model, ffn), "w2": (ffn, d_model),
    }
    tensors, nominal = {}, {}
    for name, shape in shapes.items():
        std = 1.0 / math.sqrt(shape[0])
        tensors[name] = rng.normal(0.0, std, shape)
        tensors["b" + name[1:]] = rng.normal(0.0, 0.02, shape[1])
        nominal[name] = std
    for ln in ("ln1", "ln2"):
        tensors[f"{ln}.gamma"] = np.ones(d_model)
        tensors[f"{ln}.beta"] = np.zeros(d_model)
        nominal[f"{ln}.gamma"] = 1.0

    if outliers is not None and outliers.fraction > 0:
        if not 0.0 <= outliers.fraction <= 1.0:
            raise ParameterError("outlier fraction must lie in [0, 1]")
        for name in outliers.targets:
            if name not in nominal:
                raise ParameterError(f"cannot inject outliers into {name!r}")
            t = tensors[name].reshape(-1)
            k = max(1, _outlier_count(outliers.fraction, t.size))
            idx = rng.choice(t.size, size=k, replace=False)
            signs = np.where(rng.random(k) < 0.5, -1.0, 1.0)
            t[idx] = signs * outliers.magnitude * nominal[name]

    graph = [
        LayerSpec(ATTENTION_BLOCK,
                  {p: p for p in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")},
                  {"heads": heads, "save_input_as": "attn_in"}),
        LayerSpec(RESIDUAL_ADD, {}, {"add": "attn_in"}),
        LayerSpec(LAYERNORM, {"gamma": "ln1.gamma", "beta": "ln1.beta"}, {"epsilon": 1e-5}),
        LayerSpec(GEMM, {"weight": "w1", "bias": "b1"}, {"save_input_as": "ffn_in"}),
        LayerSpec(GELU),
        LayerSpec(GEMM, {"weight": "w2", "bias": "b2"}),
        LayerSpec(RESIDUAL_ADD, {}, {"add": "ffn_in"}),
        LayerSpec(LAYERNORM, {"gamma": "ln2.gamma", "beta": "ln2.beta"}, {"epsilon": 1e-5}),
    ]
    meta = {
        "model": "toy_encoder", "seed": str(seed), "d_model": str(d_model),
        "heads": str(heads), "ffn": str(ffn), "seq_len": str(seq_len),
    }
    if outliers is not None:
        meta.update({
            "outlier.fraction": repr(float(outliers.fraction)),
            "outlier.magnitude": repr(float(outliers.magnitude)),
            "outlier.targets": ",".join(outliers.targets),
        })
    return ModelContainer(tensors, graph, meta)


def encoder_input(seed: int, seq_len: int = 32, d_model: int = 64, batch: int | None = None) -> np.ndarray:
    shape = (seq_len, d_model) if batch is None else (batch, seq_len, d_model)
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


# -- MLP -------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def _gelu64(h):
    return 0.5 * h * (1.0 + erf(h / _SQRT2))


def _gelu64_grad(h):
    cdf = 0.5 * (1.0 + erf(h / _SQRT2))
    pdf = np.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi)
    return cdf + h * pdf


def mlp_loss_and_grads(params: dict, x: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
    """Mean softmax cross-entropy of ``gelu(x W1 + b1) W2 + b2`` and its gradients.

    Works in float64. ``y`` holds integer class labels.
    """
    w1, b1, w2, b2 = params["w1"], params["b1"], params["w2"], params["b2"]
    n = x.shape[0]
    labels = y.astype(np.int64)

    h = x @ w1 + b1
    a = _gelu64(h)
    logits = a @ w2 + b2
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = {"w2": a.T @ dlogits, "b2": dlogits.sum(axis=0)}
    dh = (dlogits @ w2.T) * _gelu64_grad(h)
    grads["w1"] = x.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return float(loss), grads


def mlp_container(params: dict, metadata: dict | None = None) -> ModelContainer:
    graph = [
        LayerSpec(GEMM, {"weight": "w1", "bias": "b1"}),
        LayerSpec(GELU),
        LayerSpec(GEMM, {"weight": "w2", "bias": "b2"}),
    ]
    return ModelContainer({k: params[k] for k in ("w1", "b1", "w2", "b2")}, graph, dict(metadata or {}))


def split_dataset(ds: ModelContainer, train_frac: float = 0.75):
    x, y = ds.tensors["x"], ds.tensors["y"]
    n_train = int(round(train_frac * len(x)))
    return (x[:n_train], y[:n_train]), (x[n_train:], y[n_train:])


def accuracy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == y.astype(np.int64)))


def train_toy_mlp(dataset: ModelContainer, epochs: int = 1000, lr: float = 0.5, seed: int = 0,
                  hidden: int = 32) -> ModelContainer:
    """Full-batch gradient descent on a GEMM -> GELU -> GEMM classifier.

    The first 75% of the dataset is the training split, the rest is test.
    Final FP32 accuracies (evaluated through :func:`run`) land in metadata.
    """
    if epochs < 0 or not lr > 0:
        raise ParameterError("epochs must be >= 0 and lr > 0")
    if "y" not in dataset.tensors:
        raise ParameterError("dataset has no labels")
    (xtr, ytr), (xte, yte) = split_dataset(dataset)
    n_classes = int(dataset.tensors["y"].max()) + 1
    if len(np.unique(ytr)) < 2:
        raise ParameterError("degenerate dataset: training split has a single class")

    rng = np.random.default_rng(seed)
    d = xtr.shape[1]
    params = {
        "w1": rng.normal(0.0, 1.0 / math.sqrt(d), (d, hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, n_classes)),
        "b2": np.zeros(n_classes),
    }
    x64 = xtr.astype(np.float64)
    loss = float("nan")
    for _ in range(epochs):
        loss, grads = mlp_loss_and_grads(params, x64, ytr)
        for k in params:
            params[k] -= lr * grads[k]

    meta = {
        "model": "toy_mlp", "seed": str(seed), "epochs": str(epochs), "lr": repr(float(lr)),
        "hidden": str(hidden), "final_loss": repr(loss),
    }
    m = mlp_container(params, meta)
    m.metadata["train_accuracy"] = repr(accuracy(run(m, xtr), ytr))
    m.metadata["test_accuracy"] = repr(accuracy(run(m, xte), yte)) if len(xte) else "undefined"
    return m
