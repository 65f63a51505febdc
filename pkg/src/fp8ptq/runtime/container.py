"""Named-tensor container with a layer graph, and its on-disk format.

File layout (all integers little-endian)::

    b"FPQ1" | u32 header_len | header (UTF-8 JSON) | payload section

The header holds ``version``, ``graph`` (layer records), ``tensors``
(``{name: {dtype, shape, offset, nbytes}}``) and ``metadata``. Tensor
offsets are byte offsets into the payload section, which starts right after
the header. Payloads are raw little-endian FP32.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    BadMagicError,
    ContainerError,
    DanglingTensorError,
    TruncatedPayloadError,
    UnknownLayerKindError,
)
from ..quant import QuantParams

MAGIC = b"FPQ1"
VERSION = 1

GEMM = "GEMM"
SOFTMAX = "SOFTMAX"
GELU = "GELU"
LAYERNORM = "LAYERNORM"
RESIDUAL_ADD = "RESIDUAL_ADD"
ATTENTION_BLOCK = "ATTENTION_BLOCK"
LAYER_KINDS = (GEMM, SOFTMAX, GELU, LAYERNORM, RESIDUAL_ADD, ATTENTION_BLOCK)


@dataclass
class LayerSpec:
    kind: str
    params: dict[str, str] = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)
    quant: dict[str, QuantParams] = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"kind": self.kind, "params": dict(self.params), "attrs": dict(self.attrs)}
        if self.quant:
            rec["quant"] = {k: p.to_record() for k, p in self.quant.items()}
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "LayerSpec":
        kind = rec.get("kind")
        if kind not in LAYER_KINDS:
            raise UnknownLayerKindError(f"unknown layer kind {kind!r}")
        quant = {k: QuantParams.from_record(v) for k, v in rec.get("quant", {}).items()}
        return cls(kind, dict(rec.get("params", {})), dict(rec.get("attrs", {})), quant)


@dataclass
class ModelContainer:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    graph: list[LayerSpec] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = {k: _as_f32(v) for k, v in self.tensors.items()}

    def validate(self) -> None:
        for i, layer in enumerate(self.graph):
            if layer.kind not in LAYER_KINDS:
                raise UnknownLayerKindError(f"layer {i}: unknown layer kind {layer.kind!r}")
            for role, name in layer.params.items():
                if name not in self.tensors:
                    raise DanglingTensorError(
                        f"layer {i} ({layer.kind}) references missing tensor {name!r} as {role}"
                    )
            if layer.quant and layer.kind not in (GEMM, ATTENTION_BLOCK):
                raise ContainerError(f"layer {i}: quant params only allowed on GEMM layers")

    def __eq__(self, other):
        if not isinstance(other, ModelContainer):
            return NotImplemented
        return (
            self.tensors.keys() == other.tensors.keys()
            and all(
                self.tensors[k].shape == other.tensors[k].shape
                and self.tensors[k].tobytes() == other.tensors[k].tobytes()
                for k in self.tensors
            )
            and [l.to_record() for l in self.graph] == [l.to_record() for l in other.graph]
            and self.metadata == other.metadata
        )


def _as_f32(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


def to_bytes(m: ModelContainer) -> bytes:
    m.validate()
    entries = {}
    payload = bytearray()
    for name, arr in m.tensors.items():
        data = arr.astype("<f4").tobytes()
        entries[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": len(data),
        }
        payload += data
    header = {
        "version": VERSION,
        "graph": [layer.to_record() for layer in m.graph],
        "tensors": entries,
        "metadata": {str(k): str(v) for k, v in m.metadata.items()},
    }
    hbytes = json.dumps(header, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + bytes(payload)


def from_bytes(buf: bytes) -> ModelContainer:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise BadMagicError("bad magic: not an FPQ1 container")
    (hlen,) = struct.unpack("<I", buf[4:8])
    if 8 + hlen > len(buf):
        raise TruncatedPayloadError("truncated payload: header extends past end of file")
    try:
        header = json.loads(buf[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed header: {exc}") from None
    if header.get("version") != VERSION:
        raise ContainerError(f"unsupported container version {header.get('version')!r}")

    payload = memoryview(buf)[8 + hlen :]
    tensors = {}
    for name, ent in header.get("tensors", {}).items():
        if ent.get("dtype") != "f32":
            raise ContainerError(f"tensor {name!r}: unsupported dtype {ent.get('dtype')!r}")
        shape = tuple(int(s) for s in ent["shape"])
        off, nbytes = int(ent["offset"]), int(ent["nbytes"])
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ContainerError(f"tensor {name!r}: nbytes does not match shape {shape}")
        if off < 0 or off + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"truncated payload: tensor {name!r} needs bytes [{off}, {off + nbytes}) "
                f"of a {len(payload)}-byte payload section"
            )
        arr = np.frombuffer(payload[off : off + nbytes], dtype="<f4").astype(np.float32)
        tensors[name] = arr.reshape(shape)

    graph = [LayerSpec.from_record(rec) for rec in header.get("graph", [])]
    m = ModelContainer(tensors, graph, dict(header.get("metadata", {})))
    m.validate()
    return m


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(m: ModelContainer, path) -> None:
    atomic_write(path, to_bytes(m))


def load_model(path) -> ModelContainer:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
