"""Software-emulated FP8 / BF16 numerics and min/max post-training quantization."""

__version__ = "0.1.0"

from .fp8_core import (
    E4M3,
    E5M2,
    Fp8Code,
    Fp8Format,
    decode,
    encode_nearest,
    enumerate_levels,
    round_to_bf16,
    round_to_fp8,
)
from .quant import (
    CalibRange,
    QTensor,
    QuantParams,
    dequantize,
    fake_quant,
    observe,
    per_channel_params,
    per_tensor_params,
    quantize,
    quantize_fp8,
    quantize_int8,
    scale_from_range,
)
