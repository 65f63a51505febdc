"""
Post-training quantization of a small encoder block
===================================================

Build an attention + FFN block with a few large weights planted in it,
calibrate on random inputs, and compare FP8 and INT8 outputs against FP32.
Only the GEMMs are quantized; softmax, GELU and LayerNorm run in BF16.
"""

from fp8ptq.runtime import QUANT_SIM, OutlierSpec, build_toy_encoder, encoder_input, ptq, run
from fp8ptq.tensor import metrics

calib = [encoder_input(s) for s in (100, 101, 102, 103)]
x = encoder_input(999)


def report(model, label):
    ref = run(model, x)
    for target in ("int8", "e4m3", "e5m2"):
        q = ptq(model, calib, target)
        m = metrics(ref, run(q, x, QUANT_SIM))
        print(f"{label:>12} {target:>5}: cosine {m['cosine']:.5f}  sqnr {m['sqnr_db']:6.2f} dB")


report(build_toy_encoder(0), "outliers")

# Same block with nothing planted. INT8 catches up (and usually wins).
report(build_toy_encoder(0, outliers=OutlierSpec(fraction=0.0)), "no outliers")

# Keep the two attention matmuls in FP32 and only quantize the projections.
m = build_toy_encoder(0)
ref = run(m, x)
q = ptq(m, calib, "e4m3", quant_attn_internal=False)
print("projections only, e4m3: cosine", round(metrics(ref, run(q, x, QUANT_SIM))["cosine"], 5))

# The quantized container keeps FP32 weights; only scales were attached.
print("weights untouched:", all((q.tensors[k] == m.tensors[k]).all() for k in m.tensors))
print("first layer quant sites:", sorted(q.graph[0].quant))
