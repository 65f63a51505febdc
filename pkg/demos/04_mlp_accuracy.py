"""
Accuracy after quantization on a toy classifier
===============================================

Train a two-layer MLP on two interleaved moons, then quantize it after the
fact and see how much test accuracy each 8-bit format gives up.
"""

from fp8ptq.runtime import QUANT_SIM, make_dataset, ptq, run, train_toy_mlp
from fp8ptq.runtime.toys import accuracy, split_dataset

ds = make_dataset("two_moons", 1000, seed=0)
model = train_toy_mlp(ds, epochs=1000, lr=0.5, seed=0)
print("train/test accuracy:", model.metadata["train_accuracy"], model.metadata["test_accuracy"])

(xtr, _), (xte, yte) = split_dataset(ds)
print(f"fp32 : {accuracy(run(model, xte), yte):.3f}")
for target in ("int8", "e4m3", "e5m2"):
    for gran in ("per_channel", "per_tensor"):
        q = ptq(model, [xtr], target, gran)
        print(f"{target:>5} {gran:<11}: {accuracy(run(q, xte, QUANT_SIM), yte):.3f}")
