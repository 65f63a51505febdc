"""
Why outliers hurt INT8 more than FP8
====================================

A Gaussian tensor with a handful of +-50 entries. Min/max scaling stretches
the grid to cover the outliers; INT8's uniform grid then leaves very few
steps for the bulk, while FP8's grid stays dense near zero.
"""

import numpy as np

from fp8ptq import fake_quant, per_tensor_params
from fp8ptq.runtime import make_dataset

x = make_dataset("gauss_outliers", 4096, seed=0, outlier_frac=0.001, outlier_mag=50.0).tensors["x"]
print("entries at |50|:", int(np.sum(np.abs(x) == 50)), " absmax:", np.abs(x).max())

bulk = np.abs(x) < 4
for target in ("int8", "e4m3", "e5m2"):
    p = per_tensor_params(x, target)
    y = fake_quant(x, p)
    err = (y.astype(np.float64) - x) ** 2
    distinct = len(np.unique(y[bulk]))
    print(f"{target:>5}: scale {float(p.scale):.5f}  mse {err.mean():.3e}  "
          f"distinct values used by the bulk {distinct}")

# Without outliers the picture flips: INT8's uniform grid is the better fit.
clean = make_dataset("gauss_outliers", 4096, seed=0, outlier_frac=0.0).tensors["x"]
for target in ("int8", "e4m3"):
    y = fake_quant(clean, per_tensor_params(clean, target))
    print(f"no outliers, {target:>5}: mse {np.mean((y.astype(np.float64) - clean) ** 2):.3e}")
