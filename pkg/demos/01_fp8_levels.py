"""
The two 8-bit float formats, level by level
===========================================

Decode every code, look at where the representable values sit, and watch
round-to-nearest-even pick a neighbour.
"""

import numpy as np

from fp8ptq import E4M3, E5M2, decode, encode_nearest, enumerate_levels, round_to_bf16

# Both formats spend one bit on sign; E4M3 keeps more mantissa, E5M2 more range.
for fmt in (E4M3, E5M2):
    lv = enumerate_levels(fmt)
    print(f"{fmt.name}: {len(lv)} distinct finite values, max {fmt.max_finite}, "
          f"smallest subnormal {fmt.min_subnormal}")

# Spacing doubles every binade. Near zero the grid is fine, near the top it is coarse.
lv = enumerate_levels(E4M3)
pos = lv[lv > 0]
for lo, hi in [(0, 2.0**-6), (1, 2), (256, 448)]:
    band = pos[(pos >= lo) & (pos <= hi)]
    print(f"[{lo}, {hi}]: {len(band)} levels, step {np.diff(band).min()}")

# 17 sits exactly halfway between 16 and 18; the tie goes to the even mantissa.
for v in (17.0, 19.0, 1000.0, -0.0):
    code = encode_nearest(v, E4M3)
    print(f"{v!r:>7} -> 0x{code:02X} -> {decode(code, E4M3)!r}")

# E5M2 keeps IEEE infinities; E4M3 has none and saturates at 448.
print("inf in E5M2:", hex(encode_nearest(np.inf, E5M2)), " inf in E4M3:", hex(encode_nearest(np.inf, E4M3)))

# BF16 is FP32 with the low 16 bits rounded away.
x = np.float32(1.0 + 3 * 2**-8)
print("bf16(1 + 3/256) =", round_to_bf16(x))
