"""Symmetric k-bit quantization: granularities, error bounds, packing.

Walks through the core quantizer: per-tensor / per-token / per-channel
scales, the round-trip error bound, negation symmetry, int4 nibble packing,
and the 1-bit sign+scale baseline.
"""

import numpy as np

from skillzip import (
    bitdelta_compress,
    bitdelta_dequantize,
    dequantize,
    pack_int4,
    quantize,
    unpack_int4,
)
from skillzip.prng import Prng

rng = Prng(2024)

# A matrix with one hot column, the classic outlier shape.
m = rng.uniform_matrix(6, 8, -4.0, 4.0)
m[:, 3] *= 50.0

print("=== per-tensor vs per-channel int8 ===")
for gran in ("per-tensor", "per-channel"):
    q = quantize(m, 8, gran)
    err = np.abs(dequantize(q) - m).max()
    print(f"{gran:>12}: max |roundtrip - x| = {err:.4f}   scales = {np.atleast_1d(q.scale.scales)[:4]}")
print("The hot column inflates the single per-tensor scale; per-channel isolates it.")

print("\n=== error bound: |dequant(quant(x)) - x| <= scale/2 ===")
q = quantize(m, 8, "per-token")
rows, cols = q.scale.row_col_vectors(*m.shape)
bound = rows[:, None] * cols[None, :] / 2
print("bound respected everywhere:", bool((np.abs(dequantize(q) - m) <= bound + 1e-7).all()))

print("\n=== negation symmetry ===")
q_pos = quantize(m, 8, "per-tensor")
q_neg = quantize(-m, 8, "per-tensor")
print("quant(-m).codes == -quant(m).codes:", np.array_equal(q_neg.codes, -q_pos.codes))

print("\n=== int4 packing (two codes per byte, low nibble first) ===")
codes = np.array([[7, -8, 3]], dtype=np.int8)
packed = pack_int4(codes)
print(f"codes {codes.tolist()} -> bytes {packed.hex()} -> {unpack_int4(packed, 1, 3).tolist()}")

print("\n=== 1-bit sign+scale baseline ===")
delta = np.array([[1.0, -2.0, 3.0]], dtype=np.float32)
signs, scale = bitdelta_compress(delta)
print(f"delta {delta.tolist()} -> scale {scale}, approx {bitdelta_dequantize(signs, scale).tolist()}")
