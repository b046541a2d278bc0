"""Label routing, batched dispatch, and the compute accounting.

Builds a registry of three skillpacks over one backbone layer, dispatches a
mixed batch, verifies batched outputs match per-request execution, and
compares dense-path vs low-rank-path multiply-add counts and wall clock.
"""

import numpy as np

from skillzip import (
    Batch,
    ForwardRequest,
    QuantConfig,
    Skillpack,
    SkillRegistry,
    bench,
    compile_layer,
    dispatch_batch,
    dispatch_sequential,
    forward_quantized,
)
from skillzip.prng import Prng
from skillzip.tensors import fro_norm, matmul

C_IN, C_OUT, RANK = 256, 256, 32
rng = Prng(5)
backbone = {"layer0": rng.gauss_matrix(C_IN, C_OUT) * np.float32(0.05)}

packs = {}
for task in ("math", "code", "chat"):
    trng = rng.spawn(task)
    a = trng.gauss_matrix(C_IN, RANK) * np.float32(0.1)
    b = trng.gauss_matrix(RANK, C_OUT) * np.float32(0.1)
    x_cal = trng.uniform_matrix(16, C_IN, -2.0, 2.0)
    layer = compile_layer("layer0", np.ones(C_IN, dtype=np.float32), a, b, QuantConfig(), x_calib=x_cal)
    packs[task] = Skillpack(task, {"layer0": layer})

registry = SkillRegistry(backbone=backbone, target_layer="layer0", packs=packs)

print("=== mixed batch, grouped by task, scattered back in order ===")
labels = ["math", "code", "math", "chat", "code", "math"]
batch = Batch([ForwardRequest(t, rng.uniform_matrix(3, C_IN, -2.0, 2.0)) for t in labels])
batched = dispatch_batch(batch, registry)
sequential = dispatch_sequential(batch, registry)
worst = max(fro_norm(g - s) / max(fro_norm(s), 1e-12) for g, s in zip(batched, sequential))
print(f"{len(labels)} requests over {len(set(labels))} tasks; batched vs sequential: {worst:.2e} relative")

print("\n=== compute accounting: dense delta vs low-rank integer path ===")
print(f"dense multiply-adds/token:   {bench.flops_dense(1, C_IN, C_OUT):,}")
print(f"lowrank multiply-adds/token: {bench.flops_lowrank(1, C_IN, C_OUT, RANK):,}")
print(f"closed-form ratio: {bench.flop_ratio(C_IN, C_OUT, RANK):.2f}x")

# Wall clock favors the low-rank path once the layer is wide enough for the
# matmuls to dominate the per-call quantization overhead.
big_c, big_r, tokens = 1024, 128, 64
dense_delta = rng.gauss_matrix(big_c, big_c)
big_a = rng.gauss_matrix(big_c, big_r) * np.float32(0.1)
big_b = rng.gauss_matrix(big_r, big_c) * np.float32(0.1)
big_layer = compile_layer("big", np.ones(big_c, dtype=np.float32), big_a, big_b, QuantConfig(), mid_scale=1.0)
x = rng.uniform_matrix(tokens, big_c, -2.0, 2.0)
dense_s = bench.time_callable(lambda: matmul(x, dense_delta), repeats=5)
lowrank_s = bench.time_callable(lambda: forward_quantized(big_layer, x), repeats=5)
print(f"wall clock at {big_c}x{big_c}, R={big_r}, {tokens} tokens: "
      f"dense {1e3 * dense_s:.2f} ms vs low-rank {1e3 * lowrank_s:.2f} ms")
