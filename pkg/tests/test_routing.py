import json

import numpy as np
import pytest

from skillzip import (
    Batch,
    ForwardRequest,
    QuantConfig,
    RoutingError,
    ShapeError,
    Skillpack,
    SkillRegistry,
    ValidationError,
    compile_layer,
    dispatch_batch,
    dispatch_sequential,
    forward_full,
    write_archive,
)
from skillzip.prng import Prng
from skillzip.routing import load_request_stream, write_outputs
from skillzip.tensors import fro_norm


C_IN, C_OUT = 24, 20


def _registry(gran_x="per-token", tasks=("math", "code", "chat")):
    rng = Prng(300)
    backbone = {"layer0": rng.uniform_matrix(C_IN, C_OUT, -0.5, 0.5)}
    packs = {}
    for task in tasks:
        trng = rng.spawn(task)
        a = trng.uniform_matrix(C_IN, 4, -0.5, 0.5)
        b = trng.uniform_matrix(4, C_OUT, -0.5, 0.5)
        x_cal = trng.uniform_matrix(16, C_IN, -2.0, 2.0)
        layer = compile_layer(
            "layer0", np.ones(C_IN, dtype=np.float32), a, b, QuantConfig(gran_x=gran_x), x_calib=x_cal
        )
        packs[task] = Skillpack(task, {"layer0": layer})
    return SkillRegistry(backbone=backbone, target_layer="layer0", packs=packs)


def _request(rng, task, tokens=None):
    t = tokens if tokens is not None else rng.below(6) + 1
    return ForwardRequest(task, rng.uniform_matrix(t, C_IN, -3.0, 3.0))


def test_route_known_label():
    reg = _registry()
    req = ForwardRequest("math", np.zeros((1, C_IN), dtype=np.float32))
    assert reg.route(req) == "math"


def test_route_unknown_label():
    reg = _registry()
    with pytest.raises(RoutingError, match="unknown"):
        reg.route(ForwardRequest("unknown", np.zeros((1, C_IN), dtype=np.float32)))


def test_same_label_same_pack_instance():
    reg = _registry()
    assert reg.serving_layer("math") is reg.serving_layer("math")


def test_batch_of_one_equals_direct_forward():
    reg = _registry()
    rng = Prng(301)
    req = _request(rng, "math", tokens=3)
    (out,) = dispatch_batch(Batch([req]), reg)
    direct = forward_full(reg.backbone["layer0"], reg.serving_layer("math"), req.x)
    assert np.array_equal(out, direct)


def test_mixed_batch_original_order_and_grouping():
    reg = _registry()
    rng = Prng(302)
    batch = Batch([_request(rng, t) for t in ("math", "code", "math", "chat", "code")])
    outs = dispatch_batch(batch, reg)
    seq = dispatch_sequential(batch, reg)
    assert len(outs) == 5
    for got, want in zip(outs, seq):
        assert got.shape == want.shape
        assert fro_norm(got - want) <= 1e-6 * max(fro_norm(want), 1e-9)


def test_batched_equals_sequential_bitwise_per_token():
    reg = _registry(gran_x="per-token")
    for seed in range(5):
        rng = Prng(400 + seed)
        labels = [("math", "code", "chat")[rng.below(3)] for _ in range(rng.below(10) + 2)]
        batch = Batch([_request(rng, t) for t in labels])
        outs = dispatch_batch(batch, reg)
        seq = dispatch_sequential(batch, reg)
        for got, want in zip(outs, seq):
            # The integer skillpack path is bitwise identical; the shared
            # float backbone contribution may differ at BLAS shape level.
            assert fro_norm(got - want) <= 1e-6 * max(fro_norm(want), 1e-9)


def test_integer_path_bitwise_per_request_quantization():
    """With per-tensor activation quantization, each request must be its own
    quantization group inside a batched call."""
    reg = _registry(gran_x="per-tensor")
    rng = Prng(500)
    # Wildly different request magnitudes would change a shared group scale.
    reqs = [
        ForwardRequest("math", rng.uniform_matrix(2, C_IN, -100.0, 100.0)),
        ForwardRequest("math", rng.uniform_matrix(3, C_IN, -0.01, 0.01)),
    ]
    batch = Batch(reqs)
    outs = dispatch_batch(batch, reg)
    seq = dispatch_sequential(batch, reg)
    layer = reg.serving_layer("math")
    for got, want, req in zip(outs, seq, reqs):
        base = forward_full(reg.backbone["layer0"], None, req.x)
        got_delta = got - base
        want_delta = want - base
        assert np.array_equal(got_delta, want_delta)


def test_unknown_label_aborts_whole_batch():
    reg = _registry()
    rng = Prng(303)
    batch = Batch([_request(rng, "math"), _request(rng, "nope"), _request(rng, "code")])
    with pytest.raises(RoutingError):
        dispatch_batch(batch, reg)


def test_identical_requests_identical_outputs():
    reg = _registry()
    rng = Prng(304)
    req = _request(rng, "chat", tokens=4)
    batch = Batch([ForwardRequest(req.task_id, req.x.copy()) for _ in range(6)])
    outs = dispatch_batch(batch, reg)
    for out in outs[1:]:
        assert np.array_equal(out, outs[0])


def test_permutation_equivariance():
    reg = _registry()
    rng = Prng(305)
    reqs = [_request(rng, t) for t in ("math", "code", "chat", "math")]
    perm = [2, 0, 3, 1]
    outs = dispatch_batch(Batch(reqs), reg)
    perm_outs = dispatch_batch(Batch([reqs[i] for i in perm]), reg)
    for j, i in enumerate(perm):
        assert np.array_equal(perm_outs[j], outs[i])


def test_registry_rejects_shape_mismatch():
    reg = _registry()
    rng = Prng(306)
    a = rng.uniform_matrix(C_IN + 1, 2, -1, 1)
    b = rng.uniform_matrix(2, C_OUT, -1, 1)
    layer = compile_layer("layer0", np.ones(C_IN + 1, dtype=np.float32), a, b, QuantConfig(), mid_scale=1.0)
    with pytest.raises(ShapeError):
        reg.register(Skillpack("bad", {"layer0": layer}))


# ---------------------------------------------------------------------------
# Request stream interface


def test_stream_inline_and_archive_refs(tmp_path):
    rng = Prng(307)
    x_entry = rng.uniform_matrix(2, C_IN, -1.0, 1.0)
    write_archive(tmp_path / "acts.ftz", [("req0", x_entry)])
    stream = tmp_path / "requests.jsonl"
    inline_row = [float(i) for i in range(C_IN)]
    lines = [
        json.dumps({"task": "math", "x": [inline_row, inline_row]}),
        json.dumps({"task": "code", "x": inline_row}),
        json.dumps({"task": "chat", "x": "acts.ftz::req0"}),
    ]
    stream.write_text("\n".join(lines) + "\n")
    batch = load_request_stream(stream)
    assert [r.task_id for r in batch.requests] == ["math", "code", "chat"]
    assert batch.requests[0].x.shape == (2, C_IN)
    assert batch.requests[1].x.shape == (1, C_IN)
    assert np.array_equal(batch.requests[2].x, x_entry)


def test_stream_parse_error_reports_line(tmp_path):
    stream = tmp_path / "bad.jsonl"
    stream.write_text('{"task": "math", "x": [[1.0]]}\nnot json\n')
    with pytest.raises(ValidationError, match="bad.jsonl:2"):
        load_request_stream(stream)


def test_stream_outputs_archive(tmp_path):
    reg = _registry()
    rng = Prng(308)
    batch = Batch([_request(rng, "math"), _request(rng, "code")])
    outs = dispatch_batch(batch, reg)
    out_path = tmp_path / "outputs.ftz"
    write_outputs(outs, out_path)
    from skillzip import read_archive

    entries = dict(read_archive(out_path))
    assert set(entries) == {"0", "1"}
    assert np.array_equal(entries["0"], outs[0])
