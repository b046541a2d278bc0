"""Label-routed dispatch of requests to skillpacks.

Routing is deterministic: every request carries an explicit task label and
the label is the skillpack key. Batches are grouped by label (preserving
order within a group), each group runs through the shared backbone plus its
skillpack in one call, and the outputs are scattered back to the original
request positions. Grouped execution quantizes activations request by
request, so a batched run reproduces sequential per-request runs code for
code on the integer path.

An unknown label aborts the whole batch before any compute, keeping the
batched == sequential equivalence unconditional.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import archive
from .errors import RoutingError, ShapeError, ValidationError
from .kernel import CompiledSkillLayer, ForwardDiag, forward_full
from .packio import Skillpack


@dataclass
class ForwardRequest:
    task_id: str
    x: np.ndarray  # (T, C_i) float32


@dataclass
class Batch:
    requests: list[ForwardRequest] = field(default_factory=list)


@dataclass
class SkillRegistry:
    """Loaded skillpacks plus the backbone they attach to.

    `target_layer` names the backbone entry this registry serves; every
    registered pack must contain that layer with matching shapes.
    """

    backbone: dict[str, np.ndarray]
    target_layer: str
    packs: dict[str, Skillpack] = field(default_factory=dict)

    def __post_init__(self):
        if self.target_layer not in self.backbone:
            raise ValidationError(f"backbone has no layer {self.target_layer!r}")
        for task_id, pack in self.packs.items():
            self._check_pack(task_id, pack)

    def _check_pack(self, task_id: str, pack: Skillpack) -> None:
        for name, layer in pack.layers.items():
            if name not in self.backbone:
                raise ShapeError(f"pack {task_id!r} references unknown layer {name!r}")
            w = self.backbone[name]
            if (layer.c_in, layer.c_out) != w.shape:
                raise ShapeError(
                    f"pack {task_id!r} layer {name!r} is {layer.c_in}x{layer.c_out}, backbone is {w.shape}"
                )
        if self.target_layer not in pack.layers:
            raise ShapeError(f"pack {task_id!r} lacks the serving layer {self.target_layer!r}")

    def register(self, pack: Skillpack) -> None:
        self._check_pack(pack.task_id, pack)
        self.packs[pack.task_id] = pack

    def route(self, request: ForwardRequest) -> str:
        if request.task_id not in self.packs:
            raise RoutingError(request.task_id)
        return request.task_id

    def serving_layer(self, task_id: str) -> CompiledSkillLayer:
        return self.packs[task_id].layers[self.target_layer]


def dispatch_batch(batch: Batch, registry: SkillRegistry, diag: ForwardDiag | None = None) -> list[np.ndarray]:
    """Group by task, execute per group, scatter to original order.

    Raises before any compute when any label is unknown, so a failed batch
    produces no partial results.
    """
    for req in batch.requests:
        registry.route(req)

    groups: dict[str, list[int]] = {}
    for idx, req in enumerate(batch.requests):
        groups.setdefault(req.task_id, []).append(idx)

    w = registry.backbone[registry.target_layer]
    outputs: list[np.ndarray | None] = [None] * len(batch.requests)
    for task_id, indices in groups.items():
        layer = registry.serving_layer(task_id)
        xs = [batch.requests[i].x for i in indices]
        for x in xs:
            if x.ndim != 2 or x.shape[1] != w.shape[0]:
                raise ShapeError(f"request activations {x.shape} do not match backbone {w.shape}")
        stacked = np.vstack(xs).astype(np.float32)
        blocks = [x.shape[0] for x in xs]
        group_out = forward_full(w, layer, stacked, diag=diag, row_blocks=blocks)
        start = 0
        for i, size in zip(indices, blocks):
            outputs[i] = group_out[start : start + size]
            start += size
    assert all(out is not None for out in outputs)
    return outputs  # type: ignore[return-value]


def dispatch_sequential(batch: Batch, registry: SkillRegistry) -> list[np.ndarray]:
    """Per-request execution in request order; the dispatch oracle."""
    for req in batch.requests:
        registry.route(req)
    w = registry.backbone[registry.target_layer]
    return [
        forward_full(w, registry.serving_layer(req.task_id), req.x.astype(np.float32))
        for req in batch.requests
    ]


# ---------------------------------------------------------------------------
# Offline request stream: JSON lines in, FTZ archive keyed by index out.


def load_request_stream(path: str | os.PathLike, base_dir: str | os.PathLike | None = None) -> Batch:
    """Parse a JSON-lines request stream.

    Each line is {"task": <label>, "x": <payload>} where the payload is
    either inline row data (a list of rows or one flat row) or a string
    "<archive>::<entry>" naming an FTZ entry. Relative archive paths
    resolve against `base_dir` (default: the stream's directory).
    """
    spath = os.fspath(path)
    root = os.fspath(base_dir) if base_dir is not None else os.path.dirname(os.path.abspath(spath))
    requests: list[ForwardRequest] = []
    entry_cache: dict[str, dict[str, np.ndarray]] = {}
    with open(spath, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                body = json.loads(line)
                task = body["task"]
                payload = body["x"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{spath}:{lineno}: malformed request line ({exc})") from exc
            if isinstance(payload, str):
                if "::" not in payload:
                    raise ValidationError(f"{spath}:{lineno}: tensor reference must look like 'file.ftz::entry'")
                archive_path, entry = payload.split("::", 1)
                if not os.path.isabs(archive_path):
                    archive_path = os.path.join(root, archive_path)
                if archive_path not in entry_cache:
                    entry_cache[archive_path] = dict(archive.read_archive(archive_path))
                if entry not in entry_cache[archive_path]:
                    raise ValidationError(f"{spath}:{lineno}: no entry {entry!r} in {archive_path}")
                x = entry_cache[archive_path][entry]
            else:
                try:
                    arr = np.asarray(payload, dtype=np.float32)
                except (ValueError, TypeError) as exc:
                    raise ValidationError(f"{spath}:{lineno}: bad inline row data ({exc})") from exc
                if arr.ndim == 1:
                    arr = arr.reshape(1, -1)
                if arr.ndim != 2 or arr.size == 0:
                    raise ValidationError(f"{spath}:{lineno}: inline data must be one row or a list of rows")
                x = arr
            requests.append(ForwardRequest(task_id=str(task), x=x))
    return Batch(requests=requests)


def write_outputs(outputs: list[np.ndarray], path: str | os.PathLike) -> None:
    """Store dispatch outputs as an FTZ archive keyed by request index."""
    archive.write_archive(path, [(str(i), out.astype(np.float32)) for i, out in enumerate(outputs)])
