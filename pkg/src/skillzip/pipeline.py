"""End-to-end compression: deltas in, backbone plus skillpacks out.

Per task and per layer the stages are: channel-wise smoothing of the delta,
truncated SVD with the square-root energy split, rotation selection over
seeded orthogonal candidates, quantization of both factors (optionally with
GPTQ refinement of the output factor), and mid-scale calibration. Before
any of that, the shared component across tasks is merged into the backbone
and subtracted from each delta. Every stage can be toggled off
independently, which is what the ablation harness exercises.

All randomness flows from one master seed through labeled child streams
(`task/layer` labels), so runs are reproducible and independent of task
processing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .calibration import profile
from .deltas import MergePlan, TaskDelta, apply_delta, extract_delta, merge_shared, recenter
from .errors import SkillzipError, ValidationError
from .kernel import compile_layer
from .lowrank import RankPolicy, split_factors, truncated_svd
from .packio import Skillpack, manifest_for
from .prng import Prng
from .quant import QuantConfig
from .smoothing import DEFAULT_ALPHA, DEFAULT_EPSILON, compute_smooth, fold_rotation, select_rotation


@dataclass(frozen=True)
class Toggles:
    merge: bool = True
    smooth: bool = True
    rotate: bool = True
    gptq: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of one compression run; serializes to canonical JSON."""

    merge_plan: MergePlan = MergePlan()
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    rank_mode: str = "auto"  # auto | fixed | energy
    rank_value: float = 0.0
    quant: QuantConfig = QuantConfig()
    n_candidates: int = 10
    seed: int = 0
    toggles: Toggles = Toggles()

    def rank_policy(self, min_dim: int) -> RankPolicy:
        if self.rank_mode == "auto":
            return RankPolicy.default_for(min_dim)
        if self.rank_mode == "fixed":
            return RankPolicy.fixed(int(self.rank_value))
        if self.rank_mode == "energy":
            return RankPolicy.energy(self.rank_value)
        raise ValidationError(f"unknown rank mode {self.rank_mode!r}")

    def to_canonical_json(self) -> str:
        body = {
            "merge": {"method": self.merge_plan.method, "tau": self.merge_plan.tau, "coefficient": self.merge_plan.coefficient},
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "rank": {"mode": self.rank_mode, "value": self.rank_value},
            "quant": {
                "bits_x": self.quant.bits_x,
                "bits_a": self.quant.bits_a,
                "bits_b": self.quant.bits_b,
                "gran_x": self.quant.gran_x,
                "gran_b": self.quant.gran_b,
            },
            "n_candidates": self.n_candidates,
            "seed": self.seed,
            "toggles": {
                "merge": self.toggles.merge,
                "smooth": self.toggles.smooth,
                "rotate": self.toggles.rotate,
                "gptq": self.toggles.gptq,
            },
        }
        return json.dumps(body, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        try:
            body = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        merge = body.get("merge", {})
        rank = body.get("rank", {})
        quant = body.get("quant", {})
        toggles = body.get("toggles", {})
        try:
            return PipelineConfig(
                merge_plan=MergePlan(
                    method=merge.get("method", "mean"),
                    tau=merge.get("tau", 0.0),
                    coefficient=merge.get("coefficient", 1.0),
                ),
                alpha=body.get("alpha", DEFAULT_ALPHA),
                epsilon=body.get("epsilon", DEFAULT_EPSILON),
                rank_mode=rank.get("mode", "auto"),
                rank_value=rank.get("value", 0.0),
                quant=QuantConfig(
                    bits_x=quant.get("bits_x", 8),
                    bits_a=quant.get("bits_a", 8),
                    bits_b=quant.get("bits_b", 8),
                    gran_x=quant.get("gran_x", "per-token"),
                    gran_b=quant.get("gran_b", "per-channel"),
                ),
                n_candidates=body.get("n_candidates", 10),
                seed=body.get("seed", 0),
                toggles=Toggles(
                    merge=toggles.get("merge", True),
                    smooth=toggles.get("smooth", True),
                    rotate=toggles.get("rotate", True),
                    gptq=toggles.get("gptq", True),
                ),
            )
        except TypeError as exc:
            raise ValidationError(f"malformed config: {exc}") from exc


@dataclass
class CompressionResult:
    backbone: dict[str, np.ndarray]
    shared: TaskDelta | None
    packs: dict[str, Skillpack]


def compress_layer_delta(
    name: str,
    delta: np.ndarray,
    x_calib: np.ndarray,
    mean_abs: np.ndarray,
    config: PipelineConfig,
    rng: Prng,
):
    """One layer through smooth -> SVD -> rotate -> quantize; returns the
    compiled layer."""
    c_in, c_out = delta.shape
    if config.toggles.smooth:
        s = compute_smooth(mean_abs, delta, config.alpha, config.epsilon)
    else:
        s = np.ones(c_in, dtype=np.float32)
    w_s = (delta * s[:, None]).astype(np.float32)
    x_s = (x_calib / s[None, :]).astype(np.float32)

    policy = config.rank_policy(min(c_in, c_out))
    svd = truncated_svd(w_s, policy)
    a, b = split_factors(svd)

    rotation_index = 0
    if config.toggles.rotate and a.shape[1] > 1:
        held = x_s[: max(1, x_s.shape[0] // 2)]  # held slice for selection
        choice = select_rotation(a, b, held, config.quant, rng, config.n_candidates)
        rotation_index = choice.candidate_index
        if rotation_index != 0:
            a, b = fold_rotation(a, b, choice.q)

    layer = compile_layer(
        name,
        s,
        a,
        b,
        config.quant,
        x_calib=x_calib,
        use_gptq=config.toggles.gptq,
        rotation_index=rotation_index,
    )
    return layer


def compress(
    base: dict[str, np.ndarray],
    tuned: dict[str, dict[str, np.ndarray]],
    calib: dict[str, np.ndarray],
    config: PipelineConfig,
) -> CompressionResult:
    """Full multi-task compression.

    `tuned` maps task id to its weight archive; `calib` maps layer name to
    calibration activations (T x C_i). Merging requires at least two tasks
    and is skipped (with the toggle honored) for a single task.
    """
    if not tuned:
        raise ValidationError("no tuned weight sets given")
    for layer_name in base:
        if layer_name not in calib:
            raise ValidationError(f"calibration activations missing for layer {layer_name!r}")

    deltas = [extract_delta(base, weights, task_id) for task_id, weights in tuned.items()]

    shared: TaskDelta | None = None
    if config.toggles.merge and len(deltas) >= 2:
        shared = merge_shared(deltas, config.merge_plan)
        _, residuals = recenter(deltas, shared)
        backbone = apply_delta(base, shared)
    else:
        residuals = deltas
        backbone = dict(base)

    prof = profile({name: [x] for name, x in calib.items()})
    master = Prng(config.seed)

    packs: dict[str, Skillpack] = {}
    for residual in residuals:
        layers = {}
        for layer_name in sorted(residual.layer_names()):
            try:
                layers[layer_name] = compress_layer_delta(
                    layer_name,
                    residual.layers[layer_name],
                    calib[layer_name],
                    prof.stats(layer_name).mean_abs,
                    config,
                    master.spawn(f"{residual.task_id}/{layer_name}"),
                )
            except SkillzipError as exc:
                raise type(exc)(f"task {residual.task_id!r} layer {layer_name!r}: {exc}") from exc
        pack = Skillpack(task_id=residual.task_id, layers=layers)
        pack.manifest = manifest_for(pack, provenance=provenance_of(config))
        packs[residual.task_id] = pack
    return CompressionResult(backbone=backbone, shared=shared, packs=packs)


def provenance_of(config: PipelineConfig) -> dict:
    return json.loads(config.to_canonical_json())


def config_with_toggles(config: PipelineConfig, toggles: Toggles) -> PipelineConfig:
    return replace(config, toggles=toggles)
