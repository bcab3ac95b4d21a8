"""Progressive search orchestration.

Runs sample -> evaluate -> penalize -> weight -> update rounds over a
restricted space, one step at a time: sparse backbone first (penalizing the
sparse stream's own FLOPs), then dense backbone + fusion (whole-model FLOPs),
then attention bits.  Each step's most probable choices are frozen before the
next step starts, and the evaluator is notified at every boundary so stateful
evaluators can inherit state.  A one-step mode searches every variable at
once with the same machinery, for like-for-like comparisons.

Runs are deterministic given (space, plans, evaluator, config): round RNG
streams are derived from (seed, step, round), so resuming from a checkpoint
replays the identical trajectory.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import documents
from .cost import architecture_cost
from .evaluators import EvaluationError, Evaluator, EvaluatorError
from .sampler import (
    AdamState,
    ArchParams,
    RoundRecord,
    SearchConfig,
    argmax_architecture,
    compute_weights,
    entropy,
    hinge_penalty,
    init_uniform,
    sample_batch,
    update,
)
from .space import ArchitectureSample, SearchSpaceSpec, SpaceError, step_variable_ids

__all__ = [
    "StepPlan",
    "StepResult",
    "SearchRun",
    "default_progressive_plans",
    "run_step",
    "run_progressive",
    "run_one_step",
    "trajectory_csv",
    "save_checkpoint",
    "load_checkpoint",
    "GFLOP",
]

GFLOP = 10**9

STEP_ORDER = {"sparse": 0, "dense_fusion": 1, "attention": 2, "one_step": 3}
TRAJECTORY_COLUMNS = (
    "round",
    "entropy_nats",
    "best_score",
    "mean_score",
    "mean_penalty",
    "mean_flops",
    "argmax_flops",
)


@dataclass(frozen=True)
class StepPlan:
    """One progressive step: which variables are free, what FLOPs are counted
    against which target, and for how many rounds."""

    step_id: str
    rounds: int
    flops_target: int | None = None
    flops_scope: str = "whole_model"  # whole_model | sparse_stream_only

    def __post_init__(self):
        if self.step_id not in STEP_ORDER:
            raise SpaceError(f"unknown step id {self.step_id!r}")
        if self.flops_scope not in ("whole_model", "sparse_stream_only"):
            raise SpaceError(f"unknown flops scope {self.flops_scope!r}")
        if self.rounds < 0:
            raise SpaceError("rounds must be >= 0")

    @property
    def streams(self) -> tuple[str, ...]:
        return ("sparse",) if self.flops_scope == "sparse_stream_only" else ("sparse", "dense")


@dataclass
class Trajectory:
    step_id: str
    initial_entropy: float
    records: list[RoundRecord]

    @property
    def evaluations(self) -> int:
        return sum(len(r.arch_keys) for r in self.records)


@dataclass
class StepResult:
    plan: StepPlan
    params: ArchParams
    adam: AdamState
    trajectory: Trajectory
    argmax: ArchitectureSample


@dataclass
class SearchRun:
    steps: list[StepResult]
    final_arch: ArchitectureSample
    space: SearchSpaceSpec

    @property
    def evaluations(self) -> int:
        return sum(s.trajectory.evaluations for s in self.steps)


def default_progressive_plans(
    rounds: tuple[int, int, int] = (800, 400, 200),
    targets_gflops: tuple[float, float, float] = (1.4, 2.0, 2.5),
) -> list[StepPlan]:
    """Default schedule: sparse / dense+fusion / attention with rising
    per-view FLOPs targets; round budgets keep the 4:2:1 ratio when scaled."""
    t1, t2, t3 = (int(t * GFLOP) for t in targets_gflops)
    r1, r2, r3 = rounds
    return [
        StepPlan("sparse", r1, t1, "sparse_stream_only"),
        StepPlan("dense_fusion", r2, t2, "whole_model"),
        StepPlan("attention", r3, t3, "whole_model"),
    ]


def _effective_config(config: SearchConfig, plan: StepPlan) -> SearchConfig:
    return replace(config, rounds=plan.rounds, flops_target=plan.flops_target)


def _freeze_outside(space: SearchSpaceSpec, free_ids: Sequence[str]) -> SearchSpaceSpec:
    """Freeze every unfrozen variable outside `free_ids` to its first choice."""
    frozen = space.frozen_map()
    placeholders = {}
    free = set(free_ids)
    for var in space.variables():
        if var.vid not in free and var.vid not in frozen:
            placeholders[var.vid] = var.choices[0]
    return space.restrict(placeholders) if placeholders else space


class _CostCache:
    """Memoizes scoped per-view FLOPs and the document cost summary."""

    def __init__(self, space: SearchSpaceSpec, streams: tuple[str, ...]):
        self.space = space
        self.streams = streams
        self._flops: dict[tuple, tuple[int, int]] = {}

    def flops_params(self, arch: ArchitectureSample) -> tuple[int, int]:
        key = arch.key()
        hit = self._flops.get(key)
        if hit is None:
            report = architecture_cost(self.space, arch, streams=self.streams)
            hit = (report.flops, report.params)
            self._flops[key] = hit
        return hit


def run_step(
    space: SearchSpaceSpec,
    frozen: Mapping[str, object],
    plan: StepPlan,
    evaluator: Evaluator,
    config: SearchConfig,
    *,
    resume: Mapping | None = None,
    stop_after_round: int | None = None,
    checkpoint_sink: Callable[[dict], None] | None = None,
) -> StepResult:
    """Execute one step over restrict(space, frozen).

    `resume` is a checkpoint dict previously produced by this function;
    `stop_after_round` ends the loop early (checkpoint still emitted), for
    interruption tests and budget splits.
    """
    step_space = space.restrict(dict(frozen)) if frozen else space
    step_space = _freeze_outside(step_space, step_variable_ids(space, plan.step_id))
    cfg = _effective_config(config, plan)

    if resume is not None:
        params, adam, start_round, records = _restore_checkpoint_state(resume, plan, cfg)
    else:
        params = init_uniform(step_space)
        adam = AdamState.zeros_like(params)
        start_round = 0
        records = []
    initial_entropy = entropy(init_uniform(step_space))
    uniform = init_uniform(step_space)
    cache = _CostCache(step_space, plan.streams)
    step_ordinal = STEP_ORDER[plan.step_id]

    if not params.var_ids or all(
        len(step_space.effective_choices(step_space.variable(vid))) == 1
        for vid in params.var_ids
    ):
        # Nothing (effectively) free: return the frozen architecture at once.
        arch = argmax_architecture(params, step_space)
        traj = Trajectory(plan.step_id, initial_entropy, records)
        _emit_checkpoint(checkpoint_sink, plan, cfg, params, adam, len(records), records, done=True)
        return StepResult(plan, params, adam, traj, arch)

    end_round = cfg.rounds if stop_after_round is None else min(cfg.rounds, stop_after_round)
    for round_index in range(start_round, end_round):
        sampling = uniform if round_index < cfg.resolved_warmup else params
        batch = sample_batch(
            sampling, step_space, cfg.samples_per_round, _round_seed(cfg.seed, step_ordinal, round_index)
        )
        arch_ids, scores, penalties, flops_list = [], [], [], []
        docs = []
        for i, arch in enumerate(batch):
            flops, params_count = cache.flops_params(arch)
            doc = documents.arch_to_document(
                step_space,
                arch,
                streams=plan.streams,
                cost_summary={"per_view_flops": flops, "params": params_count},
            )
            docs.append(doc)
            arch_ids.append(f"{plan.step_id}.r{round_index:04d}.s{i}")
            flops_list.append(flops)
            penalties.append(hinge_penalty(flops, cfg))
        try:
            scores = evaluator.evaluate_batch(docs, plan.step_id)
        except EvaluatorError as exc:
            raise EvaluationError(
                str(exc), round_index=round_index, arch_id=",".join(arch_ids)
            ) from exc
        weights = compute_weights(scores, penalties, cfg.weight_temperature, cfg.penalty_weight)
        params, adam = update(
            params, step_space, batch, weights, adam,
            lr=cfg.arch_lr, betas=cfg.adam_betas, eps=cfg.adam_eps,
        )
        penalized = [s - cfg.penalty_weight * p for s, p in zip(scores, penalties)]
        argmax_arch = argmax_architecture(params, step_space)
        records.append(
            RoundRecord(
                round_index=round_index,
                arch_keys=tuple(arch_ids),
                scores=tuple(scores),
                penalties=tuple(penalties),
                weights=tuple(weights),
                entropy=entropy(params),
                mean_penalized=sum(penalized) / len(penalized),
                max_penalized=max(penalized),
                mean_flops=sum(flops_list) / len(flops_list),
                argmax_flops=cache.flops_params(argmax_arch)[0],
            )
        )
        _emit_checkpoint(
            checkpoint_sink, plan, cfg, params, adam, round_index + 1, records,
            done=round_index + 1 >= cfg.rounds,
        )

    traj = Trajectory(plan.step_id, initial_entropy, records)
    return StepResult(plan, params, adam, traj, argmax_architecture(params, step_space))


def _round_seed(seed: int, step_ordinal: int, round_index: int) -> int:
    return (seed * 1_000_003 + step_ordinal) * 1_000_003 + round_index


def _progressive_freeze(space, frozen, step_result) -> dict:
    merged = dict(frozen)
    step_vids = set(step_variable_ids(space, step_result.plan.step_id))
    values = step_result.argmax.as_dict()
    for vid in step_vids:
        merged[vid] = values[vid]
    return merged


def run_progressive(
    space: SearchSpaceSpec,
    plans: Sequence[StepPlan],
    evaluator: Evaluator,
    config: SearchConfig,
    *,
    step_hook: Callable[[StepPlan, StepResult], None] | None = None,
) -> SearchRun:
    """Run ordered steps, freezing each step's argmax for the ones after it."""
    expected = [p.step_id for p in plans]
    if not expected:
        raise SpaceError("progressive run needs at least one step plan")
    if sorted(expected, key=STEP_ORDER.get) != expected or "one_step" in expected:
        raise SpaceError(f"progressive plans out of order: {expected}")
    frozen: dict[str, object] = {}
    steps: list[StepResult] = []
    for plan in plans:
        result = run_step(space, frozen, plan, evaluator, config)
        steps.append(result)
        frozen = _progressive_freeze(space, frozen, result)
        boundary_doc = documents.arch_to_document(space, result.argmax)
        evaluator.on_step_boundary(boundary_doc)
        if step_hook is not None:
            step_hook(plan, result)
    final_values = steps[-1].argmax.as_dict() if steps else {}
    final = space.architecture({**{v.vid: final_values[v.vid] for v in space.variables()}})
    violations = space.validate(final)
    if violations:
        raise SpaceError("progressive run produced invalid arch: " + "; ".join(violations))
    return SearchRun(steps=steps, final_arch=final, space=space)


def run_one_step(
    space: SearchSpaceSpec,
    evaluator: Evaluator,
    config: SearchConfig,
    *,
    flops_target: int | None = None,
    step_hook: Callable[[StepPlan, StepResult], None] | None = None,
) -> SearchRun:
    """Search every variable simultaneously with the same machinery."""
    plan = StepPlan(
        "one_step",
        config.rounds,
        config.flops_target if flops_target is None else flops_target,
        "whole_model",
    )
    result = run_step(space, {}, plan, evaluator, config)
    if step_hook is not None:
        step_hook(plan, result)
    return SearchRun(steps=[result], final_arch=result.argmax, space=space)


# -- trajectory and checkpoint serialization -----------------------------------------


def trajectory_csv(traj: Trajectory) -> str:
    """Canonical per-round CSV; floats use repr so files are bit-stable."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for r in traj.records:
        writer.writerow(
            [
                r.round_index,
                repr(r.entropy),
                repr(max(r.scores)),
                repr(sum(r.scores) / len(r.scores)),
                repr(sum(r.penalties) / len(r.penalties)),
                repr(r.mean_flops),
                r.argmax_flops,
            ]
        )
    return buf.getvalue()


def _record_json(r: RoundRecord) -> dict:
    return {
        "round": r.round_index,
        "arch_keys": list(r.arch_keys),
        "scores": list(r.scores),
        "penalties": list(r.penalties),
        "weights": list(r.weights),
        "entropy": r.entropy,
        "mean_penalized": r.mean_penalized,
        "max_penalized": r.max_penalized,
        "mean_flops": r.mean_flops,
        "argmax_flops": r.argmax_flops,
    }


def _record_parse(obj: Mapping) -> RoundRecord:
    return RoundRecord(
        round_index=obj["round"],
        arch_keys=tuple(obj["arch_keys"]),
        scores=tuple(obj["scores"]),
        penalties=tuple(obj["penalties"]),
        weights=tuple(obj["weights"]),
        entropy=obj["entropy"],
        mean_penalized=obj["mean_penalized"],
        max_penalized=obj["max_penalized"],
        mean_flops=obj["mean_flops"],
        argmax_flops=obj["argmax_flops"],
    )


def _checkpoint_dict(plan, cfg, params, adam, next_round, records, done) -> dict:
    return {
        "schema_version": documents.SCHEMA_VERSION,
        "step_id": plan.step_id,
        "flops_target": plan.flops_target,
        "flops_scope": plan.flops_scope,
        "rounds": cfg.rounds,
        "seed": cfg.seed,
        "next_round": next_round,
        "done": done,
        "var_ids": list(params.var_ids),
        "logits": [list(row) for row in params.logits],
        "adam_m": [list(row) for row in adam.m],
        "adam_v": [list(row) for row in adam.v],
        "adam_t": adam.t,
        "records": [_record_json(r) for r in records],
    }


def _emit_checkpoint(sink, plan, cfg, params, adam, next_round, records, done):
    if sink is not None:
        sink(_checkpoint_dict(plan, cfg, params, adam, next_round, records, done))


def save_checkpoint(path: Path, checkpoint: dict) -> None:
    path.write_text(documents.canonical_json(checkpoint) + "\n")


def load_checkpoint(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise documents.DocumentError(f"unreadable checkpoint {path}: {exc}") from exc


def _restore_checkpoint_state(ck: Mapping, plan: StepPlan, cfg: SearchConfig):
    if ck.get("step_id") != plan.step_id:
        raise documents.DocumentError(
            f"checkpoint is for step {ck.get('step_id')!r}, expected {plan.step_id!r}"
        )
    if ck.get("seed") != cfg.seed:
        raise documents.DocumentError(
            f"checkpoint seed {ck.get('seed')} does not match config seed {cfg.seed}"
        )
    params = ArchParams(
        var_ids=tuple(ck["var_ids"]),
        logits=tuple(tuple(row) for row in ck["logits"]),
    )
    adam = AdamState(
        m=tuple(tuple(row) for row in ck["adam_m"]),
        v=tuple(tuple(row) for row in ck["adam_v"]),
        t=ck["adam_t"],
    )
    records = [_record_parse(r) for r in ck["records"]]
    return params, adam, ck["next_round"], records
