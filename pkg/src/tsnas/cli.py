"""Command-line driver.

Subcommands: space, cost, manual, search, export.  All outputs are canonical
JSON (or CSV) so runs diff cleanly; every command is deterministic given its
arguments and seed.

Exit codes: 0 success, 2 usage error, 3 validation/document error,
4 evaluator or worker error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import documents
from .cost import CostError, architecture_cost, manual_two_stream
from .evaluators import (
    EvaluatorError,
    ProtocolEvaluator,
    SyntheticEvaluator,
    TableEvaluator,
    separable_objective,
)
from .progressive import (
    GFLOP,
    SearchRun,
    StepPlan,
    default_progressive_plans,
    load_checkpoint,
    run_step,
    save_checkpoint,
    trajectory_csv,
)
from .sampler import ArchParams, SearchConfig, argmax_architecture
from .space import SearchSpaceSpec, SpaceError, build_default_space, step_variable_ids

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_EVALUATOR = 4

WORKER_ENV = "TSNAS_WORKER"


def _load_space(args) -> SearchSpaceSpec:
    if getattr(args, "space", None):
        try:
            payload = json.loads(Path(args.space).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise documents.DocumentError(f"unreadable space file {args.space}: {exc}") from exc
        return documents.space_from_json(payload)
    return build_default_space(
        sparse_frames=args.sparse_frames,
        dense_frames=args.dense_frames,
        input_spatial=args.spatial,
        fusion_placement=args.fusion_placement,
    )


def _write(args, name: str, text: str) -> Path | None:
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        path.write_text(text)
        return path
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return None


def _emit_json(args, name: str, obj) -> Path | None:
    return _write(args, name, documents.canonical_json(obj) + "\n")


def _add_space_args(p: argparse.ArgumentParser, default_spatial: int = 224):
    p.add_argument("--space", help="space JSON file (default: built-in space)")
    p.add_argument("--sparse-frames", type=int, default=4)
    p.add_argument("--dense-frames", type=int, default=32)
    p.add_argument("--spatial", type=int, default=default_spatial)
    p.add_argument(
        "--fusion-placement",
        choices=("group_ends", "stage_ends"),
        default="group_ends",
    )


# -- space ------------------------------------------------------------------


def _cmd_space(args) -> int:
    space = _load_space(args)
    if args.space_cmd == "show":
        _emit_json(args, "space.json", documents.space_to_json(space))
        return EXIT_OK
    # count
    if args.frozen == "all":
        frozen = {v.vid: space.effective_choices(v)[0] for v in space.variables()}
        space = space.restrict(frozen)
    if args.step:
        keep = set(step_variable_ids(space, args.step))
        frozen = {
            v.vid: space.effective_choices(v)[0]
            for v in space.variables()
            if v.vid not in keep and v.vid not in space.frozen_map()
        }
        space = space.restrict(frozen)
    report = {
        "cardinality": str(space.cardinality()),
        "free_variables": len([v for v in space.free_variables()]),
        "fingerprint": documents.space_fingerprint(space),
    }
    _emit_json(args, "cardinality.json", report)
    return EXIT_OK


# -- cost ---------------------------------------------------------------------


def _cost_csv(report) -> str:
    lines = ["block_id,stage,stream,flops,params,out_C,out_T,out_H,out_W"]
    for b in report.breakdown:
        lines.append(
            f"{b.block_id},{b.stage},{b.stream},{b.flops},{b.params},"
            f"{b.out.c},{b.out.t},{b.out.h},{b.out.w}"
        )
    return "\n".join(lines) + "\n"


def _report_json(report) -> dict:
    return {
        "flops_per_view": report.flops,
        "params": report.params,
        "views": report.views,
        "total_flops": report.total_flops,
        "sparse_fraction": float(report.sparse_fraction()),
        "flops_convention": "multiply-accumulates counted once",
    }


def _cmd_cost(args) -> int:
    space = _load_space(args)
    try:
        doc = json.loads(Path(args.arch).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise documents.DocumentError(f"unreadable architecture file {args.arch}: {exc}") from exc
    arch = documents.arch_from_document(space, doc)
    streams = tuple(doc.get("streams", ("sparse", "dense")))
    report = architecture_cost(
        space, arch, input_spatial=args.spatial, views=args.views, streams=streams
    )
    if args.format == "csv":
        _write(args, "cost.csv", _cost_csv(report))
    else:
        _emit_json(args, "cost.json", _report_json(report))
    return EXIT_OK


# -- manual ---------------------------------------------------------------------


def _ratio_arg(raw: str) -> float:
    """Sparse-stream share, as a percent (70) or a fraction (0.7)."""
    try:
        value = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {raw!r}") from None
    if value <= 0 or value >= 100:
        raise argparse.ArgumentTypeError(f"ratio must be in (0, 100), got {raw}")
    return value / 100 if value >= 1 else value


def _positive_float(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {raw!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {raw}")
    return value


def _cmd_manual(args) -> int:
    space = _load_space(args)
    ratio = args.ratio
    target = int(args.target_gflops * GFLOP)
    arch = manual_two_stream(space, target, ratio, input_spatial=args.spatial)
    report = architecture_cost(space, arch, input_spatial=args.spatial, views=args.views)
    doc = documents.arch_to_document(
        space,
        arch,
        cost_summary={
            "per_view_flops": report.flops,
            "params": report.params,
            "views": report.views,
            "total_flops": report.total_flops,
            "sparse_fraction_num": report.sparse_fraction().numerator,
            "sparse_fraction_den": report.sparse_fraction().denominator,
        },
    )
    _emit_json(args, "manual_arch.json", doc)
    return EXIT_OK


# -- search -----------------------------------------------------------------------


def _make_evaluator(args, space):
    if args.evaluator == "synthetic":
        return SyntheticEvaluator(space, separable_objective(space, args.seed))
    if args.evaluator == "table":
        if not args.table:
            raise documents.DocumentError("--table FILE is required with --evaluator table")
        payload = json.loads(Path(args.table).read_text())
        return TableEvaluator(payload)
    if args.evaluator == "worker":
        cmd = args.worker_cmd or os.environ.get(WORKER_ENV)
        if not cmd:
            raise documents.DocumentError(
                f"--worker-cmd or ${WORKER_ENV} is required with --evaluator worker"
            )
        return ProtocolEvaluator(cmd, timeout=args.worker_timeout)
    raise documents.DocumentError(f"unknown evaluator {args.evaluator!r}")


def _search_run_to_disk(args, space, run: SearchRun, config) -> None:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps_manifest = []
    for step in run.steps:
        step_dir = out_dir / f"step_{step.plan.step_id}"
        step_dir.mkdir(exist_ok=True)
        (step_dir / "trajectory.csv").write_text(trajectory_csv(step.trajectory))
        arch_doc = documents.arch_to_document(space, step.argmax)
        (step_dir / "argmax_arch.json").write_text(documents.canonical_json(arch_doc) + "\n")
        steps_manifest.append(
            {
                "step_id": step.plan.step_id,
                "rounds": step.plan.rounds,
                "flops_target": step.plan.flops_target,
                "flops_scope": step.plan.flops_scope,
                "evaluations": step.trajectory.evaluations,
                "initial_entropy": step.trajectory.initial_entropy,
                "final_entropy": step.trajectory.records[-1].entropy
                if step.trajectory.records
                else step.trajectory.initial_entropy,
                "trajectory": f"step_{step.plan.step_id}/trajectory.csv",
                "argmax_arch": f"step_{step.plan.step_id}/argmax_arch.json",
            }
        )
    report = architecture_cost(space, run.final_arch, views=args.views)
    final_doc = documents.arch_to_document(
        space,
        run.final_arch,
        cost_summary={
            "per_view_flops": report.flops,
            "params": report.params,
            "views": report.views,
            "total_flops": report.total_flops,
        },
    )
    (out_dir / "final_arch.json").write_text(documents.canonical_json(final_doc) + "\n")
    (out_dir / "space.json").write_text(
        documents.canonical_json(documents.space_to_json(space)) + "\n"
    )
    manifest = {
        "schema_version": documents.SCHEMA_VERSION,
        "mode": args.mode,
        "seed": config.seed,
        "samples_per_round": config.samples_per_round,
        "space_fingerprint": documents.space_fingerprint(space),
        "steps": steps_manifest,
        "final_arch": "final_arch.json",
    }
    (out_dir / "run_manifest.json").write_text(documents.canonical_json(manifest) + "\n")


def _cmd_search(args) -> int:
    space = _load_space(args)
    config = SearchConfig(
        rounds=args.rounds,
        samples_per_round=args.samples,
        warmup_rounds=args.warmup,
        penalty_weight=args.penalty_weight,
        weight_temperature=args.temperature,
        seed=args.seed,
    )
    evaluator = _make_evaluator(args, space)
    try:
        if args.mode == "progressive":
            targets = tuple(float(t) for t in args.targets.split(","))
            if len(targets) != 3:
                raise documents.DocumentError("--targets needs three comma-separated GFLOPs")
            ratios = (4, 2, 1)
            scale = args.rounds / sum(ratios)
            rounds = tuple(max(1, round(r * scale)) for r in ratios)
            plans = default_progressive_plans(rounds, targets)
            run = _run_progressive_resumable(args, space, plans, evaluator, config)
        else:
            target = int(args.target_gflops * GFLOP) if args.target_gflops else None
            run = _run_one_step_resumable(args, space, evaluator, config, target)
        if run is None:
            return EXIT_OK  # stopped early; checkpoint written
        _search_run_to_disk(args, space, run, config)
    except EvaluatorError:
        _salvage_partial_trajectories(args)
        raise
    finally:
        evaluator.close()
    return EXIT_OK


def _salvage_partial_trajectories(args) -> None:
    """After an evaluator failure, turn any step checkpoints into trajectory
    CSVs so the completed rounds are not lost."""
    from .progressive import Trajectory, _record_parse

    out_dir = Path(args.out_dir)
    for ck_path in sorted(out_dir.glob("step_*/checkpoint.json")):
        try:
            ck = load_checkpoint(ck_path)
            records = [_record_parse(r) for r in ck.get("records", [])]
            traj = Trajectory(ck.get("step_id", "?"), 0.0, records)
            (ck_path.parent / "trajectory.csv").write_text(trajectory_csv(traj))
        except (documents.DocumentError, OSError, KeyError):
            continue


def _checkpoint_path(args, step_id: str) -> Path:
    out_dir = Path(args.out_dir)
    (out_dir / f"step_{step_id}").mkdir(parents=True, exist_ok=True)
    return out_dir / f"step_{step_id}" / "checkpoint.json"


def _resumable_step(args, space, frozen, plan, evaluator, config):
    """Run one step with checkpointing and optional early stop / resume."""
    ck_path = _checkpoint_path(args, plan.step_id)
    resume_state = None
    if args.resume and ck_path.exists():
        resume_state = load_checkpoint(ck_path)
        if resume_state.get("done"):
            resume_state = None if resume_state.get("records") is None else resume_state
    sink = lambda ck: save_checkpoint(ck_path, ck)
    result = run_step(
        space, frozen, plan, evaluator, config,
        resume=resume_state,
        stop_after_round=args.stop_after_round,
        checkpoint_sink=sink,
    )
    finished = len(result.trajectory.records) >= plan.rounds or not result.params.var_ids
    return result, finished


def _run_one_step_resumable(args, space, evaluator, config, target):
    plan = StepPlan("one_step", config.rounds, target, "whole_model")
    result, finished = _resumable_step(args, space, {}, plan, evaluator, config)
    if not finished:
        return None
    return SearchRun(steps=[result], final_arch=result.argmax, space=space)


def _run_progressive_resumable(args, space, plans, evaluator, config):
    from .progressive import _progressive_freeze  # shared freezing rule

    frozen: dict[str, object] = {}
    steps = []
    for plan in plans:
        result, finished = _resumable_step(args, space, frozen, plan, evaluator, config)
        if not finished:
            return None
        steps.append(result)
        frozen = _progressive_freeze(space, frozen, result)
        evaluator.on_step_boundary(documents.arch_to_document(space, result.argmax))
    final = steps[-1].argmax
    return SearchRun(steps=steps, final_arch=final, space=space)


# -- export -----------------------------------------------------------------------


def _cmd_export(args) -> int:
    space = _load_space(args)
    ck = load_checkpoint(Path(args.checkpoint))
    params = ArchParams(
        var_ids=tuple(ck["var_ids"]), logits=tuple(tuple(r) for r in ck["logits"])
    )
    step_id = ck.get("step_id", "one_step")
    keep = set(step_variable_ids(space, step_id)) & set(params.var_ids)
    placeholders = {
        v.vid: space.effective_choices(v)[0]
        for v in space.variables()
        if v.vid not in keep and v.vid not in space.frozen_map()
    }
    restricted = space.restrict(placeholders) if placeholders else space
    kept_params = ArchParams(
        var_ids=tuple(v for v in params.var_ids if v in keep),
        logits=tuple(row for v, row in zip(params.var_ids, params.logits) if v in keep),
    )
    arch = argmax_architecture(kept_params, restricted)
    doc = documents.arch_to_document(space, arch)
    _emit_json(args, "exported_arch.json", doc)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsnas",
        description="Cost-aware architecture search for two-stream video models",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", help="write outputs here instead of stdout")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    p_space = sub.add_parser("space", help="inspect the search space")
    space_sub = p_space.add_subparsers(dest="space_cmd", required=True)
    p_show = space_sub.add_parser("show", help="emit canonical space JSON")
    _add_space_args(p_show)
    p_count = space_sub.add_parser("count", help="exact cardinality")
    _add_space_args(p_count)
    p_count.add_argument("--step", choices=("sparse", "dense_fusion", "attention", "one_step"))
    p_count.add_argument("--frozen", choices=("all",))
    p_space.set_defaults(func=_cmd_space, step=None, frozen=None)

    p_cost = sub.add_parser("cost", help="cost an architecture document")
    _add_space_args(p_cost)
    p_cost.add_argument("--arch", required=True, help="architecture JSON file")
    p_cost.add_argument("--views", type=int, default=1)
    p_cost.set_defaults(func=_cmd_cost)

    p_manual = sub.add_parser("manual", help="uniform two-stream baseline at a FLOPs budget")
    _add_space_args(p_manual, default_spatial=160)
    p_manual.add_argument("--target-gflops", type=_positive_float, required=True)
    p_manual.add_argument("--ratio", type=_ratio_arg, required=True,
                          help="sparse-stream share of FLOPs (percent or fraction)")
    p_manual.add_argument("--views", type=int, default=1)
    p_manual.set_defaults(func=_cmd_manual)

    p_search = sub.add_parser("search", help="run a progressive or one-step search")
    _add_space_args(p_search, default_spatial=160)
    p_search.add_argument("--mode", choices=("progressive", "one-step"), default="progressive")
    p_search.add_argument("--evaluator", choices=("synthetic", "table", "worker"),
                          default="synthetic")
    p_search.add_argument("--worker-cmd", help=f"worker command (or ${WORKER_ENV})")
    p_search.add_argument("--worker-timeout", type=float, default=60.0)
    p_search.add_argument("--table", help="score table JSON for --evaluator table")
    p_search.add_argument("--rounds", type=int, default=70,
                          help="total round budget (progressive splits 4:2:1)")
    p_search.add_argument("--samples", type=int, default=8)
    p_search.add_argument("--warmup", type=int, default=None)
    p_search.add_argument("--penalty-weight", type=float, default=0.5)
    p_search.add_argument("--temperature", type=float, default=0.05)
    p_search.add_argument("--targets", default="1.4,2.0,2.5",
                          help="progressive per-view GFLOPs targets")
    p_search.add_argument("--target-gflops", type=float, default=None,
                          help="one-step per-view GFLOPs target")
    p_search.add_argument("--views", type=int, default=1)
    p_search.add_argument("--resume", action="store_true",
                          help="resume from checkpoints in --out-dir")
    p_search.add_argument("--stop-after-round", type=int, default=None,
                          help="stop the current step early (checkpoint kept)")
    p_search.set_defaults(func=_cmd_search)

    p_export = sub.add_parser("export", help="argmax architecture from a checkpoint")
    _add_space_args(p_export)
    p_export.add_argument("--checkpoint", required=True)
    p_export.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "search" and not args.out_dir:
            parser.error("search requires --out-dir")
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (SpaceError, CostError, documents.DocumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EvaluatorError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR


if __name__ == "__main__":
    sys.exit(main())
