#!/usr/bin/env python3
"""Run a progressive search on the full video space against a synthetic
surrogate objective and report per-step entropy, FLOPs, and the final
architecture document.

Example:
    python scripts/run_synthetic_search.py --seed 7 --rounds 140 --out-dir runs/demo
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from tsnas import documents
from tsnas.cost import architecture_cost
from tsnas.evaluators import SyntheticEvaluator, separable_objective
from tsnas.progressive import default_progressive_plans, run_progressive, trajectory_csv
from tsnas.sampler import SearchConfig
from tsnas.space import build_default_space


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rounds", type=int, default=140, help="total budget, split 4:2:1")
    parser.add_argument("--spatial", type=int, default=160)
    parser.add_argument("--penalty-weight", type=float, default=0.5)
    parser.add_argument("--out-dir", type=Path, default=None)
    args = parser.parse_args()

    space = build_default_space(4, 32, args.spatial)
    objective = separable_objective(space, args.seed)
    evaluator = SyntheticEvaluator(space, objective)
    scale = args.rounds / 7
    plans = default_progressive_plans(
        rounds=tuple(max(1, round(r * scale)) for r in (4, 2, 1))
    )
    config = SearchConfig(
        rounds=args.rounds,
        seed=args.seed,
        penalty_weight=args.penalty_weight,
        weight_temperature=0.01,
    )
    run = run_progressive(space, plans, evaluator, config)

    for step in run.steps:
        traj = step.trajectory
        final_entropy = traj.records[-1].entropy if traj.records else traj.initial_entropy
        print(
            f"step {step.plan.step_id:>12}: rounds={len(traj.records):4d} "
            f"entropy {traj.initial_entropy:7.3f} -> {final_entropy:7.3f} "
            f"argmax_flops={traj.records[-1].argmax_flops / 1e9 if traj.records else 0:6.3f}G"
        )
    report = architecture_cost(space, run.final_arch)
    print(
        f"final architecture: {report.flops / 1e9:.3f} GFLOPs/view, "
        f"{report.params / 1e6:.2f} M params, sparse fraction {float(report.sparse_fraction()):.3f}"
    )

    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        doc = documents.arch_to_document(
            space, run.final_arch,
            cost_summary={"per_view_flops": report.flops, "params": report.params},
        )
        (args.out_dir / "final_arch.json").write_text(documents.canonical_json(doc) + "\n")
        for step in run.steps:
            name = f"trajectory_{step.plan.step_id}.csv"
            (args.out_dir / name).write_text(trajectory_csv(step.trajectory))
        print(f"wrote {args.out_dir}/final_arch.json and per-step trajectories")
    return 0


if __name__ == "__main__":
    sys.exit(main())
