"""Sampling-based categorical architecture search core.

The architecture distribution is one independent categorical per search
variable, parameterized by logits.  Each round: sample a batch, score it,
penalize FLOPs overshoot with a one-sided hinge, convert penalized scores to
importance weights with a tempered softmax, and take one Adam ascent step on
the weighted log-likelihood of the batch.  The summed categorical entropy is
the convergence indicator.

Everything is pure Python floats so checkpoints round-trip bit-exactly
through JSON.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

from .space import ArchitectureSample, SearchSpaceSpec, SpaceError, seeded_rng

__all__ = [
    "ArchParams",
    "AdamState",
    "SearchConfig",
    "RoundRecord",
    "init_uniform",
    "sample_batch",
    "hinge_penalty",
    "compute_weights",
    "update",
    "entropy",
    "argmax_architecture",
]


def _softmax(xs: Sequence[float]) -> list[float]:
    m = max(xs)
    exps = [math.exp(x - m) for x in xs]
    total = sum(exps)
    return [e / total for e in exps]


@dataclass(frozen=True)
class ArchParams:
    """Per-free-variable categorical logits, in the space's canonical order."""

    var_ids: tuple[str, ...]
    logits: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.var_ids) != len(self.logits):
            raise ValueError("one logit vector per variable required")

    def probs(self) -> tuple[tuple[float, ...], ...]:
        return tuple(tuple(_softmax(row)) for row in self.logits)


@dataclass(frozen=True)
class AdamState:
    """Adaptive-moment state matching an ArchParams layout."""

    m: tuple[tuple[float, ...], ...]
    v: tuple[tuple[float, ...], ...]
    t: int = 0

    @staticmethod
    def zeros_like(params: ArchParams) -> "AdamState":
        shape = tuple(tuple(0.0 for _ in row) for row in params.logits)
        return AdamState(m=shape, v=shape, t=0)


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of one search run or one progressive step."""

    rounds: int
    samples_per_round: int = 8
    warmup_rounds: int | None = None  # None -> 5% of rounds
    arch_lr: float = 0.025
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_temperature: float = 0.05
    penalty_weight: float = 0.5
    flops_target: int | None = None
    flops_target_range: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.samples_per_round < 2:
            raise ValueError("samples_per_round must be >= 2")
        if self.weight_temperature <= 0:
            raise ValueError("weight temperature must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be >= 0")
        if self.arch_lr <= 0:
            raise ValueError("arch learning rate must be positive")
        if self.flops_target_range is not None:
            lo, hi = self.flops_target_range
            if not 0 <= lo <= hi:
                raise ValueError(f"bad FLOPs range {self.flops_target_range}")

    @property
    def resolved_warmup(self) -> int:
        if self.warmup_rounds is not None:
            return self.warmup_rounds
        return round(0.05 * self.rounds)


@dataclass(frozen=True)
class RoundRecord:
    """Everything observed in one sample-evaluate-update round."""

    round_index: int
    arch_keys: tuple[str, ...]
    scores: tuple[float, ...]
    penalties: tuple[float, ...]
    weights: tuple[float, ...]
    entropy: float
    mean_penalized: float
    max_penalized: float
    mean_flops: float
    argmax_flops: int


def init_uniform(space: SearchSpaceSpec) -> ArchParams:
    """Zero logits over every free variable: uniform categoricals."""
    free = space.free_variables()
    return ArchParams(
        var_ids=tuple(v.vid for v in free),
        logits=tuple(tuple(0.0 for _ in space.effective_choices(v)) for v in free),
    )


def sample_batch(
    params: ArchParams,
    space: SearchSpaceSpec,
    batch_size: int,
    rng_seed: int,
) -> list[ArchitectureSample]:
    """Draw a batch, each variable independently from its categorical."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    free_set = dict(zip(params.var_ids, params.probs()))
    rng = seeded_rng("batch", rng_seed)
    frozen = space.frozen_map()
    batch = []
    for _ in range(batch_size):
        values: dict[str, object] = {}
        for var in space.variables():
            if var.vid in free_set:
                probs = free_set[var.vid]
                cum, acc = [], 0.0
                for p in probs:
                    acc += p
                    cum.append(acc)
                idx = min(bisect_right(cum, rng.random()), len(probs) - 1)
                values[var.vid] = space.effective_choices(var)[idx]
            else:
                values[var.vid] = frozen[var.vid]
        batch.append(space.architecture(values))
    return batch


def hinge_penalty(flops: int, config: SearchConfig) -> float:
    """One-sided relative FLOPs overshoot; under-budget models pay nothing."""
    if flops < 0:
        raise ValueError("flops must be >= 0")
    if config.flops_target_range is not None:
        _, high = config.flops_target_range
        ceiling = high
    elif config.flops_target is not None:
        ceiling = config.flops_target
    else:
        return 0.0
    if ceiling <= 0 or flops <= ceiling:
        return 0.0
    return (flops - ceiling) / ceiling


def compute_weights(
    scores: Sequence[float],
    penalties: Sequence[float],
    temperature: float,
    penalty_weight: float,
) -> list[float]:
    """Tempered softmax of hinge-penalized scores; sums to one."""
    if len(scores) != len(penalties):
        raise ValueError("scores and penalties must align")
    if len(scores) < 2:
        raise ValueError("need at least two samples")
    penalized = []
    for s, p in zip(scores, penalties):
        if not (math.isfinite(s) and math.isfinite(p)):
            raise ValueError(f"non-finite score/penalty ({s}, {p})")
        penalized.append(s - penalty_weight * p)
    return _softmax([x / temperature for x in penalized])


def update(
    params: ArchParams,
    space: SearchSpaceSpec,
    batch: Sequence[ArchitectureSample],
    weights: Sequence[float],
    state: AdamState,
    *,
    lr: float = 0.025,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[ArchParams, AdamState]:
    """One Adam ascent step on the weighted batch log-likelihood.

    The gradient on a logit is sum_i w_i (1[arch_i picks it] - prob); logits
    are recentered afterwards (softmax-invariant) to keep them bounded.
    """
    if len(batch) != len(weights):
        raise ValueError("batch and weights must align")
    if abs(sum(weights) - 1.0) > 1e-6:
        raise ValueError("weights must sum to 1")
    var_index = {vid: i for i, vid in enumerate(params.var_ids)}
    probs = params.probs()
    counts = [[0.0] * len(row) for row in params.logits]
    for arch, w in zip(batch, weights):
        values = arch.as_dict()
        for vid, vi in var_index.items():
            var = space.variable(vid)
            choice_idx = space.effective_choices(var).index(values[vid])
            counts[vi][choice_idx] += w

    b1, b2 = betas
    t = state.t + 1
    new_logits, new_m, new_v = [], [], []
    for vi, row in enumerate(params.logits):
        grad = [counts[vi][ci] - probs[vi][ci] for ci in range(len(row))]
        m_row = [b1 * state.m[vi][ci] + (1 - b1) * grad[ci] for ci in range(len(row))]
        v_row = [b2 * state.v[vi][ci] + (1 - b2) * grad[ci] ** 2 for ci in range(len(row))]
        stepped = []
        for ci, x in enumerate(row):
            m_hat = m_row[ci] / (1 - b1**t)
            v_hat = v_row[ci] / (1 - b2**t)
            stepped.append(x + lr * m_hat / (math.sqrt(v_hat) + eps))
        center = sum(stepped) / len(stepped)
        new_logits.append(tuple(x - center for x in stepped))
        new_m.append(tuple(m_row))
        new_v.append(tuple(v_row))
    return (
        ArchParams(var_ids=params.var_ids, logits=tuple(new_logits)),
        AdamState(m=tuple(new_m), v=tuple(new_v), t=t),
    )


def entropy(params: ArchParams) -> float:
    """Summed categorical entropy in nats."""
    total = 0.0
    for row in params.probs():
        total -= sum(p * math.log(p) for p in row if p > 0.0)
    return total


def argmax_architecture(params: ArchParams, space: SearchSpaceSpec) -> ArchitectureSample:
    """Most probable architecture; ties break toward the lowest choice index."""
    frozen = space.frozen_map()
    by_vid = dict(zip(params.var_ids, params.probs()))
    values: dict[str, object] = {}
    for var in space.variables():
        if var.vid in by_vid:
            probs = by_vid[var.vid]
            best = max(range(len(probs)), key=lambda i: (probs[i], -i))
            values[var.vid] = space.effective_choices(var)[best]
        elif var.vid in frozen:
            values[var.vid] = frozen[var.vid]
        else:
            raise SpaceError(f"variable {var.vid} neither free nor frozen")
    return space.architecture(values)
