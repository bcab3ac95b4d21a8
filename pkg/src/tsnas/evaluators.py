"""Pluggable architecture evaluators.

Three families:
  * synthetic surrogate objectives with enumerable optima (desk-scale
    stand-ins for validation accuracy),
  * tabular lookup over canonical architecture hashes,
  * an external worker speaking line-delimited JSON over stdin/stdout.

Scores are always accuracies in [0, 1]; out-of-range values are errors,
never clamped.
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .documents import arch_table_key, canonical_json
from .space import SearchSpaceSpec, seeded_rng

__all__ = [
    "EvaluatorError",
    "EvaluationError",
    "TableLookupError",
    "WorkerError",
    "WorkerTimeout",
    "WorkerExited",
    "WorkerProtocolError",
    "ScoreRangeError",
    "Evaluator",
    "SyntheticObjective",
    "SyntheticEvaluator",
    "TableEvaluator",
    "ProtocolEvaluator",
    "separable_objective",
    "stepwise_objective",
]


class EvaluatorError(Exception):
    """Base class for evaluator failures."""


class EvaluationError(EvaluatorError):
    """An evaluation failed; carries the round and architecture id."""

    def __init__(self, message: str, *, round_index: int | None = None, arch_id: str | None = None):
        where = []
        if round_index is not None:
            where.append(f"round {round_index}")
        if arch_id is not None:
            where.append(f"arch {arch_id}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.round_index = round_index
        self.arch_id = arch_id


class TableLookupError(EvaluatorError):
    pass


class WorkerError(EvaluatorError):
    pass


class WorkerTimeout(WorkerError):
    pass


class WorkerExited(WorkerError):
    pass


class WorkerProtocolError(WorkerError):
    pass


class ScoreRangeError(WorkerError):
    pass


def _check_score(score, origin: str) -> float:
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise ScoreRangeError(f"{origin} returned non-numeric score {score!r}")
    s = float(score)
    if not math.isfinite(s) or not 0.0 <= s <= 1.0:
        raise ScoreRangeError(f"{origin} returned score {score!r} outside [0, 1]")
    return s


class Evaluator:
    """Contract: evaluate(architecture document, step id) -> score in [0, 1]."""

    deterministic = True

    def evaluate(self, doc: Mapping, step: str) -> float:
        raise NotImplementedError

    def evaluate_batch(self, docs: Sequence[Mapping], step: str) -> list[float]:
        return [self.evaluate(doc, step) for doc in docs]

    def on_step_boundary(self, frozen_doc: Mapping) -> None:
        """Called when a progressive step freezes its choices; stateful
        evaluators inherit state here, stateless ones ignore it."""

    def close(self) -> None:
        pass


# -- synthetic --------------------------------------------------------------------


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class SyntheticObjective:
    """Separable utilities plus optional pairwise bonuses, squashed to [0, 1].

    utilities: vid -> one utility per choice index.
    interactions: (vid_a, choice_idx_a, vid_b, choice_idx_b, bonus).
    score = logistic(bias + sum(utilities) + sum(bonuses) + noise).
    With noise_std == 0 the objective is a pure function of the architecture.
    """

    seed: int
    utilities: tuple[tuple[str, tuple[float, ...]], ...]
    interactions: tuple[tuple[str, int, str, int, float], ...] = ()
    bias: float = 0.0
    noise_std: float = 0.0

    def utility_map(self) -> dict[str, tuple[float, ...]]:
        return dict(self.utilities)


class SyntheticEvaluator(Evaluator):
    def __init__(self, space: SearchSpaceSpec, objective: SyntheticObjective):
        self.space = space
        self.objective = objective
        self.deterministic = True
        self._utilities = objective.utility_map()

    def _doc_indices(self, doc: Mapping) -> dict[str, int]:
        indices: dict[str, int] = {}
        for rec in doc.get("backbone", ()):
            base = f"{rec['stream']}.g{rec['group']:02d}"
            for key, name in (("t", "t"), ("k", "k"), ("c", "c_out")):
                var = self.space.variable(f"{base}.{key}")
                indices[var.vid] = var.choices.index(rec[name])
            evar = self.space.variable(f"{base}.e")
            indices[evar.vid] = evar.choices.index(Fraction(rec["e"]["num"], rec["e"]["den"]))
        for rec in doc.get("fusion", ()):
            var = self.space.variable(f"fusion.g{rec['location']:02d}")
            kinds = [op.kind for op in var.choices]
            op = rec["op"]
            indices[var.vid] = kinds.index(op["kind"])
        for rec in doc.get("attention", ()):
            var = self.space.variable(f"attn.{rec['stream']}.g{rec['location']:02d}")
            indices[var.vid] = var.choices.index(rec["enabled"])
        return indices

    def evaluate(self, doc: Mapping, step: str) -> float:
        indices = self._doc_indices(doc)
        total = self.objective.bias
        for vid, idx in indices.items():
            row = self._utilities.get(vid)
            if row is not None:
                total += row[idx]
        for vid_a, ia, vid_b, ib, bonus in self.objective.interactions:
            if indices.get(vid_a) == ia and indices.get(vid_b) == ib:
                total += bonus
        if self.objective.noise_std > 0:
            token = canonical_json(sorted(indices.items()))
            rng = seeded_rng("synthetic-noise", self.objective.seed, token)
            total += rng.gauss(0.0, self.objective.noise_std)
        return _check_score(_logistic(total), "synthetic objective")


def _normalized(seed, utilities, interactions, logit_span: float) -> SyntheticObjective:
    """Rescale so the reachable utility sum spans `logit_span` logistic units
    centered at zero; keeps scores out of the saturated tails where the
    per-choice signal would vanish."""
    lo = sum(min(row) for _, row in utilities)
    hi = sum(max(row) for _, row in utilities)
    hi += sum(b for *_, b in interactions if b > 0)
    lo += sum(b for *_, b in interactions if b < 0)
    span = hi - lo
    scale = logit_span / span if span > 0 else 1.0
    scaled_utils = tuple((vid, tuple(u * scale for u in row)) for vid, row in utilities)
    scaled_inter = tuple((va, ia, vb, ib, b * scale) for va, ia, vb, ib, b in interactions)
    bias = -scale * (hi + lo) / 2
    return SyntheticObjective(
        seed=seed, utilities=scaled_utils, interactions=scaled_inter, bias=bias
    )


def separable_objective(
    space: SearchSpaceSpec,
    seed: int,
    *,
    logit_span: float = 4.0,
) -> SyntheticObjective:
    """Random separable utilities with per-variable distinct levels.

    Each variable's choices get a random permutation of evenly spaced levels,
    so the optimum is unique and per-choice gaps are bounded away from zero;
    the whole objective is normalized to a fixed, centered logistic range.
    """
    rng = seeded_rng("separable", seed)
    utilities = []
    for var in space.free_variables():
        n = len(space.effective_choices(var))
        if n == 1:
            utilities.append((var.vid, (0.0,)))
            continue
        levels = [i / (n - 1) - 0.5 for i in range(n)]
        rng.shuffle(levels)
        utilities.append((var.vid, tuple(levels)))
    return _normalized(seed, tuple(utilities), (), logit_span)


def stepwise_objective(
    space: SearchSpaceSpec,
    seed: int,
    *,
    logit_span: float = 4.0,
    bonus: float = 0.5,
) -> SyntheticObjective:
    """Separable utilities plus pairwise bonuses confined within step groups
    (sparse backbone / dense+fusion / attention), aligned with the optimum so
    the global best is still the enumerated one."""
    from .space import step_variable_ids

    rng = seeded_rng("stepwise", seed)
    utilities = []
    for var in space.free_variables():
        n = len(space.effective_choices(var))
        if n == 1:
            utilities.append((var.vid, (0.0,)))
            continue
        levels = [i / (n - 1) - 0.5 for i in range(n)]
        rng.shuffle(levels)
        utilities.append((var.vid, tuple(levels)))
    util_map = dict(utilities)
    interactions = []
    for step in ("sparse", "dense_fusion", "attention"):
        vids = [v for v in step_variable_ids(space, step) if len(util_map.get(v, ())) > 1]
        rng.shuffle(vids)
        for va, vb in zip(vids[::2], vids[1::2]):
            best_a = max(range(len(util_map[va])), key=util_map[va].__getitem__)
            best_b = max(range(len(util_map[vb])), key=util_map[vb].__getitem__)
            interactions.append((va, best_a, vb, best_b, bonus))
    return _normalized(seed, tuple(utilities), tuple(interactions), logit_span)


# -- tabular ---------------------------------------------------------------------


class TableEvaluator(Evaluator):
    """Exact lookup keyed by the canonical architecture hash."""

    def __init__(self, table: Mapping[str, float]):
        self.table = dict(table)
        self.deterministic = True

    def evaluate(self, doc: Mapping, step: str) -> float:
        key = arch_table_key(doc)
        if key not in self.table:
            raise TableLookupError(f"architecture {key} not in table")
        return _check_score(self.table[key], "table")


# -- external worker ----------------------------------------------------------------


class ProtocolEvaluator(Evaluator):
    """Client for a worker speaking line-delimited JSON on stdin/stdout.

    Requests carry monotonically increasing ids; responses are matched by id
    so workers may answer out of order.  Any malformed line, unknown id,
    out-of-range score, timeout, or worker exit is a distinct error.
    """

    deterministic = False

    def __init__(self, command: str | Sequence[str], timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._next_id = 1
        self._lock = threading.Lock()
        self._responses: dict[int, dict] = {}
        self._events = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                if not isinstance(msg, dict) or not isinstance(msg.get("id"), int):
                    raise ValueError("response is not an object with an integer id")
            except ValueError as exc:
                self._events.put(WorkerProtocolError(f"malformed worker line {line!r}: {exc}"))
                continue
            self._events.put(msg)
        self._events.put(WorkerExited(f"worker {self.command[0]} closed its output"))

    def _issue(self, payload: dict) -> int:
        with self._lock:
            rid = self._next_id
            self._next_id += 1
        payload = {"id": rid, **payload}
        if self._proc.poll() is not None or self._proc.stdin is None:
            raise WorkerExited(f"worker {self.command[0]} exited with {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise WorkerExited(f"worker {self.command[0]} pipe closed: {exc}") from exc
        return rid

    def _collect(self, wanted: set[int]) -> dict[int, dict]:
        """Wait for responses to all wanted ids, tolerating any arrival order."""
        got: dict[int, dict] = {}
        for rid in list(wanted):
            if rid in self._responses:
                got[rid] = self._responses.pop(rid)
                wanted.discard(rid)
        while wanted:
            try:
                event = self._events.get(timeout=self.timeout)
            except queue.Empty:
                raise WorkerTimeout(
                    f"no worker response within {self.timeout}s for ids {sorted(wanted)}"
                ) from None
            if isinstance(event, WorkerError):
                raise event
            rid = event["id"]
            if rid in wanted:
                got[rid] = event
                wanted.discard(rid)
            elif rid in self._responses or rid >= self._next_id:
                raise WorkerProtocolError(f"worker answered unknown id {rid}")
            else:
                self._responses[rid] = event
        return got

    def _score_of(self, msg: dict, arch_id: str | None = None) -> float:
        if "error" in msg:
            raise WorkerError(f"worker error: {msg['error']}")
        if "score" not in msg:
            raise WorkerProtocolError(f"response without score: {msg}")
        return _check_score(msg["score"], "worker")

    def evaluate(self, doc: Mapping, step: str) -> float:
        rid = self._issue({"kind": "evaluate", "arch": dict(doc), "step": step})
        msg = self._collect({rid})[rid]
        return self._score_of(msg)

    def evaluate_batch(self, docs: Sequence[Mapping], step: str) -> list[float]:
        rids = [self._issue({"kind": "evaluate", "arch": dict(doc), "step": step}) for doc in docs]
        got = self._collect(set(rids))
        return [self._score_of(got[rid]) for rid in rids]

    def on_step_boundary(self, frozen_doc: Mapping) -> None:
        rid = self._issue({"kind": "freeze", "arch": dict(frozen_doc)})
        msg = self._collect({rid})[rid]
        if "error" in msg:
            raise WorkerError(f"worker rejected freeze: {msg['error']}")
        if msg.get("ack") is not True:
            raise WorkerProtocolError(f"freeze not acknowledged: {msg}")

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
