"""Two-stream multivariate search space.

The space is a fixed macro layout (two streams of stacked block groups,
lateral fusion taps, attention taps) whose per-group design choices are the
search variables: temporal/spatial depthwise kernel sizes, output channels,
expansion rate, fusion op per tap, attention on/off bit per tap.  Expansion
rates live on an exact rational grid (`fractions.Fraction`), never floats,
so domain membership is unambiguous.

Every type is immutable; every operation is a pure function of its inputs,
with sampling taking an explicit seed.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from math import prod
from typing import Mapping, Sequence

__all__ = [
    "SpaceError",
    "ChoiceRange",
    "BlockGroupSpec",
    "StreamSpec",
    "FusionOp",
    "SearchSpaceSpec",
    "Variable",
    "ArchitectureSample",
    "build_default_space",
    "frac",
    "seeded_rng",
]


class SpaceError(ValueError):
    """Malformed space/domain definition or out-of-domain value."""


def frac(x) -> Fraction:
    """Coerce to an exact Fraction; floats go through their decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    if isinstance(x, str):
        return Fraction(x)
    raise SpaceError(f"cannot interpret {x!r} as a rational")


def seeded_rng(*tokens) -> random.Random:
    """Deterministic RNG derived from a tuple of tokens via sha256.

    Used everywhere a seed is split into independent streams (per round,
    per architecture) so resuming mid-run replays the identical stream.
    """
    digest = hashlib.sha256("/".join(str(t) for t in tokens).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class ChoiceRange:
    """Inclusive arithmetic grid of choices: lo, lo+step, ..., hi."""

    lo: Fraction
    hi: Fraction
    step: Fraction

    def __post_init__(self):
        object.__setattr__(self, "lo", frac(self.lo))
        object.__setattr__(self, "hi", frac(self.hi))
        object.__setattr__(self, "step", frac(self.step))
        if self.step <= 0:
            raise SpaceError(f"step must be positive, got {self.step}")
        if self.lo > self.hi:
            raise SpaceError(f"lo {self.lo} exceeds hi {self.hi}")
        span = self.hi - self.lo
        if span % self.step != 0:
            raise SpaceError(f"({self.hi} - {self.lo}) is not a multiple of step {self.step}")

    def __len__(self) -> int:
        return int((self.hi - self.lo) / self.step) + 1

    def values(self) -> tuple[Fraction, ...]:
        return tuple(self.lo + i * self.step for i in range(len(self)))

    def int_values(self) -> tuple[int, ...]:
        vals = self.values()
        if any(v.denominator != 1 for v in vals):
            raise SpaceError(f"range {self} holds non-integer values")
        return tuple(int(v) for v in vals)

    def __contains__(self, value) -> bool:
        v = frac(value)
        return self.lo <= v <= self.hi and (v - self.lo) % self.step == 0


@dataclass(frozen=True)
class BlockGroupSpec:
    """One block group: N stacked blocks sharing the same searched design.

    The first block of the group carries the spatial stride; channel choices
    must be positive integers.
    """

    stage: int
    repeats: int
    spatial_stride: int
    channels: ChoiceRange
    expansion: ChoiceRange
    temporal_kernels: tuple[int, ...] = (1, 3, 5)
    spatial_kernels: tuple[int, ...] = (3, 5)

    def __post_init__(self):
        if not 1 <= self.stage <= 4:
            raise SpaceError(f"stage must be in 1..4, got {self.stage}")
        if self.repeats < 1:
            raise SpaceError("repeats must be positive")
        if self.spatial_stride not in (1, 2):
            raise SpaceError(f"spatial stride must be 1 or 2, got {self.spatial_stride}")
        if any(c <= 0 for c in self.channels.int_values()):
            raise SpaceError("channel choices must be positive integers")
        for ks, what in ((self.temporal_kernels, "temporal"), (self.spatial_kernels, "spatial")):
            if not ks or any(k < 1 or k % 2 == 0 for k in ks):
                raise SpaceError(f"{what} kernel sizes must be odd positive integers")


@dataclass(frozen=True)
class StreamSpec:
    """One stream: input clip geometry, fixed stem, and its block groups."""

    name: str
    frames: int
    input_spatial: int
    stem_channels: int
    groups: tuple[BlockGroupSpec, ...]

    def __post_init__(self):
        if self.name not in ("sparse", "dense"):
            raise SpaceError(f"stream name must be sparse or dense, got {self.name!r}")
        if self.frames < 1 or self.input_spatial < 1 or self.stem_channels < 1:
            raise SpaceError("frames, input_spatial and stem_channels must be positive")


@dataclass(frozen=True)
class FusionOp:
    """A lateral dense-to-sparse fusion choice.

    time_strided_conv: tau x 1 x 1 conv over dense features, temporal stride
    dense_T/sparse_T, producing gamma * dense_C channels concatenated onto
    the sparse stream.  time_strided_sample: frame subsampling + concat,
    zero cost.  none: no connection.
    """

    kind: str
    tau: int = 0
    gamma: int = 0

    KINDS = ("none", "time_strided_conv", "time_strided_sample")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise SpaceError(f"unknown fusion kind {self.kind!r}")
        if self.kind == "time_strided_conv":
            if self.tau < 1 or self.tau % 2 == 0 or self.gamma < 1:
                raise SpaceError("time_strided_conv needs odd tau >= 1 and gamma >= 1")
        elif self.tau or self.gamma:
            raise SpaceError(f"{self.kind} takes no parameters")

    def label(self) -> str:
        if self.kind == "time_strided_conv":
            return f"time_strided_conv(tau={self.tau},gamma={self.gamma})"
        return self.kind


FUSION_NONE = FusionOp("none")
FUSION_TS_SAMPLE = FusionOp("time_strided_sample")


def fusion_ts_conv(tau: int = 5, gamma: int = 2) -> FusionOp:
    return FusionOp("time_strided_conv", tau=tau, gamma=gamma)


DEFAULT_FUSION_OPS = (FUSION_NONE, fusion_ts_conv(), FUSION_TS_SAMPLE)

BACKBONE_VARS = ("t", "k", "c", "e")


@dataclass(frozen=True)
class Variable:
    """One categorical search variable: an id and its ordered choices."""

    vid: str
    choices: tuple

    def index_of(self, value) -> int:
        try:
            return self.choices.index(value)
        except ValueError:
            raise SpaceError(f"{value!r} not in domain of {self.vid}: {self.choices}") from None


@dataclass(frozen=True)
class ArchitectureSample:
    """One concrete architecture: a value for every space variable.

    Stored as (variable id, value) pairs in the space's canonical order.
    """

    choices: tuple[tuple[str, object], ...]

    def __getitem__(self, vid: str):
        return self.as_dict()[vid]

    def __contains__(self, vid: str) -> bool:
        return vid in self.as_dict()

    def as_dict(self) -> dict[str, object]:
        d = getattr(self, "_dict", None)
        if d is None:
            d = dict(self.choices)
            object.__setattr__(self, "_dict", d)
        return d

    def key(self) -> tuple:
        """Hashable identity of the sample."""
        return self.choices

    def group_choice(self, stream: str, gi: int) -> tuple[int, int, int, Fraction]:
        d = self.as_dict()
        base = f"{stream}.g{gi:02d}"
        return (d[f"{base}.t"], d[f"{base}.k"], d[f"{base}.c"], d[f"{base}.e"])


@dataclass(frozen=True)
class SearchSpaceSpec:
    """The full two-stream space plus an optional frozen-variable mask.

    Frozen variables behave as singleton domains: they keep their slot in
    the canonical variable order but contribute exactly one choice.
    """

    sparse: StreamSpec
    dense: StreamSpec
    fusion_locations: tuple[int, ...]
    fusion_ops: tuple[FusionOp, ...]
    sparse_attention: tuple[int, ...]
    dense_attention: tuple[int, ...]
    frozen: tuple[tuple[str, object], ...] = ()

    def __hash__(self):
        # Hashing recurses through every Fraction in every domain; memoize it,
        # spaces are immutable.
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.sparse, self.dense, self.fusion_locations, self.fusion_ops,
                      self.sparse_attention, self.dense_attention, self.frozen))
            object.__setattr__(self, "_hash", h)
        return h

    def __post_init__(self):
        if self.dense.frames % self.sparse.frames != 0:
            raise SpaceError(
                f"dense frames {self.dense.frames} not a multiple of sparse frames {self.sparse.frames}"
            )
        if self.sparse.input_spatial != self.dense.input_spatial:
            raise SpaceError("streams must share the input spatial size")
        n_sparse = len(self.sparse.groups)
        if any(not 0 <= loc < n_sparse for loc in self.fusion_locations):
            raise SpaceError("fusion location outside sparse group range")
        if len(set(self.fusion_locations)) != len(self.fusion_locations):
            raise SpaceError("duplicate fusion locations")
        if not self.fusion_ops:
            raise SpaceError("fusion op domain is empty")
        for locs, stream in ((self.sparse_attention, self.sparse), (self.dense_attention, self.dense)):
            if any(not 0 <= loc < len(stream.groups) for loc in locs):
                raise SpaceError(f"attention location outside {stream.name} group range")
        frozen_map = dict(self.frozen)
        base = {v.vid: v for v in _base_variables(self)}
        for vid, value in frozen_map.items():
            if vid not in base:
                raise SpaceError(f"frozen value for unknown variable {vid!r}")
            if value not in base[vid].choices:
                raise SpaceError(
                    f"frozen value {value!r} not in domain of {vid}: {base[vid].choices}"
                )

    # -- stream / structural helpers -------------------------------------

    @property
    def temporal_stride(self) -> int:
        return self.dense.frames // self.sparse.frames

    def stream(self, name: str) -> StreamSpec:
        if name == "sparse":
            return self.sparse
        if name == "dense":
            return self.dense
        raise SpaceError(f"no stream named {name!r}")

    def attention_locations(self, stream: str) -> tuple[int, ...]:
        return self.sparse_attention if stream == "sparse" else self.dense_attention

    # -- variables ---------------------------------------------------------

    def variables(self) -> tuple[Variable, ...]:
        """All variables in canonical order, unaffected by freezing."""
        return _base_variables(self)

    def variable(self, vid: str) -> Variable:
        v = _variable_index(self).get(vid)
        if v is None:
            raise SpaceError(f"unknown variable {vid!r}")
        return v

    def frozen_map(self) -> dict[str, object]:
        fm = self.__dict__.get("_frozen_map")
        if fm is None:
            fm = dict(self.frozen)
            object.__setattr__(self, "_frozen_map", fm)
        return fm

    def effective_choices(self, var: Variable) -> tuple:
        fm = self.frozen_map()
        if var.vid in fm:
            return (fm[var.vid],)
        return var.choices

    def free_variables(self) -> tuple[Variable, ...]:
        fm = self.frozen_map()
        return tuple(v for v in self.variables() if v.vid not in fm)

    # -- operations ----------------------------------------------------------

    def cardinality(self, restriction: Mapping[str, object] | None = None) -> int:
        """Exact number of distinct architectures (arbitrary-precision)."""
        space = self.restrict(restriction) if restriction else self
        return prod(len(space.effective_choices(v)) for v in space.variables())

    def restrict(self, frozen: Mapping[str, object]) -> "SearchSpaceSpec":
        """Freeze variables to concrete values; all values must be in-domain."""
        merged = dict(self.frozen)
        for vid, value in frozen.items():
            var = self.variable(vid)
            if value not in self.effective_choices(var):
                raise SpaceError(
                    f"cannot freeze {vid} to {value!r}; domain is {self.effective_choices(var)}"
                )
            merged[vid] = value
        order = {v.vid: i for i, v in enumerate(self.variables())}
        frozen_tuple = tuple(sorted(merged.items(), key=lambda kv: order[kv[0]]))
        return replace(self, frozen=frozen_tuple)

    def sample_uniform(self, rng_seed: int) -> ArchitectureSample:
        """Draw every free variable independently and uniformly."""
        rng = seeded_rng("uniform", rng_seed)
        picks = []
        for var in self.variables():
            choices = self.effective_choices(var)
            picks.append((var.vid, choices[rng.randrange(len(choices))]))
        return ArchitectureSample(tuple(picks))

    def validate(self, arch: ArchitectureSample) -> list[str]:
        """All domain-membership violations; the architecture is valid iff empty."""
        violations = []
        values = arch.as_dict()
        for var in self.variables():
            choices = self.effective_choices(var)
            if var.vid not in values:
                violations.append(f"{var.vid}: missing (domain {choices})")
            elif values[var.vid] not in choices:
                violations.append(f"{var.vid}: {values[var.vid]!r} not in domain {choices}")
        extras = set(values) - {v.vid for v in self.variables()}
        for vid in sorted(extras):
            violations.append(f"{vid}: not a variable of this space")
        return violations

    def architecture(self, values: Mapping[str, object]) -> ArchitectureSample:
        """Build a sample from a full vid->value mapping (canonical order)."""
        picks = tuple((v.vid, values[v.vid]) for v in self.variables())
        return ArchitectureSample(picks)


@lru_cache(maxsize=64)
def _base_variables(space: SearchSpaceSpec) -> tuple[Variable, ...]:
    out: list[Variable] = []
    for stream in (space.sparse, space.dense):
        for gi, g in enumerate(stream.groups):
            base = f"{stream.name}.g{gi:02d}"
            out.append(Variable(f"{base}.t", tuple(g.temporal_kernels)))
            out.append(Variable(f"{base}.k", tuple(g.spatial_kernels)))
            out.append(Variable(f"{base}.c", g.channels.int_values()))
            out.append(Variable(f"{base}.e", g.expansion.values()))
    for loc in space.fusion_locations:
        out.append(Variable(f"fusion.g{loc:02d}", tuple(space.fusion_ops)))
    for name, locs in (("sparse", space.sparse_attention), ("dense", space.dense_attention)):
        for loc in locs:
            out.append(Variable(f"attn.{name}.g{loc:02d}", (0, 1)))
    return tuple(out)


@lru_cache(maxsize=64)
def _variable_index(space: SearchSpaceSpec) -> dict[str, Variable]:
    return {v.vid: v for v in _base_variables(space)}


# -- default space ------------------------------------------------------------

# (stage, repeats, spatial stride of first block, channel grid (lo, hi, step))
_SPARSE_LAYOUT = (
    (1, 1, 2, (32, 48, 8)),
    (1, 2, 1, (32, 48, 8)),
    (2, 1, 2, (64, 88, 8)),
    (2, 4, 1, (64, 88, 8)),
    (3, 1, 2, (128, 176, 16)),
    (3, 3, 1, (128, 176, 16)),
    (3, 3, 1, (128, 176, 16)),
    (3, 4, 1, (128, 176, 16)),
    (4, 1, 2, (248, 344, 24)),
    (4, 3, 1, (248, 344, 24)),
    (4, 3, 1, (248, 344, 24)),
)
_DENSE_LAYOUT = (
    (1, 1, 2, (8, 8, 8)),
    (1, 2, 1, (8, 16, 8)),
    (2, 1, 2, (8, 24, 8)),
    (2, 4, 1, (8, 24, 8)),
    (3, 1, 2, (16, 32, 8)),
    (3, 3, 1, (16, 32, 8)),
    (3, 3, 1, (16, 32, 8)),
    (3, 4, 1, (16, 32, 8)),
    (4, 1, 2, (32, 56, 8)),
    (4, 3, 1, (32, 56, 8)),
    (4, 3, 1, (32, 56, 8)),
)
_EXPANSION_GRID = (Fraction(3, 2), Fraction(6), Fraction(3, 4))
_SPARSE_STEM_CHANNELS = 24
_DENSE_STEM_CHANNELS = 8
_ATTENTION_PER_STREAM = 6


def _make_groups(layout) -> tuple[BlockGroupSpec, ...]:
    expansion = ChoiceRange(*_EXPANSION_GRID)
    return tuple(
        BlockGroupSpec(
            stage=stage,
            repeats=n,
            spatial_stride=s,
            channels=ChoiceRange(*grid),
            expansion=expansion,
        )
        for stage, n, s, grid in layout
    )


def _uniform_pick(count: int, available: int) -> tuple[int, ...]:
    """Evenly spread `count` indices over 0..available-1 (nearest-integer rule)."""
    if count > available:
        raise SpaceError(f"cannot pick {count} locations from {available}")
    if count == 1:
        return (0,)
    picks = []
    for i in range(count):
        pos = Fraction(i * (available - 1), count - 1)
        picks.append(int(pos + Fraction(1, 2)))
    if len(set(picks)) != count:
        raise SpaceError("attention location rule produced duplicates")
    return tuple(picks)


def _attention_candidates(groups: Sequence[BlockGroupSpec], per_stream: int) -> tuple[int, ...]:
    later = [gi for gi, g in enumerate(groups) if g.stage >= 2]
    inner = _uniform_pick(per_stream, len(later))
    return tuple(later[i] for i in inner)


def build_default_space(
    sparse_frames: int = 4,
    dense_frames: int = 32,
    input_spatial: int = 224,
    *,
    fusion_placement: str = "group_ends",
    fusion_ops: tuple[FusionOp, ...] = DEFAULT_FUSION_OPS,
    attention_per_stream: int = _ATTENTION_PER_STREAM,
) -> SearchSpaceSpec:
    """The default two-stream space.

    fusion_placement: "group_ends" puts one fusion tap at the end of every
    sparse block group (11 taps); "stage_ends" keeps only the last group of
    each stage (4 taps).
    """
    if sparse_frames < 1 or dense_frames < 1:
        raise SpaceError("frame counts must be positive")
    if dense_frames % sparse_frames != 0:
        raise SpaceError(
            f"dense frames {dense_frames} must be a multiple of sparse frames {sparse_frames}"
        )
    if input_spatial < 32:
        raise SpaceError(f"input spatial size must be >= 32, got {input_spatial}")

    sparse = StreamSpec("sparse", sparse_frames, input_spatial, _SPARSE_STEM_CHANNELS,
                        _make_groups(_SPARSE_LAYOUT))
    dense = StreamSpec("dense", dense_frames, input_spatial, _DENSE_STEM_CHANNELS,
                       _make_groups(_DENSE_LAYOUT))

    if fusion_placement == "group_ends":
        fusion_locations = tuple(range(len(sparse.groups)))
    elif fusion_placement == "stage_ends":
        fusion_locations = tuple(
            gi for gi, g in enumerate(sparse.groups)
            if gi + 1 == len(sparse.groups) or sparse.groups[gi + 1].stage != g.stage
        )
    else:
        raise SpaceError(f"unknown fusion placement {fusion_placement!r}")

    return SearchSpaceSpec(
        sparse=sparse,
        dense=dense,
        fusion_locations=fusion_locations,
        fusion_ops=tuple(fusion_ops),
        sparse_attention=_attention_candidates(sparse.groups, attention_per_stream),
        dense_attention=_attention_candidates(dense.groups, attention_per_stream),
    )


def step_variable_ids(space: SearchSpaceSpec, step_id: str) -> tuple[str, ...]:
    """Variable ids owned by a progressive-search step."""
    vids = [v.vid for v in space.variables()]
    if step_id == "sparse":
        return tuple(v for v in vids if v.startswith("sparse."))
    if step_id == "dense_fusion":
        return tuple(v for v in vids if v.startswith(("dense.", "fusion.")))
    if step_id == "attention":
        return tuple(v for v in vids if v.startswith("attn."))
    if step_id == "one_step":
        return tuple(vids)
    raise SpaceError(f"unknown step id {step_id!r}")
