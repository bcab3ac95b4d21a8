"""Analytic FLOPs and parameter accounting.

Conventions (applied consistently, documented once here):
  * 1 FLOP = 1 multiply-accumulate, counted once.
  * Convolutions use "same" padding; output extent per axis is ceil(in/stride);
    padded positions cost the full kernel volume (standard analytic counting).
  * Biases, batch-norm and activations contribute neither FLOPs nor params.
  * The expanded width inside a bottleneck block is round-to-nearest-multiple-
    of-8 of (expansion_rate * input_channels), half rounding up, floor 8.
  * The stem is a spatial 1x3x3 stride-2 conv followed by a channel-wise
    temporal 3x1x1 conv.
  * At a group end, attention (when enabled) applies to the stream's own
    features first, then fusion concatenates dense features onto the sparse
    stream; the widened tensor feeds the next sparse block (and the head,
    for a tap on the last group).
  * Head: per-stream global average pool, concat, projection to 2048, linear
    to the class count.

All arithmetic is exact (Python ints / Fractions); reports are additive by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .space import (
    ArchitectureSample,
    FusionOp,
    SearchSpaceSpec,
    SpaceError,
    StreamSpec,
    frac,
)

__all__ = [
    "CostError",
    "InfeasibleTargetError",
    "TensorShape",
    "BlockCost",
    "CostReport",
    "conv3d_cost",
    "mbconv3d_cost",
    "fusion_cost",
    "glore_cost",
    "architecture_cost",
    "manual_two_stream",
    "round_to_multiple",
    "HEAD_WIDTH",
    "NUM_CLASSES",
]

HEAD_WIDTH = 2048
NUM_CLASSES = 400

GLORE_MID_RATIO = Fraction(1, 4)
GLORE_NODE_RATIO = Fraction(1, 4)


class CostError(ValueError):
    """Shape or divisibility violation in cost accounting."""


class InfeasibleTargetError(CostError):
    """A FLOPs target outside the interval reachable by the channel grids."""


@dataclass(frozen=True)
class TensorShape:
    c: int
    t: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.c, self.t, self.h, self.w) < 1:
            raise CostError(f"non-positive tensor shape {self}")

    @property
    def positions(self) -> int:
        return self.t * self.h * self.w


@dataclass(frozen=True)
class BlockCost:
    block_id: str
    stream: str  # sparse | dense | both
    stage: int   # 0 = stem, 1..4 = backbone, 5 = head
    flops: int
    params: int
    out: TensorShape


@dataclass(frozen=True)
class CostReport:
    """FLOPs/params totals with a per-block breakdown; totals are exact sums."""

    flops: int
    params: int
    views: int
    breakdown: tuple[BlockCost, ...]

    @property
    def total_flops(self) -> int:
        return self.flops * self.views

    def stream_flops(self, stream: str) -> int:
        return sum(b.flops for b in self.breakdown if b.stream == stream)

    def sparse_fraction(self) -> Fraction:
        return Fraction(self.stream_flops("sparse"), self.flops)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def round_to_multiple(value: Fraction | int, multiple: int) -> int:
    """Nearest multiple (ties up), never below `multiple` itself."""
    if isinstance(value, int):
        num, den = value, 1
    else:
        v = frac(value)
        num, den = v.numerator, v.denominator
    # floor(value/multiple + 1/2) in exact integer arithmetic
    n = (2 * num + den * multiple) // (2 * den * multiple)
    return max(multiple, n * multiple)


def conv3d_cost(
    in_shape: TensorShape,
    c_out: int,
    kernel: tuple[int, int, int],
    stride: tuple[int, int, int] | int = 1,
    groups: int = 1,
) -> tuple[int, int, TensorShape]:
    """Cost of a bias-free 3D convolution with same padding."""
    if isinstance(stride, int):
        stride = (stride, stride, stride)
    st, sh, sw = stride
    kt, kh, kw = kernel
    if min(st, sh, sw) < 1:
        raise CostError(f"strides must be >= 1, got {stride}")
    if min(kt, kh, kw) < 1:
        raise CostError(f"kernel dims must be >= 1, got {kernel}")
    if groups < 1 or in_shape.c % groups or c_out % groups:
        raise CostError(
            f"channels in={in_shape.c} out={c_out} not divisible by groups={groups}"
        )
    out = TensorShape(
        c=c_out,
        t=_ceil_div(in_shape.t, st),
        h=_ceil_div(in_shape.h, sh),
        w=_ceil_div(in_shape.w, sw),
    )
    weights = c_out * (in_shape.c // groups) * kt * kh * kw
    flops = out.positions * weights
    return flops, weights, out


def mbconv3d_cost(
    in_shape: TensorShape,
    choice: tuple[int, int, int, Fraction],
    stride: int = 1,
) -> tuple[int, int, TensorShape]:
    """Mobile inverted bottleneck in 3D: expand 1x1x1, depthwise t x k x k
    (spatial stride only), project 1x1x1.  Residual adds are free."""
    t, k, c_out, e = choice
    if stride not in (1, 2):
        raise CostError(f"block stride must be 1 or 2, got {stride}")
    c_exp = round_to_multiple(frac(e) * in_shape.c, 8)
    f1, p1, x = conv3d_cost(in_shape, c_exp, (1, 1, 1))
    f2, p2, x = conv3d_cost(x, c_exp, (t, k, k), (1, stride, stride), groups=c_exp)
    f3, p3, x = conv3d_cost(x, c_out, (1, 1, 1))
    return f1 + f2 + f3, p1 + p2 + p3, x


def fusion_cost(
    sparse_in: TensorShape,
    dense_in: TensorShape,
    op: FusionOp,
) -> tuple[int, int, TensorShape]:
    """Dense-to-sparse lateral fusion; returns the widened sparse shape."""
    if op.kind == "none":
        return 0, 0, sparse_in
    if dense_in.t % sparse_in.t:
        raise CostError(
            f"dense frames {dense_in.t} not a multiple of sparse frames {sparse_in.t}"
        )
    if (dense_in.h, dense_in.w) != (sparse_in.h, sparse_in.w):
        raise CostError(
            f"spatial mismatch between streams: {dense_in} vs {sparse_in}"
        )
    stride_t = dense_in.t // sparse_in.t
    if op.kind == "time_strided_sample":
        out = TensorShape(sparse_in.c + dense_in.c, sparse_in.t, sparse_in.h, sparse_in.w)
        return 0, 0, out
    # time_strided_conv
    flops, params, conv_out = conv3d_cost(
        dense_in, op.gamma * dense_in.c, (op.tau, 1, 1), (stride_t, 1, 1)
    )
    if conv_out.t != sparse_in.t:
        raise CostError(f"fusion conv produced {conv_out.t} frames, expected {sparse_in.t}")
    out = TensorShape(sparse_in.c + conv_out.c, sparse_in.t, sparse_in.h, sparse_in.w)
    return flops, params, out


def _glore_width(c: int, ratio: Fraction) -> int:
    v = c * frac(ratio)
    if v.denominator == 1:
        return max(1, int(v))
    return round_to_multiple(v, 8)


def glore_cost(
    in_shape: TensorShape,
    c_mid_ratio: Fraction = GLORE_MID_RATIO,
    node_ratio: Fraction = GLORE_NODE_RATIO,
) -> tuple[int, int, TensorShape]:
    """Global-reasoning attention block; shape-preserving residual unit.

    Five costed parts: channel-reduce conv, node-projection conv, graph
    reasoning over the position-collapsed node matrix (adjacency then state
    update), reverse projection back to positions, channel-expand conv.
    """
    c = in_shape.c
    c_mid = _glore_width(c, c_mid_ratio)
    n = _glore_width(c, node_ratio)
    L = in_shape.positions
    reduce_f, reduce_p = L * c * c_mid, c * c_mid
    nodes_f, nodes_p = L * c * n, c * n
    graph_f = n * n * c_mid + n * c_mid * c_mid
    graph_p = n * n + c_mid * c_mid
    reverse_f = L * n * c_mid
    expand_f, expand_p = L * c_mid * c, c_mid * c
    flops = reduce_f + nodes_f + graph_f + reverse_f + expand_f
    params = reduce_p + nodes_p + graph_p + expand_p
    return flops, params, in_shape


def _stem_blocks(stream: StreamSpec, spatial: int) -> tuple[list[BlockCost], TensorShape]:
    x = TensorShape(3, stream.frames, spatial, spatial)
    f1, p1, x = conv3d_cost(x, stream.stem_channels, (1, 3, 3), (1, 2, 2))
    b1 = BlockCost(f"{stream.name}.stem.spatial", stream.name, 0, f1, p1, x)
    f2, p2, x = conv3d_cost(x, stream.stem_channels, (3, 1, 1), 1, groups=stream.stem_channels)
    b2 = BlockCost(f"{stream.name}.stem.temporal", stream.name, 0, f2, p2, x)
    return [b1, b2], x


def _stream_blocks(
    space: SearchSpaceSpec,
    arch: ArchitectureSample,
    stream: StreamSpec,
    spatial: int,
    dense_taps: dict[int, TensorShape] | None,
    include_fusion: bool,
) -> tuple[list[BlockCost], TensorShape, dict[int, TensorShape]]:
    """Thread one stream; for the sparse stream, splice in fusion taps."""
    blocks, x = _stem_blocks(stream, spatial)
    taps: dict[int, TensorShape] = {}
    attn_locs = set(space.attention_locations(stream.name))
    for gi, g in enumerate(stream.groups):
        t, k, c_out, e = arch.group_choice(stream.name, gi)
        for bi in range(g.repeats):
            stride = g.spatial_stride if bi == 0 else 1
            f, p, x = mbconv3d_cost(x, (t, k, c_out, e), stride)
            blocks.append(
                BlockCost(f"{stream.name}.g{gi:02d}.b{bi}", stream.name, g.stage, f, p, x)
            )
        if gi in attn_locs and arch[f"attn.{stream.name}.g{gi:02d}"]:
            f, p, x = glore_cost(x)
            blocks.append(BlockCost(f"{stream.name}.g{gi:02d}.attn", stream.name, g.stage, f, p, x))
        taps[gi] = x
        if include_fusion and gi in space.fusion_locations:
            op = arch[f"fusion.g{gi:02d}"]
            assert dense_taps is not None
            f, p, x = fusion_cost(x, dense_taps[gi], op)
            if op.kind != "none":
                blocks.append(BlockCost(f"fusion.g{gi:02d}", "both", g.stage, f, p, x))
    return blocks, x, taps


def _head_blocks(pooled_channels: int, num_classes: int) -> list[BlockCost]:
    vec = TensorShape(pooled_channels, 1, 1, 1)
    out: list[BlockCost] = [BlockCost("head.pool", "both", 5, 0, 0, vec)]
    f1, p1, x = conv3d_cost(vec, HEAD_WIDTH, (1, 1, 1))
    out.append(BlockCost("head.proj", "both", 5, f1, p1, x))
    f2, p2, x = conv3d_cost(x, num_classes, (1, 1, 1))
    out.append(BlockCost("head.fc", "both", 5, f2, p2, x))
    return out


def architecture_cost(
    space: SearchSpaceSpec,
    arch: ArchitectureSample,
    input_spatial: int | None = None,
    views: int = 1,
    *,
    streams: tuple[str, ...] = ("sparse", "dense"),
    num_classes: int = NUM_CLASSES,
    _trusted: bool = False,
) -> CostReport:
    """Per-view cost of a full architecture (or of a single stream).

    With streams=("sparse",) the model is the sparse stream alone with its
    own head and no fusion taps.
    """
    if not _trusted:
        violations = space.validate(arch)
        if violations:
            raise SpaceError("invalid architecture: " + "; ".join(violations))
    if views < 1:
        raise CostError(f"views must be >= 1, got {views}")
    spatial = space.sparse.input_spatial if input_spatial is None else input_spatial
    if spatial < 32:
        raise CostError(f"input spatial size must be >= 32, got {spatial}")

    blocks: list[BlockCost] = []
    pooled = 0
    dense_taps: dict[int, TensorShape] | None = None
    if "dense" in streams:
        dense_blocks, dense_out, dense_taps = _stream_blocks(
            space, arch, space.dense, spatial, None, include_fusion=False
        )
        blocks.extend(dense_blocks)
        pooled += dense_out.c
    if "sparse" in streams:
        fuse = "dense" in streams
        sparse_blocks, sparse_out, _ = _stream_blocks(
            space, arch, space.sparse, spatial, dense_taps, include_fusion=fuse
        )
        blocks.extend(sparse_blocks)
        pooled += sparse_out.c
    if not blocks:
        raise CostError("no streams selected")
    blocks.extend(_head_blocks(pooled, num_classes))

    return CostReport(
        flops=sum(b.flops for b in blocks),
        params=sum(b.params for b in blocks),
        views=views,
        breakdown=tuple(blocks),
    )


# -- manual two-stream baseline -------------------------------------------------


def _snap_channel(g_channels, m: Fraction) -> int:
    values = g_channels.int_values()
    if len(values) == 1:
        return values[0]
    lo, hi = values[0], values[-1]
    target = lo + m * (hi - lo)
    idx = int((frac(target) - lo) / (values[1] - values[0]) + Fraction(1, 2))
    return values[max(0, min(len(values) - 1, idx))]


def _channel_profiles(stream: StreamSpec) -> list[tuple[int, ...]]:
    """All channel assignments reachable by one multiplier, low to high."""
    profiles: list[tuple[int, ...]] = []
    for i in range(401):
        m = Fraction(i, 400)
        profile = tuple(_snap_channel(g.channels, m) for g in stream.groups)
        if not profiles or profiles[-1] != profile:
            profiles.append(profile)
    return profiles


def _expansion_candidates(groups, base_rate=Fraction(9, 4), count: int = 2) -> tuple:
    """Per-stream uniform expansion candidates: the grid values closest to
    the single-stream family's 9/4 rate (mid-grid rates price the family out
    of the ~2 GFLOPs regime entirely)."""
    values = groups[0].expansion.values()
    ranked = sorted(values, key=lambda v: (abs(v - base_rate), v))
    return tuple(sorted(ranked[:count]))


def _manual_build(space, sparse_channels, dense_channels, e_sparse, e_dense,
                  ts_conv, none_op, stage_ends) -> ArchitectureSample:
    values: dict[str, object] = {}
    for stream, channels, e in (
        ("sparse", sparse_channels, e_sparse),
        ("dense", dense_channels, e_dense),
    ):
        for gi, g in enumerate(space.stream(stream).groups):
            base = f"{stream}.g{gi:02d}"
            values[f"{base}.t"] = 3 if 3 in g.temporal_kernels else g.temporal_kernels[0]
            values[f"{base}.k"] = 3 if 3 in g.spatial_kernels else g.spatial_kernels[0]
            values[f"{base}.c"] = channels[gi]
            values[f"{base}.e"] = e if e in g.expansion else g.expansion.values()[0]
    for loc in space.fusion_locations:
        values[f"fusion.g{loc:02d}"] = ts_conv if loc in stage_ends else none_op
    for stream in ("sparse", "dense"):
        for loc in space.attention_locations(stream):
            values[f"attn.{stream}.g{loc:02d}"] = 0
    return space.architecture(values)


@lru_cache(maxsize=8)
def _manual_cost_table(space: SearchSpaceSpec, spatial: int | None, num_classes: int):
    """All (channel profile pair, expansion pair) candidates with their
    whole-model flops and sparse-stream flops; shared across target queries."""
    stage_ends = tuple(
        gi for gi, g in enumerate(space.sparse.groups)
        if gi + 1 == len(space.sparse.groups) or space.sparse.groups[gi + 1].stage != g.stage
    )
    ts_conv = next((op for op in space.fusion_ops if op.kind == "time_strided_conv"), None)
    if ts_conv is None:
        raise CostError("space has no time_strided_conv fusion op")
    none_op = next((op for op in space.fusion_ops if op.kind == "none"), None)
    if none_op is None:
        raise CostError("space has no 'none' fusion op")

    table = []
    for e_s in _expansion_candidates(space.sparse.groups):
        for e_d in _expansion_candidates(space.dense.groups):
            for sp in _channel_profiles(space.sparse):
                for dp in _channel_profiles(space.dense):
                    arch = _manual_build(space, sp, dp, e_s, e_d, ts_conv, none_op, stage_ends)
                    report = architecture_cost(
                        space, arch, spatial, num_classes=num_classes, _trusted=True
                    )
                    table.append((report.flops, report.stream_flops("sparse"), arch))
    return tuple(table)


def manual_two_stream(
    space: SearchSpaceSpec,
    total_flops_target: int,
    sparse_ratio,
    *,
    input_spatial: int | None = None,
    num_classes: int = NUM_CLASSES,
) -> ArchitectureSample:
    """Uniform hand-designed two-stream baseline hitting a FLOPs budget.

    Every block uses temporal kernel 3 and spatial kernel 3; each stream uses
    one constant expansion rate (chosen from the grid values nearest 9/4) and
    one channel multiplier snapped to the grids; time-strided-conv fusion
    sits at stage ends; attention is off.  The multiplier/expansion pair is
    chosen so the sparse stream takes `sparse_ratio` of total per-view FLOPs
    and the total lands on `total_flops_target`.
    """
    p = frac(sparse_ratio)
    if not 0 < p < 1:
        raise CostError(f"sparse ratio must be in (0, 1), got {sparse_ratio}")
    if total_flops_target <= 0:
        raise CostError("FLOPs target must be positive")

    table = _manual_cost_table(space, input_spatial, num_classes)
    totals = [flops for flops, _, _ in table]
    if not min(totals) <= total_flops_target <= max(totals):
        raise InfeasibleTargetError(
            f"target {total_flops_target} outside reachable interval "
            f"[{min(totals)}, {max(totals)}]"
        )
    best = None
    for idx, (flops, sparse_flops, arch) in enumerate(table):
        frac_err = abs(Fraction(sparse_flops, flops) - p)
        total_err = abs(Fraction(flops - total_flops_target, total_flops_target))
        score = max(frac_err / Fraction(1, 50), total_err / Fraction(1, 20))
        entry = (score, total_err, frac_err, idx)
        if best is None or entry[:3] < best[:3] or (entry[:3] == best[:3] and idx < best[3]):
            best = entry
    assert best is not None
    return table[best[3]][2]
