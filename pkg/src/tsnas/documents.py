"""Canonical JSON documents: spaces, architectures, and their fingerprints.

All JSON emitted by the engine is canonical -- sorted keys, compact
separators, rationals as {"num", "den"} pairs -- so documents round-trip
bit-exactly and goldens diff cleanly.  An architecture document carries the
fingerprint of the space it was sampled from; loading it against a different
space is an error.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from typing import Any, Mapping

from .space import (
    ArchitectureSample,
    BlockGroupSpec,
    ChoiceRange,
    FusionOp,
    SearchSpaceSpec,
    SpaceError,
    StreamSpec,
)

__all__ = [
    "DocumentError",
    "canonical_json",
    "space_to_json",
    "space_from_json",
    "space_fingerprint",
    "arch_to_document",
    "arch_from_document",
    "arch_table_key",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class DocumentError(ValueError):
    """Malformed or mismatched document."""


def _frac_json(x: Fraction) -> dict:
    return {"num": x.numerator, "den": x.denominator}


def _frac_parse(obj) -> Fraction:
    try:
        return Fraction(obj["num"], obj["den"])
    except (TypeError, KeyError, ZeroDivisionError) as exc:
        raise DocumentError(f"bad rational {obj!r}") from exc


def canonical_json(obj: Any) -> str:
    """Canonical serialization: sorted keys, compact, ASCII, newline-free."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


# -- space ---------------------------------------------------------------------


def _range_json(r: ChoiceRange) -> dict:
    return {"lo": _frac_json(r.lo), "hi": _frac_json(r.hi), "step": _frac_json(r.step)}


def _range_parse(obj) -> ChoiceRange:
    return ChoiceRange(_frac_parse(obj["lo"]), _frac_parse(obj["hi"]), _frac_parse(obj["step"]))


def _group_json(g: BlockGroupSpec) -> dict:
    return {
        "stage": g.stage,
        "repeats": g.repeats,
        "spatial_stride": g.spatial_stride,
        "channels": _range_json(g.channels),
        "expansion": _range_json(g.expansion),
        "temporal_kernels": list(g.temporal_kernels),
        "spatial_kernels": list(g.spatial_kernels),
    }


def _group_parse(obj) -> BlockGroupSpec:
    return BlockGroupSpec(
        stage=obj["stage"],
        repeats=obj["repeats"],
        spatial_stride=obj["spatial_stride"],
        channels=_range_parse(obj["channels"]),
        expansion=_range_parse(obj["expansion"]),
        temporal_kernels=tuple(obj["temporal_kernels"]),
        spatial_kernels=tuple(obj["spatial_kernels"]),
    )


def _stream_json(s: StreamSpec) -> dict:
    return {
        "name": s.name,
        "frames": s.frames,
        "input_spatial": s.input_spatial,
        "stem_channels": s.stem_channels,
        "groups": [_group_json(g) for g in s.groups],
    }


def _stream_parse(obj) -> StreamSpec:
    return StreamSpec(
        name=obj["name"],
        frames=obj["frames"],
        input_spatial=obj["input_spatial"],
        stem_channels=obj["stem_channels"],
        groups=tuple(_group_parse(g) for g in obj["groups"]),
    )


def _fusion_op_json(op: FusionOp) -> dict:
    out: dict[str, Any] = {"kind": op.kind}
    if op.kind == "time_strided_conv":
        out["tau"] = op.tau
        out["gamma"] = op.gamma
    return out


def _fusion_op_parse(obj) -> FusionOp:
    kind = obj["kind"]
    if kind == "time_strided_conv":
        return FusionOp(kind, tau=obj["tau"], gamma=obj["gamma"])
    return FusionOp(kind)


def _value_json(value) -> Any:
    if isinstance(value, Fraction):
        return _frac_json(value)
    if isinstance(value, FusionOp):
        return _fusion_op_json(value)
    if isinstance(value, int):
        return value
    raise DocumentError(f"unserializable choice value {value!r}")


def _value_parse(obj) -> Any:
    if isinstance(obj, dict):
        if "kind" in obj:
            return _fusion_op_parse(obj)
        return _frac_parse(obj)
    if isinstance(obj, int):
        return obj
    raise DocumentError(f"bad choice value {obj!r}")


def space_to_json(space: SearchSpaceSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "sparse": _stream_json(space.sparse),
        "dense": _stream_json(space.dense),
        "fusion_locations": list(space.fusion_locations),
        "fusion_ops": [_fusion_op_json(op) for op in space.fusion_ops],
        "sparse_attention": list(space.sparse_attention),
        "dense_attention": list(space.dense_attention),
        "frozen": {vid: _value_json(v) for vid, v in space.frozen},
    }


def space_from_json(obj: Mapping) -> SearchSpaceSpec:
    try:
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise DocumentError(f"unsupported schema_version {obj.get('schema_version')!r}")
        space = SearchSpaceSpec(
            sparse=_stream_parse(obj["sparse"]),
            dense=_stream_parse(obj["dense"]),
            fusion_locations=tuple(obj["fusion_locations"]),
            fusion_ops=tuple(_fusion_op_parse(op) for op in obj["fusion_ops"]),
            sparse_attention=tuple(obj["sparse_attention"]),
            dense_attention=tuple(obj["dense_attention"]),
        )
        frozen = {vid: _value_parse(v) for vid, v in obj.get("frozen", {}).items()}
        return space.restrict(frozen) if frozen else space
    except DocumentError:
        raise
    except (KeyError, TypeError, SpaceError) as exc:
        raise DocumentError(f"malformed space document: {exc}") from exc


def space_fingerprint(space: SearchSpaceSpec) -> str:
    payload = canonical_json(space_to_json(space)).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# -- architectures ---------------------------------------------------------------


def arch_to_document(
    space: SearchSpaceSpec,
    arch: ArchitectureSample,
    *,
    streams: tuple[str, ...] = ("sparse", "dense"),
    cost_summary: Mapping[str, int] | None = None,
) -> dict:
    """Architecture document; single-stream scope drops the other stream's
    records along with fusion records."""
    backbone = []
    for stream in streams:
        spec = space.stream(stream)
        for gi, g in enumerate(spec.groups):
            t, k, c, e = arch.group_choice(stream, gi)
            backbone.append(
                {
                    "stream": stream,
                    "stage": g.stage,
                    "group": gi,
                    "t": t,
                    "k": k,
                    "c_out": c,
                    "e": _frac_json(e),
                }
            )
    fusion = []
    if "sparse" in streams and "dense" in streams:
        for loc in space.fusion_locations:
            op = arch[f"fusion.g{loc:02d}"]
            fusion.append({"location": loc, "op": _fusion_op_json(op)})
    attention = []
    for stream in streams:
        for loc in space.attention_locations(stream):
            attention.append(
                {
                    "stream": stream,
                    "location": loc,
                    "enabled": arch[f"attn.{stream}.g{loc:02d}"],
                }
            )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "space_fingerprint": space_fingerprint(space),
        "streams": list(streams),
        "backbone": backbone,
        "fusion": fusion,
        "attention": attention,
    }
    if cost_summary is not None:
        doc["cost"] = dict(cost_summary)
    return doc


def arch_from_document(space: SearchSpaceSpec, doc: Mapping) -> ArchitectureSample:
    """Rebuild a full sample from a document; frozen values fill variables the
    document does not carry (single-stream documents)."""
    try:
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DocumentError(f"unsupported schema_version {doc.get('schema_version')!r}")
        fp = space_fingerprint(space)
        if doc.get("space_fingerprint") != fp:
            raise DocumentError(
                f"document fingerprint {doc.get('space_fingerprint')!r} does not match space {fp}"
            )
        values: dict[str, object] = dict(space.frozen)
        for rec in doc["backbone"]:
            base = f"{rec['stream']}.g{rec['group']:02d}"
            values[f"{base}.t"] = rec["t"]
            values[f"{base}.k"] = rec["k"]
            values[f"{base}.c"] = rec["c_out"]
            values[f"{base}.e"] = _frac_parse(rec["e"])
        for rec in doc["fusion"]:
            values[f"fusion.g{rec['location']:02d}"] = _fusion_op_parse(rec["op"])
        for rec in doc["attention"]:
            values[f"attn.{rec['stream']}.g{rec['location']:02d}"] = rec["enabled"]
        missing = [v.vid for v in space.variables() if v.vid not in values]
        if missing:
            raise DocumentError(f"document leaves variables unset: {missing[:4]}...")
        arch = space.architecture(values)
    except DocumentError:
        raise
    except (KeyError, TypeError) as exc:
        raise DocumentError(f"malformed architecture document: missing {exc}") from exc
    violations = space.validate(arch)
    if violations:
        raise DocumentError("invalid architecture: " + "; ".join(violations[:4]))
    return arch


def arch_table_key(doc: Mapping) -> str:
    """Canonical hash of the score-affecting fields of an architecture document.

    Key order and record order are normalized, so semantically equal
    documents hash identically; derived cost summaries are excluded.
    """
    backbone = sorted(
        (dict(r) for r in doc.get("backbone", ())),
        key=lambda r: (r["stream"], r["group"]),
    )
    fusion = sorted((dict(r) for r in doc.get("fusion", ())), key=lambda r: r["location"])
    attention = sorted(
        (dict(r) for r in doc.get("attention", ())),
        key=lambda r: (r["stream"], r["location"]),
    )
    payload = canonical_json(
        {
            "backbone": backbone,
            "fusion": fusion,
            "attention": attention,
            "streams": sorted(doc.get("streams", ())),
        }
    )
    return hashlib.sha256(payload.encode()).hexdigest()
