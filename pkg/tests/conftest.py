import itertools
import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tsnas import documents
from tsnas.space import (
    BlockGroupSpec,
    ChoiceRange,
    DEFAULT_FUSION_OPS,
    SearchSpaceSpec,
    StreamSpec,
    build_default_space,
)


def make_tiny_space() -> SearchSpaceSpec:
    """Small two-stream space (6144 archs, 13 effective variables) used by all
    enumeration-backed tests; exercises singleton domains and every variable
    kind."""
    e2 = ChoiceRange(Fraction(3, 2), Fraction(9, 4), Fraction(3, 4))
    e1 = ChoiceRange(Fraction(3, 2), Fraction(3, 2), Fraction(3, 4))

    def grp(stage, stride, clo, chi):
        return BlockGroupSpec(
            stage, 1, stride, ChoiceRange(clo, chi, 8),
            e2 if stage == 1 else e1,
            temporal_kernels=(1, 3), spatial_kernels=(3,),
        )

    sparse = StreamSpec("sparse", 4, 32, 8, (grp(1, 2, 8, 16), grp(2, 2, 16, 24)))
    dense = StreamSpec("dense", 8, 32, 8, (grp(1, 2, 8, 8), grp(2, 2, 8, 16)))
    return SearchSpaceSpec(
        sparse=sparse,
        dense=dense,
        fusion_locations=(1,),
        fusion_ops=DEFAULT_FUSION_OPS,
        sparse_attention=(1,),
        dense_attention=(1,),
    )


def enumerate_archs(space):
    vars_ = space.variables()
    domains = [space.effective_choices(v) for v in vars_]
    vids = [v.vid for v in vars_]
    for combo in itertools.product(*domains):
        yield space.architecture(dict(zip(vids, combo)))


def brute_force_best(space, evaluator, step="one_step"):
    """Exhaustive optimum of an evaluator over a small space."""
    best = None
    for arch in enumerate_archs(space):
        doc = documents.arch_to_document(space, arch)
        score = evaluator.evaluate(doc, step)
        if best is None or score > best[0]:
            best = (score, arch)
    return best


@pytest.fixture(scope="session")
def tiny_space():
    return make_tiny_space()


@pytest.fixture(scope="session")
def default_space():
    return build_default_space()
