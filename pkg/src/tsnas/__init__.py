"""Cost-aware architecture search engine for two-stream video models."""

from .space import (
    ArchitectureSample,
    BlockGroupSpec,
    ChoiceRange,
    FusionOp,
    SearchSpaceSpec,
    SpaceError,
    StreamSpec,
    Variable,
    build_default_space,
    frac,
)
from .cost import (
    CostError,
    CostReport,
    InfeasibleTargetError,
    TensorShape,
    architecture_cost,
    conv3d_cost,
    fusion_cost,
    glore_cost,
    manual_two_stream,
    mbconv3d_cost,
)
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
from .evaluators import (
    Evaluator,
    EvaluatorError,
    ProtocolEvaluator,
    SyntheticEvaluator,
    SyntheticObjective,
    TableEvaluator,
)
from .progressive import (
    GFLOP,
    SearchRun,
    StepPlan,
    default_progressive_plans,
    run_one_step,
    run_progressive,
    run_step,
)
from .documents import (
    DocumentError,
    arch_from_document,
    arch_to_document,
    canonical_json,
    space_fingerprint,
    space_from_json,
    space_to_json,
)

__version__ = "0.1.0"
