"""Queueing-based response time analysis for composite service chains.

Models a workflow of services as a tree of control-flow structures over
M/M/1 stations, computes per-task expected response times analytically
under concurrent Poisson task streams, validates the predictions with a
discrete-event simulator, and searches candidate assignments for good
joint plans.
"""

from .errors import (
    ChainlatError,
    IncompleteAssignment,
    InvalidChain,
    InvalidConfig,
    InvalidProbabilities,
    ModelMismatch,
    NoStableAssignment,
    ParseError,
    SearchSpaceTooLarge,
    SemanticError,
    Unstable,
    UnstableModel,
)
from .model import (
    AbstractStep,
    Assignment,
    Branch,
    BranchArm,
    BranchMode,
    CandidateService,
    ChainNode,
    Iteration,
    IterationConvention,
    Parallel,
    Sequence,
    StationKey,
    StationLoad,
    Step,
    StructureFactor,
    Task,
    Violation,
    effective_rates,
    normalized_arm_probs,
    step_table,
    structure_factors,
    tree_step_ids,
    validate_chain,
)
from .analytic import (
    SerializedChain,
    SerializedStep,
    StabilityReport,
    StationStability,
    branch_time,
    iteration_time,
    mm1_wait,
    parallel_time,
    response_times,
    sequential_time,
    serialize,
    stability_check,
    task_response_time,
)
from .simulate import (
    ComparisonReport,
    SimConfig,
    SimReport,
    StationComparison,
    StationSimStats,
    TaskComparison,
    TaskSimStats,
    compare,
    little_check,
    simulate,
)
from .compose import (
    CompositionResult,
    Objective,
    enumerate_assignments,
    optimize_exhaustive,
    search_space_size,
    selfish_baseline,
)
from .document import ChainDocument, DocumentOptions, document_to_json, parse_chain_document

__version__ = "0.1.0"
