"""Spectral neuro-symbolic reasoning over weighted knowledge graphs.

The library filters belief signals in the Laplacian eigenbasis with
learnable Chebyshev polynomial filters and spectral rule templates, then
thresholds the result into predicates for a forward-chaining Horn-clause
engine. Includes an analytic-gradient Adam trainer, synthetic reasoning
task generators, and a benchmarking/evaluation harness; the ``spectral-nsr``
command exposes all of it.
"""

from .errors import NumericalError, SpectralNsrError, ValidationError
from .graph import (
    LaplacianMatrix,
    NodeEmbedding,
    NodeMeta,
    ReasoningGraph,
    build_graph,
    combinatorial_laplacian,
    normalized_laplacian,
    similarity_adjacency,
)
from .harness import EvalReport, SyntheticTask, TaskSplits, evaluate, gen_dataset, gen_kinship, gen_transitive, scaling_benchmark
from .pipeline import Pipeline, PipelineConfig, PipelineOutput, run_pipeline
from .rules import RuleOperator, SpectralRule, apply_rule, builtin_template, compose_rules, rule_operator
from .spectral import (
    BandGate,
    ChebyshevFilter,
    FrequencyResponse,
    GraphSignal,
    SpectralBasis,
    band_gate_combine,
    chebyshev_filter,
    eigendecompose,
    estimate_lambda_max,
    exact_filter,
    fit_chebyshev,
    gft,
    igft,
    sample_response,
)
from .symbolic import (
    KnowledgeBase,
    PredicateSet,
    ProofTrace,
    ThresholdConfig,
    bind_predicates,
    detect_conflicts,
    forward_chain,
    hard_threshold,
    soft_threshold,
)
from .trainer import Checkpoint, TrainRun, adam_step, train

__all__ = [
    "SpectralNsrError",
    "ValidationError",
    "NumericalError",
    "ReasoningGraph",
    "NodeMeta",
    "NodeEmbedding",
    "LaplacianMatrix",
    "build_graph",
    "similarity_adjacency",
    "combinatorial_laplacian",
    "normalized_laplacian",
    "SpectralBasis",
    "GraphSignal",
    "FrequencyResponse",
    "ChebyshevFilter",
    "BandGate",
    "eigendecompose",
    "gft",
    "igft",
    "exact_filter",
    "estimate_lambda_max",
    "chebyshev_filter",
    "fit_chebyshev",
    "band_gate_combine",
    "sample_response",
    "SpectralRule",
    "RuleOperator",
    "rule_operator",
    "apply_rule",
    "compose_rules",
    "builtin_template",
    "ThresholdConfig",
    "PredicateSet",
    "KnowledgeBase",
    "ProofTrace",
    "hard_threshold",
    "soft_threshold",
    "bind_predicates",
    "forward_chain",
    "detect_conflicts",
    "Checkpoint",
    "TrainRun",
    "adam_step",
    "train",
    "SyntheticTask",
    "TaskSplits",
    "EvalReport",
    "gen_transitive",
    "gen_kinship",
    "gen_dataset",
    "evaluate",
    "scaling_benchmark",
    "Pipeline",
    "PipelineConfig",
    "PipelineOutput",
    "run_pipeline",
]

__version__ = "0.1.0"
