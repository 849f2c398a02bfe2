"""Tumor-group assignment for pathology reports.

A six-member ensemble of cheap window classifiers votes on each report; low
consensus, ties, and hard-to-classify groups escalate to an arbiter that is
constrained to choose among the predicted groups plus the configured hard
groups.
"""

from .arbiter import (
    ArbiterPolicy,
    ArbiterVerdict,
    ChatArbiter,
    FallbackKind,
    PromptTemplate,
    RuleArbiter,
    build_prompt,
    parse_verdict,
)
from .backends import (
    LexiconClassifier,
    RemoteBackend,
    WindowNaiveBayes,
    train_naive_bayes,
)
from .labels import CANONICAL_ORDER, TumorGroup, parse_tumor_group
from .metrics import EvalReport, compare_runs, score
from .pipeline import (
    ArbitratedEnsembleClassifier,
    DecisionPath,
    DecisionRecord,
    classify_report,
    default_members,
    run_batch,
)
from .reports import LabeledReport, LabelProvenance, PathologyReport, ReportSource
from .synth import GeneratedCorpus, GeneratorSpec, PhraseBanks, generate
from .voting import (
    EnsembleConfig,
    HardGroupTest,
    Prediction,
    RouteReason,
    RoutingDecision,
    VoteTally,
    route,
    tally,
)
from .windows import TokenWindow, WindowSection, tokenize, windows

__version__ = "0.1.0"

__all__ = [
    "ArbiterPolicy",
    "ArbiterVerdict",
    "ArbitratedEnsembleClassifier",
    "CANONICAL_ORDER",
    "ChatArbiter",
    "DecisionPath",
    "DecisionRecord",
    "EnsembleConfig",
    "EvalReport",
    "FallbackKind",
    "GeneratedCorpus",
    "GeneratorSpec",
    "HardGroupTest",
    "LabelProvenance",
    "LabeledReport",
    "LexiconClassifier",
    "PathologyReport",
    "PhraseBanks",
    "Prediction",
    "PromptTemplate",
    "RemoteBackend",
    "ReportSource",
    "RouteReason",
    "RoutingDecision",
    "RuleArbiter",
    "TokenWindow",
    "TumorGroup",
    "VoteTally",
    "WindowNaiveBayes",
    "WindowSection",
    "build_prompt",
    "classify_report",
    "compare_runs",
    "default_members",
    "generate",
    "parse_tumor_group",
    "parse_verdict",
    "route",
    "run_batch",
    "score",
    "tally",
    "tokenize",
    "train_naive_bayes",
    "windows",
]
