"""Graph-to-soft-token pooling toolkit: retrieval, encoders, pooling operators, training and the FandE diagnostic."""

from .engine import build_pipeline, prompt_for_graph, run_pipeline
from .errors import (
    ConfigError,
    CoverageError,
    DimensionError,
    GraphTokensError,
    LabelingError,
    NumericalError,
    OracleRefusedError,
    ParseError,
)
from .operator_registry import registry
