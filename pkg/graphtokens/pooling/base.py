import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

import config
from ..errors import ConfigError, DimensionError, NumericalError
from ..graph import GraphContext
from ..numerics import DeterministicRng, Matrix
from ..schemas import OperatorSchema, PoolingConfig, parameter_definitions

logger = logging.getLogger(__name__)

Blocks = Dict[str, Matrix]

AUX_LOSS_NAMES = ("lp", "entropy", "cut", "ortho")


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    s: Matrix

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim != 2:
            raise DimensionError(f"Assignment must be N×C, got shape {s.shape}")
        if np.any(s < 0):
            raise NumericalError("Assignment has negative entries")
        if s.shape[0] and not np.allclose(s.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
            raise NumericalError("Assignment rows must sum to 1")
        object.__setattr__(self, "s", s)

    @property
    def clusters(self) -> int:
        return self.s.shape[1]


@dataclass(eq=False)
class PoolResult:
    tokens: Matrix
    aux_losses: Dict[str, float] = field(default_factory=dict)
    selection: Optional[Tuple[int, ...]] = None
    assignment: Optional[AssignmentMatrix] = None
    coarse_adjacency: Optional[Matrix] = None
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise DimensionError(f"A pool result needs at least one token, got shape {self.tokens.shape}")
        for name, value in self.aux_losses.items():
            if name not in AUX_LOSS_NAMES:
                raise ConfigError(f"Unknown aux loss '{name}'")
            if not math.isfinite(value):
                raise NumericalError(f"Aux loss '{name}' is not finite: {value}")

    @property
    def token_count(self) -> int:
        return self.tokens.shape[0]


def calibrate_retention(k: int, n_avg: float, decimals: Optional[int] = 2) -> float:
    """rho = min(1, k / n_avg), rounded for config echo unless decimals is None."""
    if k < 1:
        raise ConfigError(f"Target token count must be >= 1, got {k}")
    if n_avg <= 0:
        raise ConfigError(f"Mean graph size must be positive, got {n_avg}")
    rho = min(1.0, k / n_avg)
    return rho if decimals is None else round(rho, decimals)


def retained_count(rho: float, n: int) -> int:
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"Retention ratio must lie in (0, 1], got {rho}")
    # round first so that rho = 2/3 on 3 nodes keeps 2, not 3
    return max(1, min(n, math.ceil(round(rho * n, 9))))


def check_nodes(h, name: str = "H") -> Matrix:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty N×d matrix, got shape {h.shape}")
    return h


class BasePoolingOperator:
    """
    A pooling operator with its learnable blocks.

    forward returns (PoolResult, cache); backward takes the cache, the
    gradient w.r.t. the tokens and the aux-loss weights and returns the
    gradient w.r.t. the node embeddings plus one gradient per block.
    """

    OPERATOR_TYPE = "base"
    DESCRIPTION = "Base pooling operator"
    FAMILY = "baseline"
    AUX_LOSSES: Tuple[str, ...] = ()
    PARAMS: Dict[str, Any] = {}

    def __init__(self, cfg: Optional[PoolingConfig] = None):
        self.cfg = cfg or PoolingConfig(operator=self.OPERATOR_TYPE)
        self.rho: Optional[float] = self.cfg.rho

    @classmethod
    def get_schema(cls) -> OperatorSchema:
        return OperatorSchema(
            type=cls.OPERATOR_TYPE,
            description=cls.DESCRIPTION,
            family=cls.FAMILY,
            aux_losses=list(cls.AUX_LOSSES),
            params=parameter_definitions(cls.PARAMS),
        )

    def init_params(self, d: int, rng: DeterministicRng) -> Blocks:
        return {}

    def forward(self, h: Matrix, ctx: GraphContext, params: Blocks, seed: int = 0):
        raise NotImplementedError

    def backward(self, params: Blocks, cache, d_tokens: Matrix, aux_weights: Dict[str, float]):
        raise NotImplementedError

    def pool(self, h: Matrix, ctx: GraphContext, params: Blocks, seed: int = 0) -> PoolResult:
        return self.forward(h, ctx, params, seed)[0]

    def retention(self, n: int) -> float:
        # no dataset-level calibration supplied: aim for k tokens on this graph
        if self.rho is None:
            return calibrate_retention(self.cfg.k, n, decimals=None)
        return self.rho


def default_aux_weights(weight: float = config.AUX_WEIGHT, overrides: Optional[Dict[str, float]] = None) -> Dict[str, float]:
    weights = {name: weight for name in AUX_LOSS_NAMES}
    weights.update(overrides or {})
    return weights
