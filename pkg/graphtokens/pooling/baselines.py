"""Non-learnable baselines: a single mean token, k random nodes, or every node."""

import numpy as np

from ..errors import ConfigError
from ..numerics import DeterministicRng, Matrix
from .base import BasePoolingOperator, PoolResult, check_nodes


def mean_pool(h: Matrix) -> PoolResult:
    h = check_nodes(h)
    return PoolResult(h.mean(axis=0, keepdims=True))


def rand_k(h: Matrix, k: int, seed: int) -> PoolResult:
    """k rows without replacement, or with replacement when the graph has fewer than k nodes."""
    h = check_nodes(h)
    if k < 1:
        raise ConfigError(f"rand_k needs k >= 1, got {k}")
    n = h.shape[0]
    rng = DeterministicRng(seed)
    selection = rng.sample(n, k) if k <= n else rng.choices(n, k)
    warnings = () if k <= n else (f"graph has {n} < {k} nodes; sampled with replacement",)
    return PoolResult(h[selection], selection=tuple(selection), warnings=warnings)


def all_tokens(h: Matrix) -> PoolResult:
    h = check_nodes(h)
    return PoolResult(h.copy())


class MeanPoolOperator(BasePoolingOperator):
    OPERATOR_TYPE = "mean"
    DESCRIPTION = "Compress the whole graph into one token (column mean)"

    def forward(self, h, ctx, params, seed=0):
        result = mean_pool(h)
        return result, h.shape[0]

    def backward(self, params, cache, d_tokens, aux_weights):
        n = cache
        return np.repeat(d_tokens / n, n, axis=0), {}


class RandKOperator(BasePoolingOperator):
    OPERATOR_TYPE = "randk"
    DESCRIPTION = "Keep k randomly chosen node embeddings"
    PARAMS = {"k": {"type": "int", "default": 8, "description": "Nodes to sample"}}

    def forward(self, h, ctx, params, seed=0):
        result = rand_k(h, self.cfg.k, seed)
        return result, (h.shape, result.selection)

    def backward(self, params, cache, d_tokens, aux_weights):
        shape, selection = cache
        d_h = np.zeros(shape)
        np.add.at(d_h, list(selection), d_tokens)
        return d_h, {}


class AllTokensOperator(BasePoolingOperator):
    OPERATOR_TYPE = "all"
    DESCRIPTION = "Project every node embedding as its own token"

    def forward(self, h, ctx, params, seed=0):
        return all_tokens(h), None

    def backward(self, params, cache, d_tokens, aux_weights):
        return d_tokens.copy(), {}
