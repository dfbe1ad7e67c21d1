"""
Pruning operators: score every node, keep the ceil(rho*N) best, gate the kept
rows by tanh(score).

Ties go to the smaller canonical node key (origin index or label, falling back
to the storage index) and kept rows come out in descending score.
TopK scores with a learnable projection vector; SAGPool scores with a GCN.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from ..encoders import EncoderParams, encoder_backward, encoder_forward, init_encoder
from ..errors import DimensionError
from ..graph import GraphContext
from ..numerics import Matrix, check_shape
from .base import BasePoolingOperator, PoolResult, check_nodes, retained_count


# scores equal to this many decimals are tied; a node permutation reorders the
# matmul sums and can move a score by an ulp
TIE_DECIMALS = 12


def select_and_gate(h: Matrix, scores: np.ndarray, rho: float, keys: Optional[Sequence] = None):
    n = h.shape[0]
    keep = retained_count(rho, n)
    ranked = np.round(scores, TIE_DECIMALS)
    tie = keys if keys is not None else range(n)
    order = sorted(range(n), key=lambda i: (-ranked[i], tie[i], i))[:keep]
    gates = np.tanh(scores[order])
    tokens = h[order] * gates[:, None]
    return tokens, tuple(order), gates


def _gate_backward(h: Matrix, selection, gates: np.ndarray, d_tokens: Matrix) -> Tuple[Matrix, np.ndarray]:
    """Gradients w.r.t. H (through the gated rows) and w.r.t. every node's score."""
    d_h = np.zeros_like(h)
    d_scores = np.zeros(h.shape[0])
    rows = list(selection)
    d_h[rows] += d_tokens * gates[:, None]
    d_gates = np.sum(d_tokens * h[rows], axis=1)
    d_scores[rows] = d_gates * (1.0 - gates * gates)
    return d_h, d_scores


def _unit(p) -> Tuple[np.ndarray, float]:
    p = np.asarray(p, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(p))
    if norm == 0.0:
        raise DimensionError("topk projection vector has zero norm")
    return p / norm, norm


def topk_pool(h: Matrix, p, rho: float, keys: Optional[Sequence] = None) -> PoolResult:
    h = check_nodes(h)
    u, _ = _unit(p)
    if u.shape[0] != h.shape[1]:
        raise DimensionError(f"Projection has width {u.shape[0]}, embeddings have {h.shape[1]}")
    tokens, selection, _ = select_and_gate(h, h @ u, rho, keys)
    return PoolResult(tokens, selection=selection)


def sag_pool(
    h: Matrix, norm_adjacency: Matrix, scorer: EncoderParams, rho: float, keys: Optional[Sequence] = None
) -> PoolResult:
    result, _ = _sag_forward(check_nodes(h), np.asarray(norm_adjacency, dtype=np.float64), scorer, rho, keys)
    return result


def _sag_forward(h: Matrix, norm_adjacency: Matrix, scorer: EncoderParams, rho: float, keys=None):
    if scorer.d_out != 1:
        raise DimensionError(f"SAGPool scorer must output one column, got {scorer.d_out}")
    scores, cache = encoder_forward(scorer, h, norm_adjacency=norm_adjacency)
    tokens, selection, gates = select_and_gate(h, scores[:, 0], rho, keys)
    return PoolResult(tokens, selection=selection), (h, cache, selection, gates)


class TopKOperator(BasePoolingOperator):
    OPERATOR_TYPE = "topk"
    DESCRIPTION = "Keep the nodes with the largest projection score, gated by tanh"
    FAMILY = "pruning"
    PARAMS = {
        "k": {"type": "int", "default": 8, "description": "Target token count used to calibrate rho"},
        "rho": {"type": "float", "default": None, "description": "Retention ratio in (0, 1]"},
    }

    def init_params(self, d, rng):
        bound = 1.0 / np.sqrt(d)
        return {"p": rng.uniform(-bound, bound, (d, 1))}

    def forward(self, h, ctx, params, seed=0):
        h = check_nodes(h)
        check_shape(params["p"], (h.shape[1], 1), "p")
        u, norm = _unit(params["p"])
        scores = h @ u
        tokens, selection, gates = select_and_gate(h, scores, self.retention(h.shape[0]), ctx.node_keys)
        return PoolResult(tokens, selection=selection), (h, u, norm, selection, gates)

    def backward(self, params, cache, d_tokens, aux_weights):
        h, u, norm, selection, gates = cache
        d_h, d_scores = _gate_backward(h, selection, gates, d_tokens)
        d_h += d_scores[:, None] * u[None, :]
        d_u = h.T @ d_scores
        d_p = (d_u - u * (u @ d_u)) / norm
        return d_h, {"p": d_p[:, None]}


class SAGPoolOperator(BasePoolingOperator):
    OPERATOR_TYPE = "sag"
    DESCRIPTION = "Keep the nodes a one-column GCN scores highest, gated by tanh"
    FAMILY = "pruning"
    PARAMS = {
        "k": {"type": "int", "default": 8, "description": "Target token count used to calibrate rho"},
        "rho": {"type": "float", "default": None, "description": "Retention ratio in (0, 1]"},
    }

    def _scorer(self, params) -> EncoderParams:
        blocks = {k[len("scorer."):]: v for k, v in params.items() if k.startswith("scorer.")}
        layers = sum(1 for k in blocks if k.endswith(".w"))
        return EncoderParams("gcn", blocks, layers)

    def init_params(self, d, rng):
        scorer = init_encoder("gcn", d, 1, rng, layers=1)
        return {f"scorer.{k}": v for k, v in scorer.blocks.items()}

    def forward(self, h, ctx: GraphContext, params, seed=0):
        h = check_nodes(h)
        return _sag_forward(h, ctx.norm_adjacency, self._scorer(params), self.retention(h.shape[0]), ctx.node_keys)

    def backward(self, params, cache, d_tokens, aux_weights):
        h, enc_cache, selection, gates = cache
        scorer = self._scorer(params)
        d_h, d_scores = _gate_backward(h, selection, gates, d_tokens)
        d_h_scorer, grads = encoder_backward(scorer, enc_cache, d_scores[:, None])
        return d_h + d_h_scorer, {f"scorer.{k}": v for k, v in grads.items()}


def selected_identities(result: PoolResult, origin: Optional[Tuple[int, ...]] = None) -> Tuple[int, ...]:
    """Selected node ids in ascending order, mapped through `origin` (e.g. the inverse of a permutation)."""
    if result.selection is None:
        return ()
    if origin is None:
        return tuple(sorted(result.selection))
    return tuple(sorted(origin[i] for i in result.selection))
