"""
Clustering operators: a soft assignment S (N×C, rows on the simplex) folds N
nodes into C supernodes.

DiffPool
    S = softmax(GCN_assign(H)), Z = GCN_embed(H), tokens = S^T Z,
    coarse adjacency S^T A S,
    lp      = ||A - S S^T||_F / N^2
    entropy = (1/N) sum_ic -S_ic ln(max(S_ic, 1e-12))

MinCutPool
    S = softmax(MLP_assign(H)), tokens = S^T H,
    cut   = -Tr(S^T A S) / Tr(S^T D S)      (0 when the graph has no degree)
    ortho = || S^T S / ||S^T S||_F - I_C / sqrt(C) ||_F
    coarse adjacency S^T A S with the diagonal zeroed, then degree-normalized.

A graph with fewer nodes than clusters uses only the first N assignment
columns; the result carries a warning.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from ..encoders import EncoderParams, encoder_backward, encoder_forward, init_encoder
from ..errors import ConfigError, DimensionError
from ..numerics import Matrix, row_softmax, row_softmax_backward
from .base import AssignmentMatrix, BasePoolingOperator, PoolResult, check_nodes

logger = logging.getLogger(__name__)

ENTROPY_EPS = 1e-12


def _check_adjacency(a, n: int) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (n, n):
        raise DimensionError(f"Adjacency has shape {a.shape}, expected {(n, n)}")
    return a


def renormalize(a: Matrix) -> Matrix:
    """D̃^{-1/2}(A + I)D̃^{-1/2} for a dense adjacency."""
    a_tilde = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]


# --- AUX LOSSES ---

def diffpool_losses(s: Matrix, a: Matrix) -> Dict[str, float]:
    n = s.shape[0]
    a = _check_adjacency(a, n)
    lp = float(np.linalg.norm(a - s @ s.T) / (n * n))
    entropy = float(np.sum(-s * np.log(np.maximum(s, ENTROPY_EPS))) / n)
    return {"lp": lp, "entropy": entropy}


def diffpool_losses_backward(s: Matrix, a: Matrix, weights: Dict[str, float]) -> Matrix:
    n = s.shape[0]
    d_s = np.zeros_like(s)
    residual = a - s @ s.T
    norm = np.linalg.norm(residual)
    if norm > 0:
        d_s -= weights.get("lp", 0.0) * (residual + residual.T) @ s / (norm * n * n)
    d_s -= weights.get("entropy", 0.0) * (np.log(np.maximum(s, ENTROPY_EPS)) + (s > ENTROPY_EPS)) / n
    return d_s


def _mincut_terms(s: Matrix, a: Matrix):
    degree = a.sum(axis=1)
    num = float(np.trace(s.T @ a @ s))
    den = float(np.sum(degree[:, None] * s * s))
    m = s.T @ s
    m_norm = float(np.linalg.norm(m))
    c = s.shape[1]
    p = m / m_norm - np.eye(c) / np.sqrt(c)
    return degree, num, den, m, m_norm, p


def mincut_losses(s: Matrix, a: Matrix) -> Dict[str, float]:
    a = _check_adjacency(a, s.shape[0])
    _, num, den, _, _, p = _mincut_terms(s, a)
    cut = -num / den if den > 0 else 0.0
    return {"cut": float(cut), "ortho": float(np.linalg.norm(p))}


def mincut_losses_backward(s: Matrix, a: Matrix, weights: Dict[str, float]) -> Matrix:
    degree, num, den, m, m_norm, p = _mincut_terms(s, a)
    d_s = np.zeros_like(s)
    if den > 0:
        d_num = (a + a.T) @ s
        d_den = 2.0 * degree[:, None] * s
        d_s -= weights.get("cut", 0.0) * (d_num * den - num * d_den) / (den * den)
    ortho = np.linalg.norm(p)
    if ortho > 0:
        g_p = p / ortho
        g_m = g_p / m_norm - m * np.sum(m * g_p) / m_norm ** 3
        d_s += weights.get("ortho", 0.0) * s @ (g_m + g_m.T)
    return d_s


def mincut_coarse_adjacency(s: Matrix, a: Matrix) -> Matrix:
    coarse = s.T @ a @ s
    np.fill_diagonal(coarse, 0.0)
    degree = coarse.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])
    return inv_sqrt[:, None] * coarse * inv_sqrt[None, :]


# --- ASSIGNMENT ---

def _assignment(logits: Matrix, clusters: int) -> Tuple[Matrix, Tuple[str, ...]]:
    n = logits.shape[0]
    if clusters < 1:
        raise ConfigError(f"Cluster count must be >= 1, got {clusters}")
    if logits.shape[1] != clusters:
        raise DimensionError(f"Assignment network outputs {logits.shape[1]} columns, expected {clusters}")
    warnings = ()
    if n < clusters:
        warnings = (f"graph has {n} < {clusters} nodes; clusters reduced to {n}",)
        logger.debug(warnings[0])
        logits = logits[:, :n]
    return row_softmax(logits), warnings


def _pad_columns(d_logits: Matrix, width: int) -> Matrix:
    if d_logits.shape[1] == width:
        return d_logits
    padded = np.zeros((d_logits.shape[0], width))
    padded[:, : d_logits.shape[1]] = d_logits
    return padded


def _diff_forward(h, a, norm_adjacency, embed: EncoderParams, assign: EncoderParams, clusters: int):
    n = h.shape[0]
    a = _check_adjacency(a, n)
    logits, assign_cache = encoder_forward(assign, h, norm_adjacency=norm_adjacency)
    s, warnings = _assignment(logits, clusters)
    z, embed_cache = encoder_forward(embed, h, norm_adjacency=norm_adjacency)
    result = PoolResult(
        s.T @ z,
        aux_losses=diffpool_losses(s, a),
        assignment=AssignmentMatrix(s),
        coarse_adjacency=s.T @ a @ s,
        warnings=warnings,
    )
    return result, (a, s, z, logits.shape[1], assign_cache, embed_cache)


def diff_pool(
    h: Matrix,
    a: Matrix,
    embed: EncoderParams,
    assign: EncoderParams,
    clusters: int,
    norm_adjacency: Optional[Matrix] = None,
) -> PoolResult:
    h = check_nodes(h)
    a = _check_adjacency(a, h.shape[0])
    norm_adjacency = renormalize(a) if norm_adjacency is None else norm_adjacency
    return _diff_forward(h, a, norm_adjacency, embed, assign, clusters)[0]


def _mincut_forward(h, a, assign: EncoderParams, clusters: int):
    n = h.shape[0]
    a = _check_adjacency(a, n)
    logits, assign_cache = encoder_forward(assign, h)
    s, warnings = _assignment(logits, clusters)
    result = PoolResult(
        s.T @ h,
        aux_losses=mincut_losses(s, a),
        assignment=AssignmentMatrix(s),
        coarse_adjacency=mincut_coarse_adjacency(s, a),
        warnings=warnings,
    )
    return result, (h, a, s, logits.shape[1], assign_cache)


def mincut_pool(h: Matrix, a: Matrix, assign_mlp: EncoderParams, clusters: int) -> PoolResult:
    if assign_mlp.kind != "mlp":
        raise ConfigError(f"MinCutPool assigns with an MLP, got {assign_mlp.kind}")
    return _mincut_forward(check_nodes(h), a, assign_mlp, clusters)[0]


def _sub_encoder(params, prefix: str, kind: str) -> EncoderParams:
    blocks = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    layers = sum(1 for k in blocks if k.endswith(".w"))
    return EncoderParams(kind, blocks, layers)


class DiffPoolOperator(BasePoolingOperator):
    OPERATOR_TYPE = "diff"
    DESCRIPTION = "Soft GCN cluster assignment with link-prediction and entropy losses"
    FAMILY = "clustering"
    AUX_LOSSES = ("lp", "entropy")
    PARAMS = {
        "clusters": {"type": "int", "default": 8, "description": "Supernodes C"},
        "assign_layers": {"type": "int", "default": 1, "description": "Depth of the assignment GCN"},
    }

    def init_params(self, d, rng):
        assign = init_encoder("gcn", d, self.cfg.clusters, rng, layers=self.cfg.assign_layers, hidden=d)
        embed = init_encoder("gcn", d, d, rng, layers=1)
        params = {f"assign.{k}": v for k, v in assign.blocks.items()}
        params.update({f"embed.{k}": v for k, v in embed.blocks.items()})
        return params

    def forward(self, h, ctx, params, seed=0):
        h = check_nodes(h)
        return _diff_forward(
            h,
            ctx.adjacency,
            ctx.norm_adjacency,
            _sub_encoder(params, "embed.", "gcn"),
            _sub_encoder(params, "assign.", "gcn"),
            self.cfg.clusters,
        )

    def backward(self, params, cache, d_tokens, aux_weights):
        a, s, z, width, assign_cache, embed_cache = cache
        d_s = z @ d_tokens.T + diffpool_losses_backward(s, a, aux_weights)
        d_z = s @ d_tokens
        d_logits = _pad_columns(row_softmax_backward(s, d_s), width)
        d_h_assign, g_assign = encoder_backward(_sub_encoder(params, "assign.", "gcn"), assign_cache, d_logits)
        d_h_embed, g_embed = encoder_backward(_sub_encoder(params, "embed.", "gcn"), embed_cache, d_z)
        grads = {f"assign.{k}": v for k, v in g_assign.items()}
        grads.update({f"embed.{k}": v for k, v in g_embed.items()})
        return d_h_assign + d_h_embed, grads


class MinCutPoolOperator(BasePoolingOperator):
    OPERATOR_TYPE = "mincut"
    DESCRIPTION = "Soft MLP cluster assignment with min-cut and orthogonality losses"
    FAMILY = "clustering"
    AUX_LOSSES = ("cut", "ortho")
    PARAMS = {
        "clusters": {"type": "int", "default": 8, "description": "Supernodes C"},
        "assign_layers": {"type": "int", "default": 1, "description": "Depth of the assignment MLP"},
    }

    def init_params(self, d, rng):
        assign = init_encoder("mlp", d, self.cfg.clusters, rng, layers=self.cfg.assign_layers, hidden=d)
        return {f"assign.{k}": v for k, v in assign.blocks.items()}

    def forward(self, h, ctx, params, seed=0):
        h = check_nodes(h)
        return _mincut_forward(h, ctx.adjacency, _sub_encoder(params, "assign.", "mlp"), self.cfg.clusters)

    def backward(self, params, cache, d_tokens, aux_weights):
        h, a, s, width, assign_cache = cache
        d_s = h @ d_tokens.T + mincut_losses_backward(s, a, aux_weights)
        d_h = s @ d_tokens
        d_logits = _pad_columns(row_softmax_backward(s, d_s), width)
        d_h_assign, g_assign = encoder_backward(_sub_encoder(params, "assign.", "mlp"), assign_cache, d_logits)
        return d_h + d_h_assign, {f"assign.{k}": v for k, v in g_assign.items()}
