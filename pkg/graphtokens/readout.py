"""
Surrogate readout standing in for the frozen or adapted language model.

    logits = mean_k(tokens) · W_eff,   W_eff = W0 + (a / r) B A

W0 is never trained. The low-rank adapter starts with B = 0, so an adapted
readout initially produces the same logits as the frozen one.
"""

import hashlib
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DimensionError
from .numerics import DeterministicRng, Matrix, row_softmax


@dataclass(eq=False)
class LowRankAdapter:
    b: Matrix
    a: Matrix
    scale: float

    def __post_init__(self):
        if self.b.ndim != 2 or self.a.ndim != 2 or self.b.shape[1] != self.a.shape[0]:
            raise DimensionError(f"Adapter factors do not chain: B {self.b.shape}, A {self.a.shape}")
        if self.rank < 1:
            raise ConfigError("Adapter rank must be >= 1")

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def factor(self) -> float:
        return self.scale / self.rank

    def delta(self) -> Matrix:
        return self.factor * (self.b @ self.a)


@dataclass(eq=False)
class ReadoutParams:
    w0: Matrix
    adapter: Optional[LowRankAdapter] = None

    def __post_init__(self):
        if self.adapter is not None:
            if self.adapter.b.shape[0] != self.w0.shape[0] or self.adapter.a.shape[1] != self.w0.shape[1]:
                raise DimensionError(
                    f"Adapter B {self.adapter.b.shape} / A {self.adapter.a.shape} does not fit W0 {self.w0.shape}"
                )

    @property
    def d_llm(self) -> int:
        return self.w0.shape[0]

    @property
    def classes(self) -> int:
        return self.w0.shape[1]

    def effective_weight(self) -> Matrix:
        if self.adapter is None:
            return self.w0
        return self.w0 + self.adapter.delta()


def init_readout(
    d_llm: int,
    classes: int,
    rng: DeterministicRng,
    rank: Optional[int] = None,
    scale: Optional[float] = None,
) -> ReadoutParams:
    w0 = rng.normal((d_llm, classes), scale=1.0 / np.sqrt(d_llm))
    if rank is None:
        return ReadoutParams(w0)
    adapter = LowRankAdapter(
        b=np.zeros((d_llm, rank)),
        a=rng.normal((rank, classes), scale=1.0 / np.sqrt(rank)),
        scale=float(scale if scale is not None else rank),
    )
    return ReadoutParams(w0, adapter)


def adapter_from_delta(delta: Matrix, rank: int, scale: float) -> LowRankAdapter:
    """Factor a rank-`rank` delta into B, A such that (scale / rank) B A == delta."""
    u, sigma, vt = np.linalg.svd(delta, full_matrices=False)
    b = u[:, :rank] * sigma[:rank] * (rank / scale)
    return LowRankAdapter(b=b, a=vt[:rank], scale=scale)


def readout_forward(tokens: Matrix, p: ReadoutParams) -> Tuple[np.ndarray, tuple]:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] != p.d_llm:
        raise DimensionError(f"Readout expects K×{p.d_llm} tokens, got shape {tokens.shape}")
    pooled = tokens.mean(axis=0)
    return pooled @ p.effective_weight(), (tokens.shape[0], pooled)


def surrogate_readout(tokens: Matrix, p: ReadoutParams) -> np.ndarray:
    return readout_forward(tokens, p)[0]


def readout_backward(p: ReadoutParams, cache, d_logits: np.ndarray) -> Tuple[Matrix, Dict[str, Matrix]]:
    """Gradient w.r.t. the tokens and the adapter factors; W0 gets none."""
    count, pooled = cache
    d_pooled = p.effective_weight() @ d_logits
    d_tokens = np.tile(d_pooled / count, (count, 1))
    grads = {}
    if p.adapter is not None:
        outer = np.outer(pooled, d_logits)
        grads["B"] = p.adapter.factor * outer @ p.adapter.a.T
        grads["A"] = p.adapter.factor * p.adapter.b.T @ outer
    return d_tokens, grads


def cross_entropy(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """Loss and gradient w.r.t. the logits."""
    loss = float(logsumexp(logits) - logits[target])
    grad = row_softmax(logits[None, :])[0]
    grad[target] -= 1.0
    return loss, grad


def weight_checksum(m: Matrix) -> str:
    return hashlib.sha256(np.ascontiguousarray(m, dtype=np.float64).tobytes()).hexdigest()
