"""
Virtual-node pooling: K learnable latent rows cross-attend over all node
embeddings in one layer,

    H'_vn = softmax((H_vn W_Q)(H W_K)^T / sqrt(d)) (H W_V)

which is the Perceiver latent update with X_lat = H_vn and X_inp = H. Both
entry points run through the same cross-attention routine.
"""

from dataclasses import dataclass

from ..encoders import cross_attention, cross_attention_backward, cross_attention_forward
from ..errors import DimensionError
from ..numerics import DeterministicRng, Matrix, as_matrix
from .base import BasePoolingOperator, PoolResult, check_nodes


@dataclass(eq=False)
class VirtualNodeBank:
    h_vn: Matrix
    w_q: Matrix
    w_k: Matrix
    w_v: Matrix

    def __post_init__(self):
        d = self.h_vn.shape[1]
        for name in ("w_q", "w_k", "w_v"):
            w = getattr(self, name)
            if w.ndim != 2 or w.shape[0] != d:
                raise DimensionError(f"{name} has shape {w.shape}; the bank expects {d} rows")
        if self.w_q.shape[1] != self.w_k.shape[1]:
            raise DimensionError(f"W_Q {self.w_q.shape} and W_K {self.w_k.shape} project to different widths")

    @property
    def tokens(self) -> int:
        return self.h_vn.shape[0]

    @property
    def width(self) -> int:
        return self.h_vn.shape[1]

    @classmethod
    def initialize(cls, k: int, d: int, rng: DeterministicRng) -> "VirtualNodeBank":
        bound = 1.0 / d ** 0.5
        return cls(
            h_vn=rng.normal((k, d)),
            w_q=rng.uniform(-bound, bound, (d, d)),
            w_k=rng.uniform(-bound, bound, (d, d)),
            w_v=rng.uniform(-bound, bound, (d, d)),
        )

    def blocks(self) -> dict:
        return {"vn.h": self.h_vn, "vn.w_q": self.w_q, "vn.w_k": self.w_k, "vn.w_v": self.w_v}

    @classmethod
    def from_blocks(cls, params: dict) -> "VirtualNodeBank":
        return cls(params["vn.h"], params["vn.w_q"], params["vn.w_k"], params["vn.w_v"])


def perceiver_encode(x_lat: Matrix, x_inp: Matrix, w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Matrix:
    return cross_attention(
        as_matrix(x_lat, "X_lat"), as_matrix(x_inp, "X_inp"), as_matrix(w_q, "W_Q"), as_matrix(w_k, "W_K"), as_matrix(w_v, "W_V")
    )


def vn_pool(h: Matrix, bank: VirtualNodeBank) -> PoolResult:
    h = check_nodes(h)
    if h.shape[1] != bank.width:
        raise DimensionError(f"Embeddings have width {h.shape[1]}, the bank expects {bank.width}")
    return PoolResult(perceiver_encode(bank.h_vn, h, bank.w_q, bank.w_k, bank.w_v))


class VNPoolOperator(BasePoolingOperator):
    OPERATOR_TYPE = "vn"
    DESCRIPTION = "K learnable virtual nodes cross-attend over every node (single layer)"
    FAMILY = "global"
    PARAMS = {"k": {"type": "int", "default": 8, "description": "Virtual nodes / output tokens"}}

    def init_params(self, d, rng):
        return VirtualNodeBank.initialize(self.cfg.k, d, rng).blocks()

    def forward(self, h, ctx, params, seed=0):
        h = check_nodes(h)
        bank = VirtualNodeBank.from_blocks(params)
        if h.shape[1] != bank.width:
            raise DimensionError(f"Embeddings have width {h.shape[1]}, the bank expects {bank.width}")
        tokens, cache = cross_attention_forward(bank.h_vn, h, bank.w_q, bank.w_k, bank.w_v)
        return PoolResult(tokens), cache

    def backward(self, params, cache, d_tokens, aux_weights):
        g = cross_attention_backward(cache, d_tokens)
        return g["x_inp"], {"vn.h": g["x_lat"], "vn.w_q": g["w_q"], "vn.w_k": g["w_k"], "vn.w_v": g["w_v"]}
