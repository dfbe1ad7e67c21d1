"""
Token projectors into the readout width d_llm.

    bottleneck  sigmoid(T W1 + b1) W2 + b2,  d -> d_mid -> d_llm (d_mid = d_llm / 2)
    vn          relu(T W1 + b1) W2 + b2,     d -> d_llm -> d_llm
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from pydantic import ValidationError

import config
from ..errors import ConfigError, DimensionError, ParseError
from ..graph import validation_position
from ..numerics import DeterministicRng, Matrix, activation, activation_backward, as_matrix
from ..schemas import PROJECTOR_VARIANTS, ProjectorCheckpoint

_ACTIVATION = {"bottleneck": "sigmoid", "vn": "relu"}


@dataclass(eq=False)
class ProjectorParams:
    variant: str
    w1: Matrix
    b1: Matrix
    w2: Matrix
    b2: Matrix

    def __post_init__(self):
        if self.variant not in PROJECTOR_VARIANTS:
            raise ConfigError(f"Unknown projector variant '{self.variant}', expected one of {PROJECTOR_VARIANTS}")
        mid = self.w1.shape[1]
        if self.b1.shape != (1, mid) or self.w2.shape[0] != mid or self.b2.shape != (1, self.w2.shape[1]):
            raise DimensionError(
                f"Projector shapes do not chain: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )
        if self.variant == "vn" and mid != self.d_llm:
            raise DimensionError(f"vn projector keeps width d_llm in the middle, got {mid} vs {self.d_llm}")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_llm(self) -> int:
        return self.w2.shape[1]

    def blocks(self) -> Dict[str, Matrix]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_blocks(cls, variant: str, blocks: Dict[str, Matrix]) -> "ProjectorParams":
        return cls(variant, blocks["w1"], blocks["b1"], blocks["w2"], blocks["b2"])


def init_projector(
    variant: str, d: int, d_llm: int = config.D_LLM, rng: Optional[DeterministicRng] = None, d_mid: Optional[int] = None
) -> ProjectorParams:
    rng = rng or DeterministicRng(0)
    if variant == "vn":
        mid = d_llm
    else:
        mid = d_mid or max(1, d_llm // 2)
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(mid)
    return ProjectorParams(
        variant,
        rng.uniform(-b1, b1, (d, mid)),
        rng.uniform(-b1, b1, (1, mid)),
        rng.uniform(-b2, b2, (mid, d_llm)),
        rng.uniform(-b2, b2, (1, d_llm)),
    )


def projector_forward(tokens: Matrix, p: ProjectorParams):
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != p.d_in:
        raise DimensionError(f"Projector expects K×{p.d_in} tokens, got shape {tokens.shape}")
    pre = tokens @ p.w1 + p.b1
    mid = activation(pre, _ACTIVATION[p.variant])
    return mid @ p.w2 + p.b2, (tokens, pre, mid)


def project_tokens(tokens: Matrix, p: ProjectorParams) -> Matrix:
    return projector_forward(tokens, p)[0]


def projector_backward(p: ProjectorParams, cache, d_out: Matrix):
    tokens, pre, mid = cache
    d_mid = d_out @ p.w2.T
    d_pre = activation_backward(pre, mid, d_mid, _ACTIVATION[p.variant])
    grads = {
        "w1": tokens.T @ d_pre,
        "b1": d_pre.sum(axis=0, keepdims=True),
        "w2": mid.T @ d_out,
        "b2": d_out.sum(axis=0, keepdims=True),
    }
    return d_pre @ p.w1.T, grads


def projector_to_checkpoint(p: ProjectorParams) -> ProjectorCheckpoint:
    return ProjectorCheckpoint(
        variant=p.variant,
        d_llm=p.d_llm,
        w1=p.w1.tolist(),
        b1=p.b1.ravel().tolist(),
        w2=p.w2.tolist(),
        b2=p.b2.ravel().tolist(),
    )


def load_projector(text: str) -> ProjectorParams:
    try:
        doc = ProjectorCheckpoint.model_validate_json(text)
    except ValidationError as e:
        msg, loc = validation_position(e)
        raise ParseError(msg, loc) from e
    p = ProjectorParams(
        doc.variant,
        as_matrix(doc.w1, "w1"),
        as_matrix([doc.b1], "b1"),
        as_matrix(doc.w2, "w2"),
        as_matrix([doc.b2], "b2"),
    )
    if p.d_llm != doc.d_llm:
        raise ParseError(f"d_llm {doc.d_llm} does not match w2 width {p.d_llm}", "d_llm")
    return p
