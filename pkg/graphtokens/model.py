"""
The trainable chain encoder -> pooling -> projector -> readout.

Trainable blocks are exposed through one flat dict whose keys carry a
component prefix ("encoder/", "pool/", "projector/", "readout/"). The values
are the live arrays, so an in-place update of the dict updates the model.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from .datasets import DatasetExample
from .encoders import EncoderParams, encoder_backward, encoder_forward, init_encoder
from .errors import NumericalError
from .graph import GraphContext, graph_context
from .numerics import DeterministicRng, Matrix
from .operator_registry import registry
from .pooling import BasePoolingOperator, ProjectorParams, default_aux_weights, init_projector
from .pooling.projector import projector_backward, projector_forward
from .readout import ReadoutParams, cross_entropy, init_readout, readout_backward, readout_forward
from .schemas import RunConfig

logger = logging.getLogger(__name__)

ENCODER_PREFIX = "encoder/"
POOL_PREFIX = "pool/"
PROJECTOR_PREFIX = "projector/"
READOUT_PREFIX = "readout/"


@dataclass(frozen=True, eq=False)
class PreparedExample:
    id: str
    target: int
    features: Matrix
    ctx: GraphContext
    seed: int


def prepare_examples(
    examples: Sequence[DatasetExample], classes: Sequence[int], seed: int = 0
) -> List[PreparedExample]:
    index = {label: i for i, label in enumerate(classes)}
    base = DeterministicRng(seed)
    return [
        PreparedExample(ex.id, index[ex.label], ex.graph.node_features, graph_context(ex.graph), base.spawn(i).next_u64())
        for i, ex in enumerate(examples)
    ]


@dataclass(eq=False)
class ForwardPass:
    logits: np.ndarray
    loss: float
    ce: float
    aux: Dict[str, float]
    caches: tuple

    @property
    def prediction(self) -> int:
        # ties resolve to the lower class index
        return int(np.argmax(self.logits))


class GraphTokenModel:
    def __init__(
        self,
        encoder: EncoderParams,
        operator: BasePoolingOperator,
        pool_params: Dict[str, Matrix],
        projector: ProjectorParams,
        readout: ReadoutParams,
        regime: str = "adapted",
        aux_weights: Optional[Dict[str, float]] = None,
    ):
        self.encoder = encoder
        self.operator = operator
        self.pool_params = pool_params
        self.projector = projector
        self.readout = readout
        self.regime = regime
        self.aux_weights = aux_weights if aux_weights is not None else default_aux_weights()
        # test hook: replaces the analytic gradients of one pass
        self.backward_override: Optional[Callable[[Dict[str, Matrix]], Dict[str, Matrix]]] = None

    @property
    def operator_type(self) -> str:
        return self.operator.OPERATOR_TYPE

    def parameters(self) -> Dict[str, Matrix]:
        params = {ENCODER_PREFIX + k: v for k, v in self.encoder.blocks.items()}
        params.update({POOL_PREFIX + k: v for k, v in self.pool_params.items()})
        params.update({PROJECTOR_PREFIX + k: v for k, v in self.projector.blocks().items()})
        if self.regime == "adapted" and self.readout.adapter is not None:
            params[READOUT_PREFIX + "B"] = self.readout.adapter.b
            params[READOUT_PREFIX + "A"] = self.readout.adapter.a
        return params

    def forward(self, ex: PreparedExample) -> ForwardPass:
        h, enc_cache = encoder_forward(self.encoder, ex.features, ex.ctx.norm_adjacency, ex.ctx.attention)
        pooled, pool_cache = self.operator.forward(h, ex.ctx, self.pool_params, ex.seed)
        projected, proj_cache = projector_forward(pooled.tokens, self.projector)
        logits, read_cache = readout_forward(projected, self.readout)
        ce, d_logits = cross_entropy(logits, ex.target)
        aux = dict(pooled.aux_losses)
        loss = ce + sum(self.aux_weights.get(name, 0.0) * value for name, value in aux.items())
        return ForwardPass(logits, loss, ce, aux, (enc_cache, pool_cache, proj_cache, read_cache, d_logits))

    def backward(self, fp: ForwardPass) -> Dict[str, Matrix]:
        enc_cache, pool_cache, proj_cache, read_cache, d_logits = fp.caches
        d_projected, g_read = readout_backward(self.readout, read_cache, d_logits)
        d_tokens, g_proj = projector_backward(self.projector, proj_cache, d_projected)
        d_h, g_pool = self.operator.backward(self.pool_params, pool_cache, d_tokens, self.aux_weights)
        _, g_enc = encoder_backward(self.encoder, enc_cache, d_h)

        grads = {ENCODER_PREFIX + k: v for k, v in g_enc.items()}
        grads.update({POOL_PREFIX + k: v for k, v in g_pool.items()})
        grads.update({PROJECTOR_PREFIX + k: v for k, v in g_proj.items()})
        if self.regime == "adapted":
            grads.update({READOUT_PREFIX + k: v for k, v in g_read.items()})
        params = self.parameters()
        # blocks a pass never touched (e.g. unused cluster columns) get zeros
        grads = {k: grads.get(k, np.zeros_like(v)) for k, v in params.items()}
        if self.backward_override is not None:
            grads = self.backward_override(grads)
        return grads

    def loss(self, ex: PreparedExample) -> float:
        return self.forward(ex).loss

    def loss_and_grads(self, ex: PreparedExample) -> Tuple[ForwardPass, Dict[str, Matrix]]:
        fp = self.forward(ex)
        if not np.isfinite(fp.loss):
            raise NumericalError(f"Non-finite loss from operator '{self.operator_type}' on example {ex.id}")
        return fp, self.backward(fp)


def build_model(cfg: RunConfig, d_in: int, edge_dim: int, classes: int, seed: int) -> GraphTokenModel:
    rng = DeterministicRng(seed)
    hidden = cfg.encoder.hidden or config.HIDDEN_DIM
    encoder = init_encoder(
        cfg.encoder.kind,
        d_in,
        hidden,
        rng.spawn(1),
        layers=cfg.encoder.layers or config.ENCODER_LAYERS,
        hidden=hidden,
        alpha=cfg.encoder.alpha if cfg.encoder.alpha is not None else config.SGFORMER_ALPHA,
        attn_layers=cfg.encoder.attn_layers,
        edge_dim=edge_dim,
    )
    operator = registry.create(cfg.pooling)
    pool_params = operator.init_params(hidden, rng.spawn(2))
    d_llm = cfg.d_llm or config.D_LLM
    projector = init_projector(cfg.pooling.projector_variant, hidden, d_llm, rng.spawn(3))
    rank = None
    scale = None
    if cfg.regime == "adapted":
        rank = cfg.lora_rank or config.LORA_RANK
        scale = cfg.lora_scale or config.LORA_SCALE
    # W0 depends on the seed only, so frozen and adapted runs share a backbone
    readout = init_readout(d_llm, classes, rng.spawn(4), rank, scale)
    aux = default_aux_weights(cfg.aux_weight, cfg.aux_weights)
    return GraphTokenModel(encoder, operator, pool_params, projector, readout, cfg.regime, aux)
