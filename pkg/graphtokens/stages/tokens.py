import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pocketflow import Node

from ..encoders import encode
from ..errors import ConfigError
from ..graph import graph_context
from ..numerics import Matrix
from ..pooling import PoolResult, project_tokens
from .base import BasePipelineStage

logger = logging.getLogger(__name__)

EMPTY_RETRIEVAL = "retrieval kept no nodes; the prompt carries no soft tokens"


@dataclass(eq=False)
class GraphPrompt:
    """Text scaffold plus the soft tokens that replace it in the prompt.

    `pool` is None when retrieval kept no nodes; `soft_tokens` then has zero rows.
    """

    text: str
    soft_tokens: Matrix
    pool: Optional[PoolResult]

    @property
    def soft_token_count(self) -> int:
        return self.soft_tokens.shape[0]

    @property
    def text_line_count(self) -> int:
        return len(self.text.splitlines()) if self.text else 0

    @property
    def warnings(self):
        return list(self.pool.warnings) if self.pool is not None else [EMPTY_RETRIEVAL]

    def as_dict(self) -> dict:
        pool = self.pool
        return {
            "text": self.text,
            "soft_tokens": self.soft_tokens.tolist(),
            "pooled_tokens": pool.tokens.tolist() if pool is not None else [],
            "soft_token_count": self.soft_token_count,
            "text_line_count": self.text_line_count,
            "selection": list(pool.selection) if pool is not None and pool.selection is not None else None,
            "aux_losses": dict(pool.aux_losses) if pool is not None else {},
            "warnings": self.warnings,
        }


def _model(shared):
    model = shared.get("model")
    if model is None:
        raise ConfigError("Token stages need a 'model' in the shared state")
    return model


class EncodeStage(BasePipelineStage, Node):
    STAGE_TYPE = "encode"
    DESCRIPTION = "Embed every node with the configured graph encoder"
    INPUTS = ["subgraph", "model"]
    OUTPUTS = ["embeddings", "context"]

    def prep(self, shared):
        self.start(shared)
        graph = shared.get("subgraph")
        if graph is None:
            graph = shared.get("graph")
        if graph is None:
            raise ConfigError("The encode stage needs a 'graph' or 'subgraph'")
        return {"graph": graph, "model": _model(shared)}

    def exec(self, prep_res):
        g = prep_res["graph"]
        if g.node_count == 0:
            logger.warning(EMPTY_RETRIEVAL)
            return {"embeddings": None, "context": None}
        ctx = graph_context(g)
        h = encode(prep_res["model"].encoder, g.node_features, ctx.norm_adjacency, ctx.attention)
        return {"embeddings": h, "context": ctx}


class PoolStage(BasePipelineStage, Node):
    STAGE_TYPE = "pool"
    DESCRIPTION = "Compress node embeddings into K tokens"
    INPUTS = ["embeddings", "context", "model"]
    OUTPUTS = ["pool_result"]
    PARAMS = {"seed": {"type": "int", "default": 0, "description": "Seed for randomized operators"}}

    def prep(self, shared):
        self.start(shared)
        return {
            "embeddings": shared["embeddings"],
            "context": shared["context"],
            "model": _model(shared),
            "seed": int(self.setting(shared, "seed", 0)),
        }

    def exec(self, prep_res):
        if prep_res["embeddings"] is None:
            return {"pool_result": None}
        model = prep_res["model"]
        result = model.operator.pool(prep_res["embeddings"], prep_res["context"], model.pool_params, prep_res["seed"])
        for warning in result.warnings:
            logger.warning(f"{model.operator_type}: {warning}")
        return {"pool_result": result}


class ProjectStage(BasePipelineStage, Node):
    STAGE_TYPE = "project"
    DESCRIPTION = "Project pooled tokens into the readout width and assemble the prompt"
    INPUTS = ["pool_result", "text", "model"]
    OUTPUTS = ["prompt"]

    def prep(self, shared):
        self.start(shared)
        return {"pool": shared["pool_result"], "text": shared.get("text", ""), "model": _model(shared)}

    def exec(self, prep_res):
        pool = prep_res["pool"]
        projector = prep_res["model"].projector
        if pool is None:
            soft = np.zeros((0, projector.d_llm))
        else:
            soft = project_tokens(pool.tokens, projector)
        return {"prompt": GraphPrompt(prep_res["text"], soft, pool)}
