import logging

from pocketflow import Node

import config
from ..errors import ConfigError
from ..graph import induced_subgraph, textualize
from ..retriever import retrieve_subgraph
from .base import BasePipelineStage

logger = logging.getLogger(__name__)


class RetrieveStage(BasePipelineStage, Node):
    """PCST retrieval of the query-relevant subgraph; without a query the whole graph passes through."""

    STAGE_TYPE = "retrieve"
    DESCRIPTION = "Extract the query-relevant subgraph with a prize-collecting Steiner tree"
    INPUTS = ["graph", "query"]
    OUTPUTS = ["subgraph", "objective"]
    PARAMS = {
        "top_n": {"type": "int", "default": config.TOP_N, "description": "Nodes that receive a prize"},
        "edge_cost": {"type": "float", "default": config.EDGE_COST, "description": "Uniform edge cost"},
    }

    def prep(self, shared):
        self.start(shared)
        graph = shared.get("graph")
        if graph is None:
            raise ConfigError("The retrieve stage needs a 'graph' in the shared state")
        return {
            "graph": graph,
            "query": self.setting(shared, "query"),
            "top_n": int(self.setting(shared, "top_n", config.TOP_N)),
            "edge_cost": float(self.setting(shared, "edge_cost", config.EDGE_COST)),
        }

    def exec(self, prep_res):
        g = prep_res["graph"]
        if prep_res["query"] is None:
            return {"subgraph": induced_subgraph(g, range(g.node_count)), "objective": None}
        sub, objective, _ = retrieve_subgraph(g, prep_res["query"], prep_res["top_n"], prep_res["edge_cost"])
        logger.info(f"Retrieved {sub.node_count}/{g.node_count} nodes, PCST objective {objective:.4f}")
        return {"subgraph": sub, "objective": objective}


class TextualizeStage(BasePipelineStage, Node):
    """Text scaffold of the retrieved subgraph; disabling it gives the soft-tokens-only ablation."""

    STAGE_TYPE = "textualize"
    DESCRIPTION = "Linearize the subgraph into node and edge lines"
    INPUTS = ["subgraph"]
    OUTPUTS = ["text"]
    PARAMS = {"textualize": {"type": "boolean", "default": True, "description": "Keep the text scaffold"}}

    def prep(self, shared):
        self.start(shared)
        return {
            "graph": shared["subgraph"] if shared.get("subgraph") is not None else shared.get("graph"),
            "enabled": bool(self.setting(shared, "textualize", True)),
        }

    def exec(self, prep_res):
        if not prep_res["enabled"] or prep_res["graph"] is None:
            return {"text": ""}
        return {"text": textualize(prep_res["graph"])}
