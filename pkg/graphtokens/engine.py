import logging
from typing import Callable, Iterable, List, Optional, Sequence, Union

from pocketflow import Flow

from .errors import ConfigError
from .graph import AttributedGraph
from .model import GraphTokenModel, build_model
from .schemas import PipelineSpec, RunConfig, StageConfig
from .stages import STAGE_CLASSES, GraphPrompt

logger = logging.getLogger(__name__)

DEFAULT_STAGES = (
    StageConfig(id="retrieve", type="retrieve"),
    StageConfig(id="textualize", type="textualize"),
    StageConfig(id="encode", type="encode"),
    StageConfig(id="pool", type="pool"),
    StageConfig(id="project", type="project"),
)

EventCallback = Callable[[str, dict], None]


def build_pipeline(stages: Union[PipelineSpec, Iterable[StageConfig]], event_callback: Optional[EventCallback] = None) -> Flow:
    if isinstance(stages, PipelineSpec):
        stages = stages.stages
    stages = list(stages)
    if not stages:
        raise ConfigError("A pipeline needs at least one stage")

    nodes = []
    for stage in stages:
        stage_class = STAGE_CLASSES.get(stage.type)
        if stage_class is None:
            raise ConfigError(f"Unknown stage type '{stage.type}', expected one of {sorted(STAGE_CLASSES)}")
        node = stage_class()
        # Use .config to store static parameters
        node.config = stage.data
        node.name = stage.label or stage.id
        node.id = stage.id
        node.on_event = event_callback
        logger.debug(f"Created stage {node.name} ({stage.type})")
        nodes.append(node)

    for source, target in zip(nodes, nodes[1:]):
        source >> target
    return Flow(start=nodes[0])


def run_pipeline(
    stages: Union[PipelineSpec, Iterable[StageConfig]], shared: dict, event_callback: Optional[EventCallback] = None
) -> dict:
    flow = build_pipeline(stages, event_callback)
    flow.run(shared)
    return shared


def prompt_for_graph(
    graph: AttributedGraph,
    run_config: RunConfig,
    seed: int = 1,
    query: Optional[Sequence[float]] = None,
    textualize: bool = True,
    model: Optional[GraphTokenModel] = None,
    stages: Sequence[StageConfig] = DEFAULT_STAGES,
    event_callback: Optional[EventCallback] = None,
    top_n: Optional[int] = None,
    edge_cost: Optional[float] = None,
) -> GraphPrompt:
    """Run retrieve -> textualize -> encode -> pool -> project on one graph.

    A retrieval that keeps no nodes yields a prompt with zero soft tokens.
    """
    if model is None:
        # readout width is irrelevant for inference
        model = build_model(run_config, graph.feature_dim, graph.edge_feature_dim, 2, seed)
    shared = {
        "graph": graph,
        "query": list(query) if query is not None else None,
        "textualize": textualize,
        "model": model,
        "seed": seed,
        "top_n": top_n,
        "edge_cost": edge_cost,
    }
    if graph.node_labels is None:
        shared["textualize"] = False
    run_pipeline(stages, shared, event_callback)
    if "prompt" not in shared:
        raise ConfigError("The pipeline did not produce a prompt; does it end with a 'project' stage?")
    return shared["prompt"]


def stage_metadata() -> List[dict]:
    return [cls.get_schema().model_dump() for cls in STAGE_CLASSES.values()]
