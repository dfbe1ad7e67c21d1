"""
Synthetic graph-classification datasets with controllable feature/structure
redundancy.

Each example's class is a community count. A structure-tagged example really
has that many communities; a feature-tagged example carries the class in the
mean of one block of node features. `redundancy_fraction` of the examples
carry both signals, which is what the FandE diagnostic measures.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from pydantic import ValidationError

from .errors import ConfigError, ParseError
from .graph import AttributedGraph, Edge, graph_from_document, graph_to_document, validation_position
from .numerics import DeterministicRng
from .schemas import DatasetRecord, SyntheticTaskSpec
from .workspace import Workspace

logger = logging.getLogger(__name__)

INTRA_RELATION = "linked"
BRIDGE_RELATION = "bridge"
INTRA_EDGE_PROB = 0.5


@dataclass(frozen=True, eq=False)
class DatasetExample:
    id: str
    graph: AttributedGraph
    label: int
    tags: Tuple[str, ...]

    @property
    def dual_tagged(self) -> bool:
        return "feature" in self.tags and "structure" in self.tags


def parse_task_spec(text: str) -> SyntheticTaskSpec:
    try:
        return SyntheticTaskSpec.model_validate_json(text)
    except ValidationError as e:
        msg, loc = validation_position(e)
        raise ConfigError(f"Invalid task spec{' at ' + loc if loc else ''}: {msg}") from e


def _tag_plan(spec: SyntheticTaskSpec) -> List[Tuple[str, ...]]:
    n = spec.n_examples
    if spec.feature_signal and spec.structure_signal:
        n_both = int(round(spec.redundancy_fraction * n))
        plan = [("feature", "structure")] * n_both
        for i in range(n - n_both):
            plan.append(("feature",) if i % 2 == 0 else ("structure",))
        return plan
    if spec.feature_signal:
        return [("feature",)] * n
    return [("structure",)] * n


def _build_graph(
    spec: SyntheticTaskSpec, label: int, tags: Tuple[str, ...], rng: DeterministicRng
) -> AttributedGraph:
    classes = spec.classes
    if "structure" in tags:
        communities = label
    else:
        communities = classes[rng.below(len(classes))]
    size = spec.nodes_per_community
    n = communities * size

    edges = []
    for c in range(communities):
        base = c * size
        for a in range(size):
            for b in range(a + 1, size):
                # ring edges keep each community connected
                if b == a + 1 or (a == 0 and b == size - 1) or rng.next_float() < INTRA_EDGE_PROB:
                    edges.append(Edge(base + a, base + b, INTRA_RELATION, (1.0, 0.0)))
        if c > 0:
            u = (c - 1) * size + rng.below(size)
            v = base + rng.below(size)
            edges.append(Edge(u, v, BRIDGE_RELATION, (0.0, 1.0)))

    width = len(classes) * spec.block_width
    features = spec.noise_scale * rng.normal((n, width))
    if "feature" in tags:
        block = classes.index(label)
        features[:, block * spec.block_width:(block + 1) * spec.block_width] += spec.signal_strength

    labels = tuple(f"c{i // size}_n{i % size}" for i in range(n))
    return AttributedGraph(features, tuple(edges), labels, True)


def generate_dataset(spec: SyntheticTaskSpec, seed: int) -> List[DatasetExample]:
    if spec.n_examples < 1:
        raise ConfigError("A dataset needs at least one example")
    rng = DeterministicRng(seed)
    classes = spec.classes
    plan = _tag_plan(spec)
    tag_order = rng.permutation(spec.n_examples)
    label_order = rng.permutation(spec.n_examples)

    examples = []
    for i in range(spec.n_examples):
        tags = plan[tag_order[i]]
        label = classes[label_order[i] % len(classes)]
        graph = _build_graph(spec, label, tags, rng.spawn(i))
        examples.append(DatasetExample(f"ex-{i:05d}", graph, label, tags))

    dual = sum(1 for ex in examples if ex.dual_tagged)
    logger.info(f"Generated {len(examples)} examples ({dual} dual-tagged) with seed {seed}")
    return examples


def dataset_summary(examples: List[DatasetExample]) -> dict:
    n = len(examples)
    dual = sum(1 for ex in examples if ex.dual_tagged)
    counts = {}
    for ex in examples:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    return {
        "examples": n,
        "dual_tagged": dual,
        "redundancy_fraction": dual / n if n else 0.0,
        "feature_tagged": sum(1 for ex in examples if "feature" in ex.tags),
        "structure_tagged": sum(1 for ex in examples if "structure" in ex.tags),
        "class_counts": {str(k): v for k, v in sorted(counts.items())},
        "mean_nodes": float(np.mean([ex.graph.node_count for ex in examples])) if n else 0.0,
    }


def dataset_to_jsonl(examples: List[DatasetExample]) -> str:
    lines = []
    for ex in examples:
        record = DatasetRecord(id=ex.id, label=ex.label, tags=list(ex.tags), graph=graph_to_document(ex.graph))
        lines.append(record.model_dump_json())
    return "\n".join(lines) + "\n"


def dataset_from_jsonl(text: str) -> List[DatasetExample]:
    examples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = DatasetRecord.model_validate_json(line)
        except ValidationError as e:
            msg, loc = validation_position(e)
            raise ParseError(msg, f"line {lineno}" + (f" {loc}" if loc else "")) from e
        try:
            graph = graph_from_document(record.graph)
        except ParseError as e:
            raise ParseError(str(e), f"line {lineno}") from e
        examples.append(DatasetExample(record.id, graph, record.label, tuple(record.tags)))
    if not examples:
        raise ParseError("dataset is empty")
    return examples


def read_dataset(path) -> List[DatasetExample]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Dataset not found: {path}")
    return dataset_from_jsonl(path.read_text())


def write_dataset(path, examples: List[DatasetExample]) -> Path:
    return Workspace().write_text(path, dataset_to_jsonl(examples))
