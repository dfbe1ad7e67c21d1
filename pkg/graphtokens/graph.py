"""
Attributed graph data model.

AttributedGraph is immutable after construction and is the unit every stage
consumes: retrieval cuts subgraphs out of it, encoders read its features and
adjacency, textualization turns it into prompt lines.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .errors import DimensionError, LabelingError, ParseError
from .numerics import DeterministicRng, as_matrix
from .schemas import EdgeDocument, GraphDocument

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: str = ""
    feat: Tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    node_features: np.ndarray
    edges: Tuple[Edge, ...] = ()
    node_labels: Optional[Tuple[str, ...]] = None
    undirected: bool = True
    # index of each node in the graph it was cut from (subgraphs only)
    origin: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        features = as_matrix(self.node_features, "node_features")
        features.setflags(write=False)
        object.__setattr__(self, "node_features", features)
        n = features.shape[0]

        if self.node_labels is not None:
            labels = tuple(str(label) for label in self.node_labels)
            if len(labels) != n:
                raise DimensionError(f"Expected {n} node labels, got {len(labels)}")
            object.__setattr__(self, "node_labels", labels)
        if self.origin is not None:
            origin = tuple(int(o) for o in self.origin)
            if len(origin) != n:
                raise DimensionError(f"Expected {n} origin indices, got {len(origin)}")
            object.__setattr__(self, "origin", origin)

        edges = []
        seen = set()
        edge_width = None
        for k, e in enumerate(self.edges):
            src, dst = int(e.src), int(e.dst)
            if not (0 <= src < n and 0 <= dst < n):
                raise DimensionError(f"Edge {k} ({src}, {dst}) has an endpoint outside 0..{n - 1}")
            feat = tuple(float(x) for x in e.feat)
            if edge_width is None:
                edge_width = len(feat)
            elif len(feat) != edge_width:
                raise DimensionError(f"Edge {k} has {len(feat)} features, expected {edge_width}")
            if not np.all(np.isfinite(feat)):
                raise DimensionError(f"Edge {k} has non-finite features")
            if self.undirected and src > dst:
                src, dst = dst, src
            key = (src, dst, e.relation)
            if self.undirected and key in seen:
                continue
            seen.add(key)
            edges.append(Edge(src, dst, e.relation, feat))
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_feature_dim(self) -> int:
        return len(self.edges[0].feat) if self.edges else 0

    def adjacency(self) -> np.ndarray:
        n = self.node_count
        a = np.zeros((n, n))
        for e in self.edges:
            a[e.src, e.dst] = 1.0
            if self.undirected:
                a[e.dst, e.src] = 1.0
        return a

    def symmetric_adjacency(self) -> np.ndarray:
        a = self.adjacency()
        return np.maximum(a, a.T)

    def structurally_equal(self, other: "AttributedGraph") -> bool:
        return (
            self.undirected == other.undirected
            and self.node_labels == other.node_labels
            and self.origin == other.origin
            and self.node_features.shape == other.node_features.shape
            and np.array_equal(self.node_features, other.node_features)
            and sorted(self.edges, key=_edge_key) == sorted(other.edges, key=_edge_key)
        )


def _edge_key(e: Edge):
    return (e.src, e.dst, e.relation, e.feat)


@dataclass(frozen=True)
class PermutationMap:
    """perm[i] is the new index of node i."""

    perm: Tuple[int, ...]

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise DimensionError(f"Not a bijection on 0..{len(perm) - 1}: {perm}")
        object.__setattr__(self, "perm", perm)

    @property
    def size(self) -> int:
        return len(self.perm)

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: DeterministicRng) -> "PermutationMap":
        return cls(tuple(rng.permutation(n)))

    def inverse(self) -> "PermutationMap":
        inv = [0] * self.size
        for i, p in enumerate(self.perm):
            inv[p] = i
        return PermutationMap(tuple(inv))

    def apply_rows(self, m: np.ndarray) -> np.ndarray:
        """P·M: row i of M moves to row perm[i]."""
        out = np.empty_like(m)
        out[list(self.perm)] = m
        return out

    def apply_square(self, m: np.ndarray) -> np.ndarray:
        """P·M·Pᵀ."""
        return self.apply_rows(self.apply_rows(m).T).T


def permute(g: AttributedGraph, p: PermutationMap) -> AttributedGraph:
    if p.size != g.node_count:
        raise DimensionError(f"Permutation over {p.size} nodes applied to a graph with {g.node_count}")
    perm = p.perm
    labels = None
    if g.node_labels is not None:
        moved = [""] * g.node_count
        for i, label in enumerate(g.node_labels):
            moved[perm[i]] = label
        labels = tuple(moved)
    origin = None
    if g.origin is not None:
        moved = [0] * g.node_count
        for i, o in enumerate(g.origin):
            moved[perm[i]] = o
        origin = tuple(moved)
    edges = tuple(Edge(perm[e.src], perm[e.dst], e.relation, e.feat) for e in g.edges)
    return AttributedGraph(p.apply_rows(g.node_features), edges, labels, g.undirected, origin)


def normalized_adjacency(g: AttributedGraph) -> np.ndarray:
    """D̃^{-1/2}(A + I)D̃^{-1/2}; the self-loop keeps isolated nodes well defined."""
    n = g.node_count
    if n < 1:
        raise DimensionError("normalized_adjacency needs at least one node")
    a_tilde = g.adjacency() + np.eye(n)
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]


def textualize(g: AttributedGraph) -> str:
    """
    Two sections, newline-delimited:

        [nodes]
        0,A
        1,B
        [edges]
        A,causes,B

    Node ids are canonical ranks in label order, so the text does not depend
    on storage order. Edge lines are sorted; undirected edges print their
    endpoints in label order.
    """
    if g.node_labels is None:
        raise LabelingError("textualize needs node labels")
    labels = g.node_labels
    lines = ["[nodes]"]
    lines += [f"{i},{label}" for i, label in enumerate(sorted(labels))]
    edge_lines = []
    for e in g.edges:
        a, b = labels[e.src], labels[e.dst]
        if g.undirected and b < a:
            a, b = b, a
        edge_lines.append(f"{a},{e.relation},{b}")
    lines.append("[edges]")
    lines += sorted(edge_lines)
    return "\n".join(lines)


def induced_subgraph(
    g: AttributedGraph, nodes: Iterable[int], edge_indices: Optional[Iterable[int]] = None
) -> AttributedGraph:
    kept = sorted(set(int(v) for v in nodes))
    remap = {v: i for i, v in enumerate(kept)}
    if edge_indices is None:
        chosen = [e for e in g.edges if e.src in remap and e.dst in remap]
    else:
        chosen = []
        for k in edge_indices:
            e = g.edges[k]
            if e.src not in remap or e.dst not in remap:
                raise DimensionError(f"Edge {k} leaves the kept node set")
            chosen.append(e)
    edges = tuple(Edge(remap[e.src], remap[e.dst], e.relation, e.feat) for e in chosen)
    labels = tuple(g.node_labels[v] for v in kept) if g.node_labels is not None else None
    features = g.node_features[kept] if kept else np.zeros((0, g.feature_dim))
    return AttributedGraph(features, edges, labels, g.undirected, tuple(kept))


# --- MODEL CONTEXT ---

@dataclass(frozen=True, eq=False)
class AttentionIndex:
    """Flat (target, source, edge row) entries; edge row -1 marks the self entry."""

    target: np.ndarray
    source: np.ndarray
    edge_row: np.ndarray
    edge_features: np.ndarray
    node_count: int


def attention_index(edges: Sequence[Edge], node_count: int, undirected: bool = True) -> AttentionIndex:
    target = list(range(node_count))
    source = list(range(node_count))
    edge_row = [-1] * node_count
    for k, e in enumerate(edges):
        # messages flow src -> dst
        target.append(e.dst)
        source.append(e.src)
        edge_row.append(k)
        if undirected and e.src != e.dst:
            target.append(e.src)
            source.append(e.dst)
            edge_row.append(k)
    width = len(edges[0].feat) if edges else 0
    feats = np.array([e.feat for e in edges], dtype=np.float64).reshape(len(edges), width)
    return AttentionIndex(
        np.array(target, dtype=np.int64),
        np.array(source, dtype=np.int64),
        np.array(edge_row, dtype=np.int64),
        feats,
        node_count,
    )


@dataclass(frozen=True, eq=False)
class GraphContext:
    adjacency: np.ndarray
    norm_adjacency: np.ndarray
    attention: AttentionIndex
    # per-node tie-break keys that follow the node through a permutation
    node_keys: Optional[Tuple] = None

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]


def graph_context(g: AttributedGraph) -> GraphContext:
    return GraphContext(
        adjacency=g.symmetric_adjacency(),
        norm_adjacency=normalized_adjacency(g),
        attention=attention_index(g.edges, g.node_count, g.undirected),
        node_keys=canonical_keys(g),
    )


def canonical_keys(g: AttributedGraph) -> Optional[Tuple]:
    """Origin indices for subgraphs, else node labels, else None (storage order)."""
    if g.origin is not None:
        return g.origin
    return g.node_labels


# --- JSON ---

def graph_to_document(g: AttributedGraph) -> GraphDocument:
    return GraphDocument(
        n=g.node_count,
        d=g.feature_dim,
        features=g.node_features.tolist(),
        edges=[EdgeDocument(src=e.src, dst=e.dst, rel=e.relation, feat=list(e.feat)) for e in g.edges],
        labels=list(g.node_labels) if g.node_labels is not None else None,
        undirected=g.undirected,
        origin=list(g.origin) if g.origin is not None else None,
    )


def graph_from_document(doc: GraphDocument) -> AttributedGraph:
    if len(doc.features) != doc.n:
        raise ParseError(f"expected {doc.n} feature rows, got {len(doc.features)}", "features")
    for i, row in enumerate(doc.features):
        if len(row) != doc.d:
            raise ParseError(f"expected {doc.d} values, got {len(row)}", f"features[{i}]")
    if doc.n == 0 and doc.edges:
        raise ParseError("edges present but the node list is empty", "edges")
    for k, e in enumerate(doc.edges):
        if e.src >= doc.n:
            raise ParseError(f"src {e.src} out of range for {doc.n} nodes", f"edges[{k}].src")
        if e.dst >= doc.n:
            raise ParseError(f"dst {e.dst} out of range for {doc.n} nodes", f"edges[{k}].dst")
        if doc.edges and len(e.feat) != len(doc.edges[0].feat):
            raise ParseError("edge feature width differs from edges[0]", f"edges[{k}].feat")
    if doc.labels is not None and len(doc.labels) != doc.n:
        raise ParseError(f"expected {doc.n} labels, got {len(doc.labels)}", "labels")
    if doc.origin is not None and len(doc.origin) != doc.n:
        raise ParseError(f"expected {doc.n} origin entries, got {len(doc.origin)}", "origin")

    features = np.array(doc.features, dtype=np.float64).reshape(doc.n, doc.d)
    edges = tuple(Edge(e.src, e.dst, e.rel, tuple(e.feat)) for e in doc.edges)
    labels = tuple(doc.labels) if doc.labels is not None else None
    origin = tuple(doc.origin) if doc.origin is not None else None
    return AttributedGraph(features, edges, labels, doc.undirected, origin)


def validation_position(err: ValidationError) -> Tuple[str, str]:
    first = err.errors()[0]
    loc = ""
    for part in first.get("loc", ()):
        loc += f"[{part}]" if isinstance(part, int) else (f".{part}" if loc else str(part))
    return first.get("msg", str(err)), loc


def read_graph_json(text: str) -> AttributedGraph:
    try:
        doc = GraphDocument.model_validate_json(text)
    except ValidationError as e:
        msg, loc = validation_position(e)
        raise ParseError(msg, loc) from e
    return graph_from_document(doc)


def write_graph_json(g: AttributedGraph) -> str:
    return graph_to_document(g).model_dump_json()
