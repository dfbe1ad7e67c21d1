"""
Query-conditioned subgraph retrieval with a Prize-Collecting Steiner Tree.

Prizes are rank based: the top_n nodes by cosine similarity to the query get
prizes top_n, top_n-1, ..., 1 and every edge costs the same configured
constant. This scheme is a stand-in; the source method does not fix how
prizes and costs are built.

solve_pcst is a multi-start grow-and-prune heuristic:
  1. start a tree at each of the highest-prize nodes,
  2. grow it by the shortest path to the outside node whose addition (plus
     any directly attached profitable neighbours) raises the objective most,
  3. re-span the chosen nodes with a minimum spanning tree and strong-prune
     it (exact best subtree of a tree).
exact_pcst_oracle enumerates vertex subsets and is only meant for N <= 12.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

import config
from .errors import DimensionError, OracleRefusedError
from .graph import AttributedGraph, induced_subgraph

logger = logging.getLogger(__name__)

ORACLE_MAX_NODES = 12
MAX_STARTS = 8
_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class PrizedGraph:
    base: AttributedGraph
    prizes: np.ndarray
    edge_costs: np.ndarray

    def __post_init__(self):
        prizes = np.asarray(self.prizes, dtype=np.float64).ravel()
        costs = np.asarray(self.edge_costs, dtype=np.float64).ravel()
        if prizes.shape[0] != self.base.node_count:
            raise DimensionError(f"Expected {self.base.node_count} prizes, got {prizes.shape[0]}")
        if costs.shape[0] != len(self.base.edges):
            raise DimensionError(f"Expected {len(self.base.edges)} edge costs, got {costs.shape[0]}")
        if np.any(prizes < 0) or not np.all(np.isfinite(prizes)):
            raise DimensionError("Prizes must be finite and nonnegative")
        if np.any(costs <= 0) or not np.all(np.isfinite(costs)):
            raise DimensionError("Edge costs must be finite and positive")
        object.__setattr__(self, "prizes", prizes)
        object.__setattr__(self, "edge_costs", costs)


def cosine_similarities(g: AttributedGraph, query_vec) -> np.ndarray:
    q = np.asarray(query_vec, dtype=np.float64).ravel()
    if q.shape[0] != g.feature_dim:
        raise DimensionError(f"Query width {q.shape[0]} does not match feature width {g.feature_dim}")
    x = g.node_features
    norms = np.linalg.norm(x, axis=1)
    q_norm = np.linalg.norm(q)
    sims = np.zeros(g.node_count)
    if q_norm == 0:
        return sims
    ok = norms > 0
    sims[ok] = (x[ok] @ q) / (norms[ok] * q_norm)
    return sims


def assign_prizes(
    g: AttributedGraph, query_vec, top_n: int, edge_cost: float = config.EDGE_COST
) -> PrizedGraph:
    sims = cosine_similarities(g, query_vec)
    ranked = sorted(range(g.node_count), key=lambda i: (-sims[i], i))
    prizes = np.zeros(g.node_count)
    for rank, i in enumerate(ranked[: max(0, top_n)]):
        prizes[i] = float(top_n - rank)
    costs = np.full(len(g.edges), float(edge_cost))
    return PrizedGraph(g, prizes, costs)


# --- SOLVER ---

def _cost_graph(pg: PrizedGraph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(pg.base.node_count))
    for k, e in enumerate(pg.base.edges):
        if e.src == e.dst:
            continue
        cost = float(pg.edge_costs[k])
        if G.has_edge(e.src, e.dst) and G[e.src][e.dst]["weight"] <= cost:
            continue
        G.add_edge(e.src, e.dst, weight=cost, index=k)
    return G


def _span(G: nx.Graph, nodes) -> Optional[Tuple[float, List[Tuple[int, int]]]]:
    """MST cost and edges over the induced subgraph, or None when it is disconnected."""
    nodes = sorted(nodes)
    if len(nodes) == 1:
        return 0.0, []
    sub = G.subgraph(nodes)
    if not nx.is_connected(sub):
        return None
    tree = nx.minimum_spanning_tree(sub, weight="weight")
    edges = sorted((min(u, v), max(u, v)) for u, v in tree.edges())
    return sum(G[u][v]["weight"] for u, v in edges), edges


def _value(G: nx.Graph, prizes: np.ndarray, nodes) -> float:
    spanned = _span(G, nodes)
    if spanned is None:
        return float("-inf")
    return float(prizes[sorted(nodes)].sum()) - spanned[0]


def _attach_neighbours(G: nx.Graph, prizes: np.ndarray, nodes: set) -> set:
    nodes = set(nodes)
    changed = True
    while changed:
        changed = False
        for u in sorted(set().union(*(G[v] for v in nodes)) - nodes):
            link = min(G[u][v]["weight"] for v in G[u] if v in nodes)
            if prizes[u] > link + _EPS:
                nodes.add(u)
                changed = True
    return nodes


def _grow(G: nx.Graph, prizes: np.ndarray, root: int) -> set:
    current = {root}
    value = float(prizes[root])
    while True:
        dist, paths = nx.multi_source_dijkstra(G, current, weight="weight")
        best, best_value = None, value
        for v in sorted(paths):
            if v in current:
                continue
            # only prized nodes and hubs next to prized nodes can pay for a path
            if prizes[v] <= 0 and not any(prizes[u] > 0 and u not in current for u in G[v]):
                continue
            candidate = _attach_neighbours(G, prizes, current | set(paths[v]))
            cand_value = _value(G, prizes, candidate)
            if cand_value > best_value + _EPS:
                best, best_value = candidate, cand_value
        if best is None:
            return current
        current, value = best, best_value


def _strong_prune(prizes: np.ndarray, nodes, edges, weights: Dict[Tuple[int, int], float]):
    """Best connected subtree of a tree: returns (value, nodes, edges)."""
    nodes = sorted(nodes)
    adj = {v: [] for v in nodes}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    root = nodes[0]
    parent = {root: None}
    order = [root]
    for v in order:
        for u in sorted(adj[v]):
            if u not in parent:
                parent[u] = v
                order.append(u)
    best_down = {}
    for v in reversed(order):
        total = float(prizes[v])
        for u in adj[v]:
            if parent.get(u) == v:
                total += max(0.0, best_down[u] - weights[(min(u, v), max(u, v))])
        best_down[v] = total

    top = max(nodes, key=lambda v: (best_down[v], -v))
    if best_down[top] <= 0:
        return 0.0, [], []
    kept, kept_edges, stack = [top], [], [top]
    while stack:
        v = stack.pop()
        for u in sorted(adj[v]):
            if parent.get(u) == v and best_down[u] - weights[(min(u, v), max(u, v))] > 0:
                kept.append(u)
                kept_edges.append((min(u, v), max(u, v)))
                stack.append(u)
    return best_down[top], sorted(kept), kept_edges


def solve_pcst(pg: PrizedGraph, max_starts: int = MAX_STARTS) -> AttributedGraph:
    prizes = pg.prizes
    G = _cost_graph(pg)
    starts = sorted((v for v in range(len(prizes)) if prizes[v] > 0), key=lambda v: (-prizes[v], v))
    best = (0.0, [], [])
    for root in starts[:max_starts]:
        grown = _grow(G, prizes, root)
        _, span_edges = _span(G, grown)
        weights = {(u, v): G[u][v]["weight"] for u, v in span_edges}
        pruned = _strong_prune(prizes, grown, span_edges, weights)
        if pruned[0] > best[0] + _EPS:
            best = pruned
    value, nodes, edges = best
    edge_indices = sorted(G[u][v]["index"] for u, v in edges)
    logger.debug(f"PCST kept {len(nodes)} nodes, {len(edge_indices)} edges, objective {value:.6f}")
    return induced_subgraph(pg.base, nodes, edge_indices)


def pcst_objective(sub: AttributedGraph, pg: PrizedGraph) -> float:
    if sub.node_count == 0:
        return 0.0
    if sub.origin is None:
        raise DimensionError("Subgraph does not record its origin in the base graph")
    n = pg.base.node_count
    for o in sub.origin:
        if not 0 <= o < n:
            raise DimensionError(f"Node {o} is not in the base graph")
    total = float(sum(pg.prizes[o] for o in sub.origin))
    cheapest: Dict[Tuple[int, int, str], float] = {}
    for be, cost in zip(pg.base.edges, pg.edge_costs):
        ends = [(be.src, be.dst)]
        if pg.base.undirected:
            ends.append((be.dst, be.src))
        for u, v in ends:
            key = (u, v, be.relation)
            cheapest[key] = min(cheapest.get(key, float(cost)), float(cost))
    for e in sub.edges:
        a, b = sub.origin[e.src], sub.origin[e.dst]
        cost = cheapest.get((a, b, e.relation))
        if cost is None:
            raise DimensionError(f"Edge ({a}, {b}, '{e.relation}') is not in the base graph")
        total -= cost
    return total


def is_tree(sub: AttributedGraph) -> bool:
    if sub.node_count == 0:
        return True
    G = nx.Graph()
    G.add_nodes_from(range(sub.node_count))
    G.add_edges_from((e.src, e.dst) for e in sub.edges)
    return len(sub.edges) == sub.node_count - 1 and nx.is_connected(G)


# --- ORACLE ---

def exact_pcst_solution(pg: PrizedGraph, max_nodes: int = ORACLE_MAX_NODES) -> Tuple[float, Tuple[int, ...]]:
    n = pg.base.node_count
    if n > max_nodes:
        raise OracleRefusedError(f"Exact PCST oracle refuses graphs with {n} > {max_nodes} nodes")
    G = _cost_graph(pg)
    prizes = pg.prizes
    best_value, best_nodes = 0.0, ()
    for mask in range(1, 1 << n):
        nodes = [v for v in range(n) if mask >> v & 1]
        # the MST cost is nonnegative, so the prize sum bounds the objective
        if prizes[nodes].sum() <= best_value:
            continue
        value = _value(G, prizes, nodes)
        if value > best_value:
            best_value, best_nodes = value, tuple(nodes)
    return best_value, best_nodes


def exact_pcst_oracle(pg: PrizedGraph, max_nodes: int = ORACLE_MAX_NODES) -> float:
    return exact_pcst_solution(pg, max_nodes)[0]


def oracle_ratio(heuristic: float, exact: float) -> float:
    if exact <= 0:
        return 1.0
    return heuristic / exact


def retrieve_subgraph(
    g: AttributedGraph, query_vec: Sequence[float], top_n: int = config.TOP_N, edge_cost: float = config.EDGE_COST
) -> Tuple[AttributedGraph, float, PrizedGraph]:
    pg = assign_prizes(g, query_vec, top_n, edge_cost)
    sub = solve_pcst(pg)
    return sub, pcst_objective(sub, pg), pg
