import math

import numpy as np
import pytest

from graphtokens.encoders import EncoderParams, init_encoder
from graphtokens.errors import DimensionError, NumericalError, ParseError
from graphtokens.graph import AttributedGraph, Edge, PermutationMap, graph_context, permute
from graphtokens.numerics import DeterministicRng, row_softmax
from graphtokens.operator_registry import registry
from graphtokens.pooling import (
    AssignmentMatrix,
    PoolResult,
    VirtualNodeBank,
    all_tokens,
    calibrate_retention,
    diff_pool,
    diffpool_losses,
    init_projector,
    mean_pool,
    mincut_losses,
    mincut_pool,
    perceiver_encode,
    project_tokens,
    rand_k,
    retained_count,
    sag_pool,
    selected_identities,
    topk_pool,
    vn_pool,
)
from graphtokens.pooling.projector import load_projector, projector_to_checkpoint
from graphtokens.schemas import PoolingConfig


class TestBaselines:
    def test_mean_of_identical_rows(self):
        r = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(mean_pool(np.tile(r, (4, 1))).tokens, [r])

    def test_mean_arithmetic(self):
        np.testing.assert_array_equal(mean_pool(np.array([[0.0, 2.0], [2.0, 0.0]])).tokens, [[1.0, 1.0]])

    def test_rand_k_all_nodes_is_a_permutation(self):
        h = DeterministicRng(1).normal((5, 2))
        result = rand_k(h, 5, seed=3)
        assert sorted(result.selection) == list(range(5))

    def test_rand_k_is_deterministic(self):
        h = DeterministicRng(1).normal((10, 2))
        assert rand_k(h, 3, seed=7).selection == rand_k(h, 3, seed=7).selection
        assert rand_k(h, 3, seed=7).selection == tuple(DeterministicRng(7).sample(10, 3))

    def test_rand_k_on_small_graph_warns(self):
        result = rand_k(np.ones((2, 2)), 4, seed=1)
        assert result.token_count == 4
        assert result.warnings

    def test_all_tokens(self):
        h = DeterministicRng(2).normal((3, 2))
        result = all_tokens(h)
        np.testing.assert_array_equal(result.tokens, h)
        assert result.token_count == 3
        assert result.aux_losses == {}


class TestPruning:
    def test_topk_example(self):
        h = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
        result = topk_pool(h, [1.0, 0.0], rho=2 / 3)
        assert result.selection == (2, 0)
        np.testing.assert_allclose(result.tokens, [[2 * math.tanh(2.0), 0.0], [math.tanh(1.0), 0.0]])

    def test_topk_full_retention_saturates(self):
        h = np.array([[50.0, 1.0], [40.0, 2.0]])
        result = topk_pool(h, [1.0, 0.0], rho=1.0)
        assert result.token_count == 2
        np.testing.assert_allclose(np.sort(result.tokens, axis=0), np.sort(h, axis=0))

    def test_ties_keep_lower_index(self):
        h = np.array([[1.0], [1.0], [1.0]])
        assert topk_pool(h, [1.0], rho=1 / 3).selection == (0,)

    def test_ties_follow_node_keys(self):
        h = np.array([[1.0], [1.0], [1.0]])
        assert topk_pool(h, [1.0], rho=1 / 3, keys=("c", "a", "b")).selection == (1,)
        assert topk_pool(h, [1.0], rho=1.0, keys=(7, 3, 5)).selection == (1, 2, 0)

    def test_retained_count(self):
        assert retained_count(2 / 3, 3) == 2
        assert retained_count(0.01, 5) == 1
        assert retained_count(1.0, 7) == 7

    def test_sag_without_edges_matches_topk(self):
        h = DeterministicRng(4).normal((6, 3))
        w = np.array([[0.6], [0.0], [0.8]])
        scorer = EncoderParams("gcn", {"layer0.w": w, "layer0.b": np.zeros((1, 1))}, 1)
        sag = sag_pool(h, np.eye(6), scorer, rho=0.5)
        top = topk_pool(h, w.ravel(), rho=0.5)
        assert sag.selection == top.selection
        np.testing.assert_allclose(sag.tokens, top.tokens, atol=1e-12)

    def test_sag_ranks_planted_bridge_first(self):
        # two triangles joined through node 6
        pairs = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 6), (6, 3)]
        features = np.array([[0.1]] * 6 + [[3.0]])
        g = AttributedGraph(features, tuple(Edge(u, v) for u, v in pairs))
        scorer = EncoderParams("gcn", {"layer0.w": np.array([[1.0]]), "layer0.b": np.zeros((1, 1))}, 1)
        result = sag_pool(g.node_features, graph_context(g).norm_adjacency, scorer, rho=0.1)
        assert result.selection == (6,)

    def test_sag_scorer_must_output_one_column(self):
        with pytest.raises(DimensionError):
            sag_pool(np.ones((2, 2)), np.eye(2), init_encoder("gcn", 2, 2, DeterministicRng(1)), rho=0.5)


class TestClusteringLosses:
    def test_one_hot_entropy_is_exactly_zero(self, two_triangles):
        s = np.repeat(np.eye(2), 3, axis=0)
        assert diffpool_losses(s, two_triangles)["entropy"] == 0.0

    def test_uniform_entropy_is_log_c(self, two_triangles):
        s = np.full((6, 4), 0.25)
        assert abs(diffpool_losses(s, two_triangles)["entropy"] - math.log(4)) < 1e-12

    def test_link_prediction_zero_on_block_ones(self):
        s = np.repeat(np.eye(2), 3, axis=0)
        a = s @ s.T
        assert diffpool_losses(s, a)["lp"] == 0.0

    def test_single_cluster(self, two_triangles):
        losses = mincut_losses(np.ones((6, 1)), two_triangles)
        assert abs(losses["cut"] + 1.0) < 1e-12
        assert abs(losses["ortho"]) < 1e-12

    def test_disconnected_triangles(self, two_triangles):
        losses = mincut_losses(np.repeat(np.eye(2), 3, axis=0), two_triangles)
        assert abs(losses["cut"] + 1.0) < 1e-9
        assert abs(losses["ortho"]) < 1e-9

    def test_uniform_assignment_cut(self, random_graph):
        a = random_graph(7, seed=1, edge_prob=0.6).symmetric_adjacency()
        assert abs(mincut_losses(np.full((7, 3), 1 / 3), a)["cut"] + 1.0) < 1e-12

    def test_random_loss_ranges(self):
        rng = DeterministicRng(2024)
        for _ in range(500):
            n = 2 + rng.below(9)
            c = 1 + rng.below(5)
            upper = np.triu((np.array(rng.uniform(0, 1, (n, n))) < 0.4).astype(float), 1)
            a = upper + upper.T
            s = row_softmax(rng.normal((n, c), scale=2.0))
            cut = mincut_losses(s, a)
            diff = diffpool_losses(s, a)
            assert -1.0 - 1e-12 <= cut["cut"] <= 1e-12
            assert -1e-12 <= cut["ortho"] <= math.sqrt(2) + 1e-12
            assert -1e-12 <= diff["entropy"] <= math.log(c) + 1e-12
            assert diff["lp"] >= 0.0

    def test_assignment_rows_must_sum_to_one(self):
        with pytest.raises(NumericalError):
            AssignmentMatrix(np.array([[0.5, 0.4]]))


class TestClusteringOperators:
    def test_diff_pool_shapes(self, random_graph):
        g = random_graph(6, seed=3)
        h = DeterministicRng(1).normal((6, 4))
        assign = init_encoder("gcn", 4, 3, DeterministicRng(2), layers=1)
        embed = init_encoder("gcn", 4, 4, DeterministicRng(3), layers=1)
        result = diff_pool(h, g.symmetric_adjacency(), embed, assign, 3)
        assert result.tokens.shape == (3, 4)
        assert set(result.aux_losses) == {"lp", "entropy"}
        assert result.coarse_adjacency.shape == (3, 3)

    def test_mincut_pool_fewer_nodes_than_clusters(self):
        h = DeterministicRng(1).normal((2, 3))
        assign = init_encoder("mlp", 3, 4, DeterministicRng(2), layers=1)
        result = mincut_pool(h, np.array([[0.0, 1.0], [1.0, 0.0]]), assign, 4)
        assert result.token_count == 2
        assert result.warnings
        assert result.assignment.clusters == 2

    def test_mincut_coarse_adjacency_has_zero_diagonal(self, random_graph):
        g = random_graph(6, seed=5, edge_prob=0.7)
        h = DeterministicRng(1).normal((6, 4))
        result = mincut_pool(h, g.symmetric_adjacency(), init_encoder("mlp", 4, 3, DeterministicRng(2), layers=1), 3)
        np.testing.assert_array_equal(np.diag(result.coarse_adjacency), np.zeros(3))


class TestVirtualNodes:
    def test_single_node_graph(self):
        bank = VirtualNodeBank.initialize(3, 2, DeterministicRng(1))
        x = np.array([[0.4, -1.2]])
        np.testing.assert_allclose(vn_pool(x, bank).tokens, np.tile(x @ bank.w_v, (3, 1)), atol=1e-12)

    def test_identical_rows_give_identical_tokens(self):
        bank = VirtualNodeBank.initialize(4, 2, DeterministicRng(2))
        tokens = vn_pool(np.tile([[1.0, 2.0]], (5, 1)), bank).tokens
        np.testing.assert_allclose(tokens, np.tile(tokens[0], (4, 1)), atol=1e-12)

    def test_two_nodes_match_brute_force(self):
        bank = VirtualNodeBank.initialize(2, 2, DeterministicRng(3))
        h = np.array([[1.0, 0.5], [-0.5, 2.0]])
        expected = []
        for lat in bank.h_vn:
            logits = np.array([(lat @ bank.w_q) @ (row @ bank.w_k) / np.sqrt(2) for row in h])
            w = np.exp(logits - logits.max())
            w /= w.sum()
            expected.append(sum(wi * (row @ bank.w_v) for wi, row in zip(w, h)))
        np.testing.assert_allclose(vn_pool(h, bank).tokens, np.array(expected), atol=1e-12)

    def test_perceiver_equivalence(self):
        rng = DeterministicRng(77)
        for _ in range(200):
            n, k, d = 1 + rng.below(32), 1 + rng.below(8), 1 + rng.below(16)
            bank = VirtualNodeBank.initialize(k, d, rng)
            h = rng.normal((n, d))
            vn = vn_pool(h, bank).tokens
            lat = perceiver_encode(bank.h_vn, h, bank.w_q, bank.w_k, bank.w_v)
            assert np.linalg.norm(vn - lat) <= 1e-12

    def test_zero_query_ignores_latents(self):
        rng = DeterministicRng(5)
        h = rng.normal((4, 3))
        w_q, w_k, w_v = np.zeros((3, 3)), rng.normal((3, 3)), rng.normal((3, 3))
        a = perceiver_encode(rng.normal((2, 3)), h, w_q, w_k, w_v)
        b = perceiver_encode(10 * rng.normal((2, 3)), h, w_q, w_k, w_v)
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestRetention:
    def test_calibration(self):
        assert calibrate_retention(8, 18.18) == 0.44
        assert calibrate_retention(8, 6) == 1.0
        assert calibrate_retention(8, 8) == 1.0


def test_zero_projector_outputs_zero():
    p = init_projector("bottleneck", 3, 4, DeterministicRng(1))
    for block in p.blocks().values():
        block[...] = 0.0
    out = project_tokens(np.ones((2, 3)), p)
    assert out.shape == (2, 4)
    np.testing.assert_array_equal(out, np.zeros((2, 4)))


@pytest.mark.parametrize("variant", ["bottleneck", "vn"])
def test_projector_checkpoint_round_trip(variant):
    p = init_projector(variant, 3, 4, DeterministicRng(2))
    loaded = load_projector(projector_to_checkpoint(p).model_dump_json())
    tokens = DeterministicRng(3).normal((2, 3))
    np.testing.assert_array_equal(project_tokens(tokens, loaded), project_tokens(tokens, p))


def test_projector_checkpoint_width_mismatch():
    doc = projector_to_checkpoint(init_projector("vn", 2, 3)).model_copy(update={"d_llm": 5})
    with pytest.raises(ParseError):
        load_projector(doc.model_dump_json())


def test_pool_result_needs_a_token():
    with pytest.raises(DimensionError):
        PoolResult(np.zeros((0, 3)))


class TestPermutationInvariance:
    @pytest.mark.parametrize("operator", ["mean", "diff", "mincut", "vn"])
    def test_tokens_invariant(self, operator, random_graph):
        g = random_graph(7, seed=11)
        h = DeterministicRng(3).normal((7, 4))
        op = registry.create(PoolingConfig(operator=operator, k=3, clusters=3))
        params = op.init_params(4, DeterministicRng(4))
        base = op.pool(h, graph_context(g), params)
        for trial in range(50):
            perm = PermutationMap.random(7, DeterministicRng(100 + trial))
            moved = op.pool(perm.apply_rows(h), graph_context(permute(g, perm)), params)
            np.testing.assert_allclose(moved.tokens, base.tokens, atol=1e-9)

    @pytest.mark.parametrize("operator", ["topk", "sag"])
    def test_selected_identities_invariant(self, operator, random_graph):
        g = random_graph(8, seed=12)
        h = DeterministicRng(5).normal((8, 4))
        op = registry.create(PoolingConfig(operator=operator, rho=0.5))
        params = op.init_params(4, DeterministicRng(6))
        base = selected_identities(op.pool(h, graph_context(g), params))
        for trial in range(50):
            perm = PermutationMap.random(8, DeterministicRng(200 + trial))
            moved = op.pool(perm.apply_rows(h), graph_context(permute(g, perm)), params)
            assert selected_identities(moved, perm.inverse().perm) == base

    def test_tied_topk_scores_pick_the_same_node(self):
        h = np.array([[2.0, 0.0], [0.0, 1.0], [2.0, 0.0], [-1.0, 0.0]])
        g = AttributedGraph(h, (Edge(0, 1), Edge(2, 3)), ("b", "x", "a", "y"))
        op = registry.create(PoolingConfig(operator="topk", rho=0.25))
        params = {"p": np.array([[1.0], [0.0]])}
        assert op.pool(h, graph_context(g), params).selection == (2,)
        for trial in range(50):
            perm = PermutationMap.random(4, DeterministicRng(300 + trial))
            moved = op.pool(perm.apply_rows(h), graph_context(permute(g, perm)), params)
            assert selected_identities(moved, perm.inverse().perm) == (2,)

    def test_symmetric_pair_keeps_sag_order(self, random_graph):
        # nodes 0 and 3 form an isolated pair with equal features, so SAG ties them
        base = random_graph(8, seed=13)
        features = base.node_features.copy()
        features[3] = features[0]
        edges = [e for e in base.edges if {e.src, e.dst}.isdisjoint({0, 3})]
        edges.append(Edge(0, 3, "r", (0.0, 0.0)))
        g = AttributedGraph(features, tuple(edges), base.node_labels)
        op = registry.create(PoolingConfig(operator="sag", rho=1.0))
        params = op.init_params(4, DeterministicRng(6))
        order = op.pool(features, graph_context(g), params).selection
        assert order.index(3) == order.index(0) + 1
        for trial in range(50):
            perm = PermutationMap.random(8, DeterministicRng(400 + trial))
            moved = op.pool(perm.apply_rows(features), graph_context(permute(g, perm)), params)
            inverse = perm.inverse().perm
            assert tuple(inverse[i] for i in moved.selection) == order


class TestRegistry:
    def test_all_operators_registered(self):
        assert set(registry.operator_classes) == {"topk", "sag", "diff", "mincut", "vn", "mean", "randk", "all"}

    def test_unknown_operator(self):
        assert registry.get_operator_class("nope") is None

    def test_metadata(self):
        schemas = {s.type: s for s in registry.get_all_metadata()}
        assert schemas["mincut"].aux_losses == ["cut", "ortho"]
        assert schemas["vn"].family == "global"
        assert schemas["topk"].params["rho"].type == "float"
