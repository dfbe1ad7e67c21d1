import numpy as np
import pytest

from graphtokens.encoders import cross_attention_backward, cross_attention_forward, encoder_backward, encoder_forward, init_encoder
from graphtokens.errors import ConfigError
from graphtokens.gradcheck import (
    MAX_NODES,
    default_gradcheck_configs,
    gradcheck,
    gradcheck_all,
    gradcheck_sample,
    preset_gradcheck_configs,
)
from graphtokens.graph import graph_context
from graphtokens.numerics import DeterministicRng, central_difference_gradient, gradient_error, relative_error, row_softmax
from graphtokens.pooling import diffpool_losses, init_projector, mincut_losses
from graphtokens.pooling.clustering import diffpool_losses_backward, mincut_losses_backward
from graphtokens.pooling.projector import projector_backward, projector_forward
from graphtokens.readout import cross_entropy, init_readout, readout_backward, readout_forward
from graphtokens.schemas import ENCODER_KINDS, EncoderConfig, PoolingConfig, RunConfig

TOL = 1e-5
SEEDS = range(1, 11)


def _soft_assignment(n, c, seed):
    return row_softmax(DeterministicRng(seed).normal((n, c)))


def _random_adjacency(n, seed):
    rng = DeterministicRng(seed)
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.next_float() < 0.5:
                a[i, j] = a[j, i] = 1.0
    # keep every node attached so degrees stay positive
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return a


class TestAuxLossGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_mincut_on_four_nodes(self, seed):
        a = _random_adjacency(4, seed)
        s = _soft_assignment(4, 2, seed)
        weights = {"cut": 1.0, "ortho": 1.0}

        def f(x):
            losses = mincut_losses(x, a)
            return losses["cut"] + losses["ortho"]

        numeric = central_difference_gradient(f, s)
        assert relative_error(mincut_losses_backward(s, a, weights), numeric) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_diffpool_losses(self, seed):
        a = _random_adjacency(6, seed)
        s = _soft_assignment(6, 2, seed)
        weights = {"lp": 0.7, "entropy": 1.3}

        def f(x):
            losses = diffpool_losses(x, a)
            return 0.7 * losses["lp"] + 1.3 * losses["entropy"]

        numeric = central_difference_gradient(f, s)
        assert relative_error(diffpool_losses_backward(s, a, weights), numeric) < TOL

    def test_unweighted_terms_contribute_nothing(self, two_triangles):
        s = _soft_assignment(6, 2, 3)
        np.testing.assert_array_equal(mincut_losses_backward(s, two_triangles, {}), np.zeros_like(s))


class TestCrossAttentionGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_every_input(self, seed):
        rng = DeterministicRng(seed)
        args = {
            "x_lat": rng.normal((2, 3)),
            "x_inp": rng.normal((5, 3)),
            "w_q": rng.normal((3, 4)),
            "w_k": rng.normal((3, 4)),
            "w_v": rng.normal((3, 2)),
        }
        upstream = rng.normal((2, 2))
        _, cache = cross_attention_forward(**args)
        analytic = cross_attention_backward(cache, upstream)

        for name, value in args.items():
            def f(x, name=name):
                return float(np.sum(cross_attention_forward(**{**args, name: x})[0] * upstream))

            numeric = central_difference_gradient(f, value)
            assert relative_error(analytic[name], numeric) < TOL, name


class TestEncoderGradients:
    @pytest.mark.parametrize("kind", ENCODER_KINDS)
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_blocks_and_input(self, random_graph, kind, seed):
        g = random_graph(6, seed)
        ctx = graph_context(g)
        p = init_encoder(kind, g.feature_dim, 3, DeterministicRng(seed), layers=2, hidden=4, edge_dim=g.edge_feature_dim)
        x = g.node_features
        upstream = DeterministicRng(seed + 100).normal((6, 3))

        def loss(features):
            return float(np.sum(encoder_forward(p, features, ctx.norm_adjacency, ctx.attention)[0] * upstream))

        _, cache = encoder_forward(p, x, ctx.norm_adjacency, ctx.attention)
        d_x, grads = encoder_backward(p, cache, upstream)

        assert gradient_error(d_x, central_difference_gradient(loss, x)) < TOL
        for name, block in p.blocks.items():
            original = block.copy()

            def f(values, block=block):
                block[...] = values
                return loss(x)

            numeric = central_difference_gradient(f, original)
            block[...] = original
            assert gradient_error(grads[name], numeric) < TOL, f"{kind} {name}"


class TestProjectorAndReadoutGradients:
    @pytest.mark.parametrize("variant", ["bottleneck", "vn"])
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_projector(self, variant, seed):
        p = init_projector(variant, 3, 4, DeterministicRng(seed))
        tokens = DeterministicRng(seed + 1).normal((2, 3))
        upstream = DeterministicRng(seed + 2).normal((2, 4))
        _, cache = projector_forward(tokens, p)
        d_tokens, grads = projector_backward(p, cache, upstream)

        def loss(t):
            return float(np.sum(projector_forward(t, p)[0] * upstream))

        assert relative_error(d_tokens, central_difference_gradient(loss, tokens)) < TOL
        for name, block in p.blocks().items():
            original = block.copy()

            def f(values, block=block):
                block[...] = values
                return loss(tokens)

            numeric = central_difference_gradient(f, original)
            block[...] = original
            assert relative_error(grads[name], numeric) < TOL, name

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_readout_with_adapter(self, seed):
        p = init_readout(4, 3, DeterministicRng(seed), rank=2, scale=4.0)
        p.adapter.b[...] = DeterministicRng(seed + 5).normal(p.adapter.b.shape, scale=0.1)
        tokens = DeterministicRng(seed + 1).normal((3, 4))

        def loss(t):
            return cross_entropy(readout_forward(t, p)[0], 1)[0]

        logits, cache = readout_forward(tokens, p)
        _, d_logits = cross_entropy(logits, 1)
        d_tokens, grads = readout_backward(p, cache, d_logits)

        assert relative_error(d_tokens, central_difference_gradient(loss, tokens)) < TOL
        for name, block in (("B", p.adapter.b), ("A", p.adapter.a)):
            original = block.copy()

            def f(values, block=block):
                block[...] = values
                return loss(tokens)

            numeric = central_difference_gradient(f, original)
            block[...] = original
            assert relative_error(grads[name], numeric) < TOL, name

    def test_frozen_readout_has_no_parameter_gradients(self):
        p = init_readout(4, 2, DeterministicRng(1))
        logits, cache = readout_forward(np.ones((2, 4)), p)
        _, grads = readout_backward(p, cache, cross_entropy(logits, 0)[1])
        assert grads == {}


def _config(operator="mean", kind="attn", **extra):
    return RunConfig(
        name=f"{operator}-{kind}",
        encoder=EncoderConfig(kind=kind, hidden=4, layers=1),
        pooling=PoolingConfig(operator=operator, k=3, clusters=3, rho=0.5),
        d_llm=6,
        lora_rank=2,
        lora_scale=4.0,
        **extra,
    )


class TestPipelineGradcheck:
    def test_sample_is_small(self):
        sample = gradcheck_sample(1)
        assert sample.graph.node_count == 6
        assert sample.graph.edge_feature_dim == 2

    @pytest.mark.parametrize("operator", ["mean", "mincut"])
    def test_passes(self, operator):
        report = gradcheck(_config(operator), gradcheck_sample(1))
        assert report.passed, report.summary()
        assert any(name.startswith("readout/") for name in report.blocks)
        assert report.summary().startswith("PASS max_rel_err=")

    def test_frozen_regime_has_no_readout_blocks(self):
        report = gradcheck(_config(regime="frozen"), gradcheck_sample(1))
        assert report.passed
        assert not any(name.startswith("readout/") for name in report.blocks)

    def test_corrupted_block_fails(self):
        def corrupt(grads):
            grads = dict(grads)
            grads["projector/w1"] = grads["projector/w1"] * 1.5
            return grads

        report = gradcheck(_config(), gradcheck_sample(1), backward_override=corrupt)
        assert not report.passed
        assert report.failing == ["projector/w1"]
        assert "blocks=projector/w1" in report.summary()

    def test_refuses_large_samples(self):
        from graphtokens.datasets import generate_dataset
        from graphtokens.schemas import SyntheticTaskSpec

        spec = SyntheticTaskSpec(n_examples=1, communities_range=(3, 3), nodes_per_community=3, redundancy_fraction=1.0)
        sample = generate_dataset(spec, 1)[0]
        assert sample.graph.node_count > MAX_NODES
        with pytest.raises(ConfigError):
            gradcheck(_config(), sample)

    def test_default_configs_cover_every_operator_and_encoder(self):
        configs = default_gradcheck_configs()
        assert {c.pooling.operator for c in configs} == {"topk", "sag", "diff", "mincut", "vn", "mean", "randk", "all"}
        assert {c.encoder.kind for c in configs} == set(ENCODER_KINDS)
        assert len({c.name for c in configs}) == len(configs)

    def test_default_configs_over_ten_seeds(self):
        reports = gradcheck_all(seeds=SEEDS)
        failed = [f"{r.name}: {r.summary()}" for r in reports if not r.passed]
        assert not failed, failed
        assert reports[0].name.endswith("@1")

    def test_every_preset_combination_is_checked(self):
        checked = {(c.pooling.operator, c.encoder.kind, c.regime) for c in default_gradcheck_configs()}
        presets = preset_gradcheck_configs()
        assert {c.name for c in presets} >= {"diff-gcn", "mincut-gcn", "vn-sgformer"}
        for cfg in presets:
            assert (cfg.pooling.operator, cfg.encoder.kind, cfg.regime) in checked, cfg.name

    @pytest.mark.parametrize("kind", ["attn", "sgformer"])
    @pytest.mark.parametrize("seed", [2, 7])
    def test_virtual_nodes_near_uniform_attention(self, kind, seed):
        report = gradcheck(_config("vn", kind), gradcheck_sample(seed), seed=seed)
        assert report.passed, report.summary()
        assert "pool/vn.h" in report.blocks
