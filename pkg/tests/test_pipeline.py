import numpy as np
import pytest

from graphtokens.engine import DEFAULT_STAGES, build_pipeline, prompt_for_graph, run_pipeline, stage_metadata
from graphtokens.errors import ConfigError
from graphtokens.graph import AttributedGraph
from graphtokens.model import build_model
from graphtokens.schemas import EncoderConfig, PipelineSpec, PoolingConfig, RunConfig, StageConfig


def _config(operator="mean", **pooling):
    return RunConfig(encoder=EncoderConfig(kind="gcn", hidden=4, layers=1), pooling=PoolingConfig(operator=operator, **pooling), d_llm=6)


class TestPromptForGraph:
    def test_soft_tokens_and_text_lines(self, path_graph):
        prompt = prompt_for_graph(path_graph, _config())
        assert prompt.soft_tokens.shape == (1, 6)
        assert prompt.text_line_count == 7
        assert prompt.text.splitlines()[0] == "[nodes]"

    @pytest.mark.parametrize("operator,tokens", [("all", 3), ("topk", 2), ("vn", 4)])
    def test_token_count_follows_operator(self, path_graph, operator, tokens):
        prompt = prompt_for_graph(path_graph, _config(operator, k=4, rho=0.5))
        assert prompt.soft_token_count == tokens

    def test_textualize_off(self, path_graph):
        prompt = prompt_for_graph(path_graph, _config(), textualize=False)
        assert prompt.text == ""
        assert prompt.text_line_count == 0
        assert prompt.soft_token_count == 1

    def test_unlabeled_graph_skips_text(self):
        g = AttributedGraph(np.eye(3))
        prompt = prompt_for_graph(g, _config())
        assert prompt.text == ""
        assert prompt.soft_token_count == 1

    def test_query_retrieves_first(self, path_graph):
        prompt = prompt_for_graph(path_graph, _config(), query=[1.0, 0.0])
        assert prompt.text.startswith("[nodes]")
        assert prompt.soft_token_count == 1

    def test_empty_retrieval_gives_no_soft_tokens(self, path_graph):
        prompt = prompt_for_graph(path_graph, _config("topk", rho=0.5), query=[1.0, 0.0], top_n=0)
        assert prompt.soft_tokens.shape == (0, 6)
        assert prompt.pool is None
        assert prompt.text == "[nodes]\n[edges]"
        data = prompt.as_dict()
        assert data["pooled_tokens"] == []
        assert data["selection"] is None
        assert len(data["warnings"]) == 1

    def test_reuses_a_given_model(self, path_graph):
        cfg = _config()
        model = build_model(cfg, path_graph.feature_dim, path_graph.edge_feature_dim, 2, 1)
        first = prompt_for_graph(path_graph, cfg, model=model)
        second = prompt_for_graph(path_graph, cfg, seed=1)
        np.testing.assert_array_equal(first.soft_tokens, second.soft_tokens)

    def test_as_dict(self, path_graph):
        data = prompt_for_graph(path_graph, _config("topk", rho=0.5)).as_dict()
        assert data["soft_token_count"] == 2
        assert len(data["selection"]) == 2
        assert data["warnings"] == []


class TestPipeline:
    def test_stage_events_in_order(self, path_graph):
        events = []
        prompt_for_graph(path_graph, _config(), event_callback=lambda event, payload: events.append((event, payload)))
        starts = [p["stage_type"] for e, p in events if e == "stage_start"]
        ends = [p["stage_id"] for e, p in events if e == "stage_end"]
        assert starts == [s.type for s in DEFAULT_STAGES]
        assert ends == [s.id for s in DEFAULT_STAGES]

    def test_failing_callback_does_not_stop_the_run(self, path_graph):
        def boom(event, payload):
            raise RuntimeError("listener down")

        prompt = prompt_for_graph(path_graph, _config(), event_callback=boom)
        assert prompt.soft_token_count == 1

    def test_results_keep_stage_order(self, path_graph):
        cfg = _config()
        model = build_model(cfg, path_graph.feature_dim, path_graph.edge_feature_dim, 2, 1)
        shared = run_pipeline(PipelineSpec(stages=list(DEFAULT_STAGES)), {"graph": path_graph, "model": model})
        assert list(shared["results"]) == [s.id for s in DEFAULT_STAGES]
        assert shared["objective"] is None
        assert shared["subgraph"].node_count == 3

    def test_unknown_stage(self):
        with pytest.raises(ConfigError):
            build_pipeline([StageConfig(id="x", type="summarize")])

    def test_empty_pipeline(self):
        with pytest.raises(ConfigError):
            build_pipeline([])

    def test_pipeline_without_projection(self, path_graph):
        stages = [s for s in DEFAULT_STAGES if s.type != "project"]
        with pytest.raises(ConfigError):
            prompt_for_graph(path_graph, _config(), stages=stages)

    def test_stage_metadata(self):
        types = [m["type"] for m in stage_metadata()]
        assert types == ["retrieve", "textualize", "encode", "pool", "project"]
