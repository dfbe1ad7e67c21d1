import pytest

from graphtokens.datasets import (
    dataset_from_jsonl,
    dataset_summary,
    dataset_to_jsonl,
    generate_dataset,
    parse_task_spec,
    read_dataset,
    write_dataset,
)
from graphtokens.errors import ConfigError, ParseError
from graphtokens.schemas import SyntheticTaskSpec


def spec(**kwargs):
    base = {"n_examples": 20, "communities_range": (2, 3)}
    base.update(kwargs)
    return SyntheticTaskSpec(**base)


def test_full_redundancy_tags_every_example_twice():
    examples = generate_dataset(spec(redundancy_fraction=1.0), seed=1)
    assert all(ex.dual_tagged for ex in examples)


def test_zero_redundancy_has_no_dual_tags():
    examples = generate_dataset(spec(redundancy_fraction=0.0), seed=1)
    assert not any(ex.dual_tagged for ex in examples)


def test_exact_dual_tag_count():
    examples = generate_dataset(spec(n_examples=100, redundancy_fraction=0.6), seed=3)
    assert sum(ex.dual_tagged for ex in examples) == 60
    assert dataset_summary(examples)["redundancy_fraction"] == 0.6


def test_structure_tag_fixes_community_count():
    examples = generate_dataset(spec(feature_signal=False, redundancy_fraction=0.0, nodes_per_community=4), seed=2)
    for ex in examples:
        assert ex.tags == ("structure",)
        assert ex.graph.node_count == 4 * ex.label


def test_labels_come_from_the_class_range():
    examples = generate_dataset(spec(n_examples=30), seed=4)
    assert {ex.label for ex in examples} == {2, 3}


def test_same_seed_is_byte_identical():
    a = dataset_to_jsonl(generate_dataset(spec(), seed=5))
    b = dataset_to_jsonl(generate_dataset(spec(), seed=5))
    assert a == b
    assert a != dataset_to_jsonl(generate_dataset(spec(), seed=6))


def test_jsonl_round_trip_keeps_examples():
    examples = generate_dataset(spec(n_examples=5), seed=7)
    again = dataset_from_jsonl(dataset_to_jsonl(examples))
    assert [ex.id for ex in again] == [ex.id for ex in examples]
    assert all(a.graph.structurally_equal(b.graph) for a, b in zip(again, examples))


def test_write_and_read_dataset_file(tmp_path):
    examples = generate_dataset(spec(n_examples=3), seed=2)
    path = write_dataset(tmp_path / "data.jsonl", examples)
    assert [ex.label for ex in read_dataset(path)] == [ex.label for ex in examples]


def test_missing_dataset_file(tmp_path):
    with pytest.raises(ConfigError):
        read_dataset(tmp_path / "absent.jsonl")


def test_bad_line_reports_its_number():
    good = dataset_to_jsonl(generate_dataset(spec(n_examples=1), seed=1))
    with pytest.raises(ParseError) as info:
        dataset_from_jsonl(good + '{"id": "x"}\n')
    assert "line 2" in str(info.value)


class TestTaskSpec:
    def test_single_signal_cannot_be_redundant(self):
        with pytest.raises(ConfigError):
            parse_task_spec('{"n_examples": 4, "feature_signal": false, "redundancy_fraction": 0.5}')

    def test_fraction_out_of_range(self):
        with pytest.raises(ConfigError):
            parse_task_spec('{"n_examples": 4, "redundancy_fraction": 1.5}')

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_task_spec('{"n_examples": 4, "colour": "red"}')
