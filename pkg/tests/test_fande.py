import unittest

import pytest

import config
from graphtokens.errors import ConfigError, CoverageError, DimensionError, ParseError
from graphtokens.exporter import render_fande
from graphtokens.fande import (
    PredictionLog,
    SolvableSet,
    analyze,
    analyze_manifest,
    contingency,
    fande_score,
    logs_from_counts,
    parse_prediction_log,
    render_quadrant_table,
    solvable_set,
)
from graphtokens.schemas import PredictionRecord


def _record(model, seed, ex, correct=True):
    return PredictionRecord(model=model, seed=seed, id=ex, pred="a" if correct else "b", gold="a")


class TestSolvableSet(unittest.TestCase):
    def test_requires_every_seed(self):
        log = PredictionLog(
            [
                _record("m", 1, "x"),
                _record("m", 2, "x"),
                _record("m", 1, "y"),
                _record("m", 2, "y", correct=False),
            ]
        )
        self.assertEqual(solvable_set(log, "m").examples, frozenset({"x"}))

    def test_comparison_ignores_surrounding_whitespace(self):
        log = PredictionLog([PredictionRecord(model="m", seed=1, id="x", pred=" yes\n", gold="yes")])
        self.assertEqual(len(solvable_set(log, "m")), 1)

    def test_missing_prediction_is_a_coverage_gap(self):
        log = PredictionLog([_record("m", 1, "x"), _record("m", 2, "y")])
        with self.assertRaises(CoverageError) as ctx:
            solvable_set(log, "m")
        self.assertIn(("m", 1, "y"), ctx.exception.gaps)
        self.assertIn(("m", 2, "x"), ctx.exception.gaps)

    def test_unknown_model(self):
        log = PredictionLog([_record("m", 1, "x")])
        with self.assertRaises(CoverageError):
            solvable_set(log, "other")

    def test_duplicate_prediction(self):
        with self.assertRaises(DimensionError):
            PredictionLog([_record("m", 1, "x"), _record("m", 1, "x", correct=False)])


class TestScore(unittest.TestCase):
    def test_intersection_over_examples(self):
        sf = SolvableSet("f", frozenset({"a", "b", "c"}))
        se = SolvableSet("e", frozenset({"b", "c", "d"}))
        self.assertAlmostEqual(fande_score(sf, se, 8), 0.25)
        self.assertEqual(contingency(sf, se, "abcdefgh"), (2, 1, 1, 4))

    def test_disjoint_sets(self):
        sf = SolvableSet("f", frozenset({"a"}))
        se = SolvableSet("e", frozenset({"b"}))
        self.assertEqual(fande_score(sf, se, 3), 0.0)
        self.assertEqual(contingency(sf, se, "abc"), (0, 1, 1, 1))

    def test_empty_example_set(self):
        empty = SolvableSet("f", frozenset())
        with self.assertRaises(ConfigError):
            fande_score(empty, empty, 0)

    def test_solved_example_outside_p(self):
        sf = SolvableSet("f", frozenset({"z"}))
        with self.assertRaises(DimensionError):
            contingency(sf, SolvableSet("e", frozenset()), "abc")


class TestSyntheticLogs(unittest.TestCase):
    def test_counts_round_trip_through_analysis(self):
        log = logs_from_counts((315, 85, 30, 124), "mlp", "gcn")
        result = analyze(log, "mlp", "gcn")
        self.assertEqual(result.quadrants, (315, 85, 30, 124))
        self.assertEqual(result.p_size, 554)
        self.assertEqual(result.rounded, 0.57)

    def test_unsolvable_examples_fail_on_one_seed_only(self):
        log = logs_from_counts((0, 0, 0, 1), "f", "e", seeds=(1, 2, 3))
        wrong = [r for r in log.records if r.pred != r.gold]
        self.assertEqual(len(wrong), 2)
        self.assertEqual({r.seed for r in wrong}, {1})

    def test_negative_counts(self):
        with self.assertRaises(ConfigError):
            logs_from_counts((1, -1, 0, 0), "f", "e")


class TestParsing(unittest.TestCase):
    def test_reports_line_number(self):
        text = '{"model":"m","seed":1,"id":"x","pred":"a","gold":"a"}\n{"model":"m","seed":1}\n'
        with self.assertRaises(ParseError) as ctx:
            parse_prediction_log(text)
        self.assertTrue(ctx.exception.position.startswith("line 2"))

    def test_skips_blank_lines(self):
        text = '\n{"model":"m","seed":1,"id":"x","pred":"a","gold":"a"}\n\n'
        self.assertEqual(len(parse_prediction_log(text).records), 1)

    def test_jsonl_round_trip(self):
        log = logs_from_counts((1, 1, 1, 1), "f", "e", seeds=(1, 2))
        self.assertEqual(parse_prediction_log(log.to_jsonl()).records, log.records)


class TestShippedManifest:
    def test_scores(self):
        results = analyze_manifest(config.FANDE_MANIFEST)
        assert [r.rounded for r in results] == [0.57, 0.49, 0.64, 0.50]

    def test_quadrants(self):
        results = analyze_manifest(config.FANDE_MANIFEST)
        assert [r.quadrants for r in results] == [
            (315, 85, 30, 124),
            (793, 97, 118, 620),
            (352, 33, 56, 113),
            (807, 83, 129, 609),
        ]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            analyze_manifest(tmp_path / "nope.json")

    def test_renderings(self):
        results = analyze_manifest(config.FANDE_MANIFEST)
        table = render_fande(results, "table")
        assert "FandE = 315/554" in table
        assert "0.57" in table and "0.50" in table
        csv_text = render_fande(results, "csv")
        assert csv_text.splitlines()[0].startswith("dataset,pair,both")
        assert len(csv_text.splitlines()) == 5

    def test_quadrant_table_layout(self):
        result = analyze(logs_from_counts((2, 1, 1, 4), "f", "e"), "f", "e", dataset="toy")
        lines = render_quadrant_table(result).splitlines()
        assert lines[0] == "toy f/e"
        assert lines[2].split()[-2:] == ["2", "1"]
        assert lines[3].split()[-2:] == ["1", "4"]
        assert lines[-1] == "FandE = 2/8 = 0.2500 (0.25)"
