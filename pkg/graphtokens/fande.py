"""
FandE (Features and Edges) redundancy diagnostic.

An example is solvable by a model when the model predicts it correctly under
every seed. FandE = |S_F ∩ S_E| / |P| for a feature-only model F and an
edge-aware model E over the shared example set P.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from pydantic import ValidationError

import config
from .errors import ConfigError, CoverageError, DimensionError, ParseError
from .graph import validation_position
from .schemas import FandeManifest, PredictionRecord

logger = logging.getLogger(__name__)

Quadrants = Tuple[int, int, int, int]  # (both, only edge, only feature, neither)


class PredictionLog:
    def __init__(self, records: Iterable[PredictionRecord]):
        self.records: List[PredictionRecord] = list(records)
        self._index: Dict[Tuple[str, int], Dict[str, PredictionRecord]] = {}
        for r in self.records:
            bucket = self._index.setdefault((r.model, r.seed), {})
            if r.id in bucket:
                raise DimensionError(f"Duplicate prediction for model '{r.model}', seed {r.seed}, example '{r.id}'")
            bucket[r.id] = r

    @property
    def examples(self) -> FrozenSet[str]:
        return frozenset(r.id for r in self.records)

    @property
    def models(self) -> List[str]:
        return sorted({m for m, _ in self._index})

    def seeds(self, model_id: str) -> List[int]:
        return sorted(s for m, s in self._index if m == model_id)

    def lookup(self, model_id: str, seed: int) -> Dict[str, PredictionRecord]:
        return self._index.get((model_id, seed), {})

    def to_jsonl(self) -> str:
        return "".join(r.model_dump_json() + "\n" for r in self.records)


@dataclass(frozen=True)
class SolvableSet:
    model_id: str
    examples: FrozenSet[str]

    def __len__(self):
        return len(self.examples)


def parse_prediction_log(text: str) -> PredictionLog:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(PredictionRecord.model_validate_json(line))
        except ValidationError as e:
            msg, loc = validation_position(e)
            raise ParseError(msg, f"line {lineno}" + (f" {loc}" if loc else "")) from e
    return PredictionLog(records)


def read_prediction_log(path) -> PredictionLog:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Prediction log not found: {path}")
    return parse_prediction_log(path.read_text())


def _correct(record: PredictionRecord) -> bool:
    return record.pred.strip() == record.gold.strip()


def solvable_set(
    log: PredictionLog, model_id: str, seeds: Optional[Sequence[int]] = None, examples: Optional[Iterable[str]] = None
) -> SolvableSet:
    seeds = list(seeds) if seeds is not None else log.seeds(model_id)
    if not seeds:
        raise CoverageError(f"No predictions for model '{model_id}'")
    universe = sorted(examples if examples is not None else log.examples)
    gaps = []
    for seed in seeds:
        bucket = log.lookup(model_id, seed)
        gaps.extend((model_id, seed, ex) for ex in universe if ex not in bucket)
    if gaps:
        raise CoverageError(f"Model '{model_id}' is missing predictions", gaps)
    solved = frozenset(
        ex for ex in universe if all(_correct(log.lookup(model_id, seed)[ex]) for seed in seeds)
    )
    return SolvableSet(model_id, solved)


def fande_score(sf: SolvableSet, se: SolvableSet, p_size: int) -> float:
    if p_size < 1:
        raise ConfigError("FandE needs a nonempty example set")
    return len(sf.examples & se.examples) / p_size


def contingency(sf: SolvableSet, se: SolvableSet, p: Iterable[str]) -> Quadrants:
    p = frozenset(p)
    outside = (sf.examples | se.examples) - p
    if outside:
        raise DimensionError(f"Solvable sets contain examples outside P: {sorted(outside)[:10]}")
    both = len(sf.examples & se.examples)
    only_edge = len(se.examples - sf.examples)
    only_feature = len(sf.examples - se.examples)
    return both, only_edge, only_feature, len(p) - both - only_edge - only_feature


def logs_from_counts(
    counts: Quadrants,
    feature_model: str,
    edge_model: str,
    seeds: Sequence[int] = config.DEFAULT_SEEDS,
    prefix: str = "q",
) -> PredictionLog:
    """
    Synthetic log whose solvable sets have exactly the given quadrant counts.
    An unsolvable example is wrong on one seed only, rotating through the seeds.
    """
    if any(c < 0 for c in counts):
        raise ConfigError(f"Quadrant counts must be nonnegative, got {counts}")
    both, only_edge, only_feature, neither = counts
    plan = [(True, True)] * both + [(False, True)] * only_edge + [(True, False)] * only_feature + [(False, False)] * neither
    records = []
    for model, column in ((feature_model, 0), (edge_model, 1)):
        for seed_pos, seed in enumerate(seeds):
            for i, solved in enumerate(plan):
                wrong = not solved[column] and i % len(seeds) == seed_pos
                records.append(
                    PredictionRecord(model=model, seed=seed, id=f"{prefix}-{i:05d}", pred="no" if wrong else "yes", gold="yes")
                )
    return PredictionLog(records)


@dataclass(frozen=True)
class FandeResult:
    dataset: str
    pair: str
    feature_model: str
    edge_model: str
    quadrants: Quadrants
    p_size: int

    @property
    def score(self) -> float:
        return self.quadrants[0] / self.p_size

    @property
    def rounded(self) -> float:
        return round(self.score, 2)

    def as_dict(self) -> dict:
        both, only_edge, only_feature, neither = self.quadrants
        return {
            "dataset": self.dataset,
            "pair": self.pair,
            "feature_model": self.feature_model,
            "edge_model": self.edge_model,
            "both": both,
            "only_edge": only_edge,
            "only_feature": only_feature,
            "neither": neither,
            "examples": self.p_size,
            "fande": self.score,
            "fande_rounded": self.rounded,
        }


def analyze(
    log: PredictionLog,
    feature_model: str,
    edge_model: str,
    seeds: Optional[Sequence[int]] = None,
    dataset: str = "",
    pair: str = "",
) -> FandeResult:
    p = log.examples
    sf = solvable_set(log, feature_model, seeds)
    se = solvable_set(log, edge_model, seeds)
    quadrants = contingency(sf, se, p)
    result = FandeResult(dataset, pair or f"{feature_model}/{edge_model}", feature_model, edge_model, quadrants, len(p))
    logger.info(f"FandE {result.dataset} {result.pair}: {quadrants} over {len(p)} examples -> {result.score:.4f}")
    return result


def read_manifest(path=config.FANDE_MANIFEST) -> FandeManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"FandE manifest not found: {path}")
    try:
        return FandeManifest.model_validate_json(path.read_text())
    except ValidationError as e:
        msg, loc = validation_position(e)
        raise ParseError(msg, loc) from e


def analyze_manifest(path=config.FANDE_MANIFEST, seeds: Optional[Sequence[int]] = None) -> List[FandeResult]:
    path = Path(path)
    manifest = read_manifest(path)
    results = []
    for entry in manifest.entries:
        log = read_prediction_log(path.parent / entry.log)
        results.append(analyze(log, entry.feature_model, entry.edge_model, seeds, entry.dataset, entry.pair))
    return results


def render_quadrant_table(result: FandeResult) -> str:
    """2×2 layout: rows S_E / not S_E, columns S_F / not S_F."""
    both, only_edge, only_feature, neither = result.quadrants
    f_label, e_label = result.feature_model, result.edge_model
    header = ["", f"S_F({f_label})", f"not S_F({f_label})"]
    rows = [
        [f"S_E({e_label})", str(both), str(only_edge)],
        [f"not S_E({e_label})", str(only_feature), str(neither)],
    ]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(3)]
    lines = [f"{result.dataset} {result.pair}".strip()]
    for row in [header] + rows:
        lines.append("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths))))
    lines.append(f"FandE = {both}/{result.p_size} = {result.score:.4f} ({result.rounded:.2f})")
    return "\n".join(lines)


def render_score_table(results: Sequence[FandeResult]) -> str:
    """Pair × dataset matrix of rounded scores."""
    datasets = sorted({r.dataset for r in results})
    pairs = []
    for r in results:
        if r.pair not in pairs:
            pairs.append(r.pair)
    cells = {(r.pair, r.dataset): f"{r.rounded:.2f}" for r in results}
    header = ["Model pair"] + datasets
    rows = [[pair] + [cells.get((pair, d), "-") for d in datasets] for pair in pairs]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths)))
        for row in [header] + rows
    )
