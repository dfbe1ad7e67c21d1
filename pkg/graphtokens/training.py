"""
Multi-seed full-batch training of the graph-token pipeline, plus the
studies built on it: the LoRA rank/scale grid, the feature-versus-edge
redundancy study and the frozen-versus-adapted stability table.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from .datasets import DatasetExample
from .errors import ConfigError, NumericalError
from .model import GraphTokenModel, PreparedExample, build_model, prepare_examples
from .pooling import calibrate_retention
from .readout import weight_checksum
from .schemas import EncoderConfig, PoolingConfig, PredictionRecord, RunConfig, RunReport, SeedResult

logger = logging.getLogger(__name__)

LORA_GRID = ((2, 4), (4, 8), (8, 16), (16, 32))


@dataclass
class SeedRun:
    result: SeedResult
    model: GraphTokenModel
    predictions: List[PredictionRecord]
    checksum_before: str
    checksum_after: str


def split_examples(examples: Sequence[DatasetExample], eval_fraction: float):
    """The last round(f * n) examples form the evaluation split."""
    n = len(examples)
    n_eval = int(round(eval_fraction * n))
    if n_eval and n - n_eval < 1:
        raise ConfigError(f"eval_fraction {eval_fraction} leaves no training examples")
    return list(examples[: n - n_eval]), list(examples[n - n_eval:])


def dataset_classes(examples: Sequence[DatasetExample]) -> List[int]:
    return sorted({ex.label for ex in examples})


def _calibrated(cfg: RunConfig, examples: Sequence[DatasetExample]) -> RunConfig:
    if cfg.pooling.operator not in ("topk", "sag") or cfg.pooling.rho is not None:
        return cfg
    n_avg = float(np.mean([ex.graph.node_count for ex in examples]))
    rho = calibrate_retention(cfg.pooling.k, n_avg)
    logger.info(f"Calibrated retention ratio rho={rho} from k={cfg.pooling.k}, N_avg={n_avg:.2f}")
    return cfg.model_copy(update={"pooling": cfg.pooling.model_copy(update={"rho": rho})})


def _evaluate(model: GraphTokenModel, prepared: Sequence[PreparedExample]) -> Tuple[float, List[int]]:
    preds = [model.forward(ex).prediction for ex in prepared]
    correct = sum(1 for ex, p in zip(prepared, preds) if ex.target == p)
    return correct / len(prepared), preds


def _epoch(model: GraphTokenModel, prepared: Sequence[PreparedExample], epoch: int):
    params = model.parameters()
    totals = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    correct = 0
    for ex in prepared:
        fp, grads = model.loss_and_grads(ex)
        loss += fp.loss
        correct += int(fp.prediction == ex.target)
        for k, g in grads.items():
            totals[k] += g
    n = len(prepared)
    loss /= n
    if not np.isfinite(loss):
        raise NumericalError(f"Non-finite loss from operator '{model.operator_type}' at epoch {epoch}")
    return loss, correct / n, {k: g / n for k, g in totals.items()}


def train_seed(
    cfg: RunConfig, train_set: Sequence[DatasetExample], seed: int, classes: Sequence[int],
    eval_set: Sequence[DatasetExample] = (),
) -> SeedRun:
    if not train_set:
        raise ConfigError("Training needs a nonempty dataset")
    first = train_set[0].graph
    model = build_model(cfg, first.feature_dim, first.edge_feature_dim, len(classes), seed)
    prepared = prepare_examples(train_set, classes, seed)
    before = weight_checksum(model.readout.w0)

    loss_curve, acc_curve = [], []
    for epoch in range(cfg.epochs):
        try:
            loss, acc, grads = _epoch(model, prepared, epoch)
        except NumericalError as e:
            raise NumericalError(f"{e} (seed {seed}, epoch {epoch})") from e
        loss_curve.append(loss)
        acc_curve.append(acc)
        params = model.parameters()
        for k, g in grads.items():
            params[k] -= cfg.lr * g
        logger.debug(f"seed {seed} epoch {epoch}: loss={loss:.6f} acc={acc:.4f}")

    scored = eval_set if eval_set else train_set
    scored_prepared = prepare_examples(scored, classes, seed) if eval_set else prepared
    final_acc, preds = _evaluate(model, scored_prepared)
    after = weight_checksum(model.readout.w0)
    records = [
        PredictionRecord(model=cfg.name, seed=seed, id=ex.id, pred=str(classes[p]), gold=str(ex.label))
        for ex, p in zip(scored, preds)
    ]
    logger.info(
        f"{cfg.name}: seed {seed} finished {cfg.epochs} epochs, "
        f"{'eval' if eval_set else 'train'} accuracy {final_acc:.4f}"
    )
    result = SeedResult(seed=seed, final_accuracy=final_acc, accuracy_curve=acc_curve, loss_curve=loss_curve)
    return SeedRun(result, model, records, before, after)


def train_runs(
    cfg: RunConfig, dataset: Sequence[DatasetExample], seeds: Optional[Sequence[int]] = None
) -> Tuple[RunReport, List[SeedRun]]:
    if not dataset:
        raise ConfigError("Training needs a nonempty dataset")
    seeds = list(seeds if seeds is not None else cfg.seeds)
    if not seeds:
        raise ConfigError("Training needs at least one seed")
    cfg = _calibrated(cfg, dataset)
    classes = dataset_classes(dataset)
    train_set, eval_set = split_examples(dataset, cfg.eval_fraction)

    def run(seed):
        return train_seed(cfg, train_set, seed, classes, eval_set)

    if cfg.workers > 1:
        # seeds share nothing mutable; results come back in seed order
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            runs = list(pool.map(run, seeds))
    else:
        runs = [run(seed) for seed in seeds]

    accs = np.array([r.result.final_accuracy for r in runs])
    report = RunReport(
        name=cfg.name,
        operator=cfg.pooling.operator,
        encoder=cfg.encoder.kind,
        regime=cfg.regime,
        seeds=[r.result for r in runs],
        mean=float(accs.mean()),
        std=float(accs.std()),
        lora_rank=(cfg.lora_rank or config.LORA_RANK) if cfg.regime == "adapted" else None,
        lora_scale=(cfg.lora_scale or config.LORA_SCALE) if cfg.regime == "adapted" else None,
        readout_checksum_before=runs[0].checksum_before,
        readout_checksum_after=runs[0].checksum_after,
    )
    changed = [r.result.seed for r in runs if r.checksum_before != r.checksum_after]
    if changed:
        raise NumericalError(f"Frozen readout weights changed during training for seeds {changed}")
    logger.info(f"{cfg.name}: {cfg.pooling.operator}/{cfg.regime} mean {report.mean:.4f} ± {report.std:.4f}")
    return report, runs


def train(
    cfg: RunConfig,
    dataset: Sequence[DatasetExample],
    seeds: Optional[Sequence[int]] = None,
    epochs: Optional[int] = None,
    lr: Optional[float] = None,
) -> RunReport:
    updates = {}
    if epochs is not None:
        updates["epochs"] = epochs
    if lr is not None:
        updates["lr"] = lr
    if updates:
        cfg = cfg.model_copy(update=updates)
    return train_runs(cfg, dataset, seeds)[0]


def lora_grid(
    cfg: RunConfig,
    dataset: Sequence[DatasetExample],
    seeds: Optional[Sequence[int]] = None,
    pairs: Sequence[Tuple[int, float]] = LORA_GRID,
) -> List[RunReport]:
    reports = []
    for rank, scale in pairs:
        run_cfg = cfg.model_copy(
            update={"regime": "adapted", "lora_rank": rank, "lora_scale": float(scale), "name": f"{cfg.name}-r{rank}-a{scale:g}"}
        )
        reports.append(train(run_cfg, dataset, seeds))
    return reports


def redundancy_study(
    dataset: Sequence[DatasetExample],
    seeds: Sequence[int] = config.DEFAULT_SEEDS,
    feature_encoder: str = "mlp",
    edge_encoder: str = "gcn",
    epochs: int = config.EPOCHS,
    lr: float = config.LR,
    eval_fraction: float = 0.3,
) -> Tuple[List[PredictionRecord], Dict[str, RunReport]]:
    """
    Single-token (mean pool) frozen-regime runs of a feature-only and an
    edge-aware encoder; returns their prediction logs for the FandE diagnostic.
    """
    records: List[PredictionRecord] = []
    reports = {}
    for kind in (feature_encoder, edge_encoder):
        cfg = RunConfig(
            name=kind,
            encoder=EncoderConfig(kind=kind),
            pooling=PoolingConfig(operator="mean"),
            regime="frozen",
            seeds=list(seeds),
            epochs=epochs,
            lr=lr,
            eval_fraction=eval_fraction,
        )
        report, runs = train_runs(cfg, dataset)
        reports[kind] = report
        for run in runs:
            records.extend(run.predictions)
    return records, reports


@dataclass(frozen=True)
class StabilityRow:
    operator: str
    regime: str
    runs: int
    mean: float
    std: float
    variance_ratio: Optional[float]


def stability_report(reports: Sequence[RunReport]) -> List[StabilityRow]:
    """
    mean ± std per (operator, regime) over every seed of every matching
    report (population std), with the adapted/frozen variance ratio.
    """
    if len(reports) < 2:
        raise ConfigError(f"stability_report compares at least 2 run reports, got {len(reports)}")
    groups: Dict[Tuple[str, str], List[float]] = {}
    for report in reports:
        groups.setdefault((report.operator, report.regime), []).extend(s.final_accuracy for s in report.seeds)

    variances = {key: float(np.var(values)) for key, values in groups.items()}
    rows = []
    for (operator, regime), values in sorted(groups.items()):
        ratio = None
        frozen = variances.get((operator, "frozen"))
        adapted = variances.get((operator, "adapted"))
        if frozen is not None and adapted is not None and frozen > 0:
            ratio = adapted / frozen
        rows.append(
            StabilityRow(operator, regime, len(values), float(np.mean(values)), float(np.std(values)), ratio)
        )
    return rows
