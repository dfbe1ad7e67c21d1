"""
Finite-difference check of every trainable block of a pipeline.

Adapter B starts at zero, which would make the A gradient identically zero;
the check therefore re-draws B at random so both factors are exercised.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import config
from .datasets import DatasetExample, generate_dataset
from .errors import ConfigError, NumericalError
from .model import build_model, prepare_examples
from .numerics import DeterministicRng, Matrix, central_difference_gradient, gradient_error
from .schemas import ENCODER_KINDS, POOLING_OPERATORS, EncoderConfig, PoolingConfig, RunConfig, SyntheticTaskSpec
from .workspace import Workspace

logger = logging.getLogger(__name__)

MAX_NODES = 8


@dataclass
class GradcheckReport:
    name: str
    blocks: Dict[str, float] = field(default_factory=dict)
    tolerance: float = config.GRADCHECK_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.blocks.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    @property
    def failing(self) -> List[str]:
        return [name for name, err in self.blocks.items() if err >= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} max_rel_err={self.max_error:.3e}"
        if not self.passed:
            line += f" blocks={','.join(self.failing)}"
        return line


def gradcheck(
    cfg: RunConfig,
    sample: DatasetExample,
    seed: int = 1,
    classes: int = 3,
    step: float = config.FD_STEP,
    tolerance: float = config.GRADCHECK_TOLERANCE,
    backward_override: Optional[Callable[[Dict[str, Matrix]], Dict[str, Matrix]]] = None,
) -> GradcheckReport:
    g = sample.graph
    if g.node_count > MAX_NODES:
        raise ConfigError(f"gradcheck samples must have at most {MAX_NODES} nodes, got {g.node_count}")
    if g.node_count < 1:
        raise ConfigError("gradcheck needs a nonempty sample graph")

    model = build_model(cfg, g.feature_dim, g.edge_feature_dim, classes, seed)
    if model.readout.adapter is not None:
        b = model.readout.adapter.b
        b[...] = DeterministicRng(seed).spawn(99).normal(b.shape, scale=0.1)
    model.backward_override = backward_override
    ex = prepare_examples([sample], [sample.label], seed)[0]

    fp, analytic = model.loss_and_grads(ex)
    report = GradcheckReport(cfg.name, tolerance=tolerance)
    params = model.parameters()
    for name, block in params.items():
        original = block.copy()

        def loss_at(values, block=block):
            block[...] = values
            return model.loss(ex)

        try:
            numeric = central_difference_gradient(loss_at, original, h=step)
        except NumericalError as e:
            raise NumericalError(f"{cfg.name}: non-finite loss while differencing '{name}': {e}") from e
        finally:
            block[...] = original
        report.blocks[name] = gradient_error(analytic[name], numeric)
        logger.debug(f"{cfg.name} {name}: rel_err={report.blocks[name]:.3e}")

    logger.info(f"gradcheck {cfg.name} ({cfg.pooling.operator}/{cfg.encoder.kind}): {report.summary()}")
    return report


def gradcheck_sample(seed: int = 1) -> DatasetExample:
    """A six-node, two-community example with edge features."""
    spec = SyntheticTaskSpec(
        n_examples=1, communities_range=(2, 2), nodes_per_community=3, block_width=2, redundancy_fraction=1.0
    )
    return generate_dataset(spec, seed)[0]


def _small_config(name: str, operator: str, kind: str, regime: str = "adapted", alpha=None) -> RunConfig:
    return RunConfig(
        name=name,
        encoder=EncoderConfig(kind=kind, hidden=4, layers=1, alpha=alpha),
        pooling=PoolingConfig(operator=operator, k=3, clusters=3, rho=0.5),
        regime=regime,
        d_llm=6,
        lora_rank=2,
        lora_scale=4.0,
    )


def preset_gradcheck_configs(workspace: Optional[Workspace] = None) -> List[RunConfig]:
    """Each shipped preset's operator, encoder and regime, shrunk to gradcheck size."""
    workspace = workspace or Workspace()
    configs = []
    for name in workspace.list_presets():
        cfg = workspace.load_preset(name)
        configs.append(_small_config(name, cfg.pooling.operator, cfg.encoder.kind, cfg.regime, cfg.encoder.alpha))
    return configs


def default_gradcheck_configs() -> List[RunConfig]:
    """Every pooling operator over the attention encoder, every encoder under mean pooling,
    then any preset combination those two sweeps miss."""
    configs = [_small_config(f"{op}-attn", op, "attn") for op in POOLING_OPERATORS]
    configs += [_small_config(f"mean-{kind}", "mean", kind) for kind in ENCODER_KINDS if kind != "attn"]
    configs.append(_small_config("topk-attn-frozen", "topk", "attn", "frozen"))
    seen = {(c.pooling.operator, c.encoder.kind, c.regime) for c in configs}
    for cfg in preset_gradcheck_configs():
        key = (cfg.pooling.operator, cfg.encoder.kind, cfg.regime)
        if key not in seen:
            seen.add(key)
            configs.append(cfg)
    return configs


def gradcheck_all(
    configs: Optional[Sequence[RunConfig]] = None, seeds: Sequence[int] = (1,), **kwargs
) -> List[GradcheckReport]:
    configs = list(configs) if configs is not None else default_gradcheck_configs()
    reports = []
    for seed in seeds:
        sample = gradcheck_sample(seed)
        for cfg in configs:
            named = cfg.model_copy(update={"name": f"{cfg.name}@{seed}"}) if len(seeds) > 1 else cfg
            reports.append(gradcheck(named, sample, seed=seed, **kwargs))
    return reports
