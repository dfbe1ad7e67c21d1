from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

POOLING_OPERATORS = ("topk", "sag", "diff", "mincut", "vn", "mean", "randk", "all")
ENCODER_KINDS = ("mlp", "gcn", "attn", "sgformer", "transformer")
PROJECTOR_VARIANTS = ("bottleneck", "vn")
REGIMES = ("frozen", "adapted")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


# --- GRAPH DOCUMENTS ---

class EdgeDocument(StrictModel):
    src: int = Field(ge=0)
    dst: int = Field(ge=0)
    rel: str = ""
    feat: List[float] = []


class GraphDocument(StrictModel):
    n: int = Field(ge=0)
    d: int = Field(ge=0)
    features: List[List[float]]
    edges: List[EdgeDocument] = []
    labels: Optional[List[str]] = None
    undirected: bool = True
    origin: Optional[List[int]] = None


class DatasetRecord(StrictModel):
    id: str
    label: int
    tags: List[Literal["feature", "structure"]]
    graph: GraphDocument


class SyntheticTaskSpec(StrictModel):
    n_examples: int = Field(ge=1)
    communities_range: Tuple[int, int] = (2, 3)
    nodes_per_community: int = Field(default=4, ge=2)
    feature_signal: bool = True
    structure_signal: bool = True
    redundancy_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    noise_scale: float = Field(default=0.3, ge=0.0)
    block_width: int = Field(default=4, ge=1)
    signal_strength: float = Field(default=1.0, gt=0.0)

    @field_validator("communities_range")
    @classmethod
    def _check_range(cls, v):
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError(f"communities_range must satisfy 1 <= lo <= hi, got {v}")
        return v

    @model_validator(mode="after")
    def _check_signals(self):
        if not (self.feature_signal or self.structure_signal):
            raise ValueError("at least one of feature_signal / structure_signal must be set")
        if not (self.feature_signal and self.structure_signal) and self.redundancy_fraction > 0:
            raise ValueError("redundancy_fraction > 0 needs both feature_signal and structure_signal")
        return self

    @property
    def classes(self) -> List[int]:
        lo, hi = self.communities_range
        return list(range(lo, hi + 1))


# --- PIPELINE CONFIGS ---

class EncoderConfig(StrictModel):
    kind: Literal["mlp", "gcn", "attn", "sgformer", "transformer"] = "attn"
    layers: Optional[int] = Field(default=None, ge=1)
    hidden: Optional[int] = Field(default=None, ge=1)
    alpha: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    attn_layers: Optional[int] = Field(default=None, ge=1)


class PoolingConfig(StrictModel):
    operator: Literal["topk", "sag", "diff", "mincut", "vn", "mean", "randk", "all"] = "mean"
    k: int = Field(default=8, ge=1)
    clusters: int = Field(default=8, ge=1)
    rho: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    projector: Optional[Literal["bottleneck", "vn"]] = None
    assign_layers: int = Field(default=1, ge=1)

    @property
    def projector_variant(self) -> str:
        # VNPool uses the wide ReLU projector, everything else the sigmoid bottleneck
        if self.projector:
            return self.projector
        return "vn" if self.operator == "vn" else "bottleneck"


class RunConfig(StrictModel):
    name: str = "run"
    encoder: EncoderConfig = EncoderConfig()
    pooling: PoolingConfig = PoolingConfig()
    regime: Literal["frozen", "adapted"] = "adapted"
    seeds: List[int] = [1, 2, 3, 4]
    epochs: int = Field(default=10, ge=0)
    lr: float = Field(default=0.05, ge=0.0)
    aux_weight: float = Field(default=1.0, ge=0.0)
    aux_weights: Dict[str, float] = {}
    d_llm: Optional[int] = Field(default=None, ge=1)
    lora_rank: Optional[int] = Field(default=None, ge=1)
    lora_scale: Optional[float] = Field(default=None, gt=0.0)
    eval_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    workers: int = Field(default=1, ge=1)
    dataset: Optional[str] = None
    synthetic: Optional[SyntheticTaskSpec] = None
    dataset_seed: int = 0

    @field_validator("aux_weights")
    @classmethod
    def _check_aux_names(cls, v):
        unknown = set(v) - {"lp", "entropy", "cut", "ortho"}
        if unknown:
            raise ValueError(f"unknown aux losses: {sorted(unknown)}")
        return v


class ProjectorCheckpoint(StrictModel):
    variant: Literal["bottleneck", "vn"]
    d_llm: int
    w1: List[List[float]]
    b1: List[float]
    w2: List[List[float]]
    b2: List[float]


class EncoderCheckpoint(StrictModel):
    kind: Literal["mlp", "gcn", "attn", "sgformer", "transformer"]
    layers: List[Dict[str, Any]]
    attn_layers: List[Dict[str, Any]] = []
    alpha: float = 0.5


# --- COMPONENT METADATA ---

class ParameterDefinition(BaseModel):
    type: str  # "string", "boolean", "int", "float"
    enum: Optional[List[str]] = None
    default: Optional[Any] = None
    description: Optional[str] = None


class OperatorSchema(BaseModel):
    type: str
    description: str
    family: str
    aux_losses: List[str] = []
    params: Dict[str, ParameterDefinition] = {}


class StageSchema(BaseModel):
    type: str
    description: str
    inputs: List[str] = []
    outputs: List[str] = []
    params: Dict[str, ParameterDefinition] = {}


def parameter_definitions(params: Dict[str, Any]) -> Dict[str, ParameterDefinition]:
    """Expand the short `{"name": "int"}` form used in class PARAMS."""
    return {
        name: ParameterDefinition(**spec) if isinstance(spec, dict) else ParameterDefinition(type=spec)
        for name, spec in params.items()
    }


# --- PIPELINE STAGES ---

class StageConfig(StrictModel):
    id: str
    type: str
    label: str = ""
    data: Dict[str, Any] = {}


class PipelineSpec(StrictModel):
    stages: List[StageConfig]


# --- REPORTS AND LOGS ---

class PredictionRecord(StrictModel):
    model: str
    seed: int
    id: str
    pred: str
    gold: str


class SeedResult(StrictModel):
    seed: int
    final_accuracy: float = Field(ge=0.0, le=1.0)
    accuracy_curve: List[float] = []
    loss_curve: List[float] = []


class RunReport(StrictModel):
    name: str
    operator: str
    encoder: str
    regime: Literal["frozen", "adapted"]
    seeds: List[SeedResult]
    mean: float
    std: float = Field(ge=0.0)
    lora_rank: Optional[int] = None
    lora_scale: Optional[float] = None
    readout_checksum_before: str = ""
    readout_checksum_after: str = ""


class FandeManifestEntry(StrictModel):
    dataset: str
    pair: str
    log: str
    feature_model: str
    edge_model: str


class FandeManifest(StrictModel):
    entries: List[FandeManifestEntry]


class CliConfig(StrictModel):
    """Resolved command-line settings, validated before any work begins."""

    subcommand: str
    inputs: List[str] = []
    out: Optional[str] = None
    seeds: List[int] = []
    pooling: Optional[PoolingConfig] = None
    encoder: Optional[EncoderConfig] = None
    regime: Optional[Literal["frozen", "adapted"]] = None
    format: Literal["json", "csv", "table"] = "table"
