from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

# Define the root directory of the project
ROOT_DIR = Path(__file__).resolve().parent

# Define paths for commonly used files
PACKAGE_DIR = ROOT_DIR / "graphtokens"
PRESETS_DIR = PACKAGE_DIR / "presets"
FIXTURES_DIR = PACKAGE_DIR / "fixtures"
FANDE_MANIFEST = FIXTURES_DIR / "fande" / "manifest.json"


class Settings(BaseSettings):
    """App defaults. Any field can be overridden with a GRAPHTOKENS_<NAME> env var."""

    model_config = SettingsConfigDict(env_prefix="GRAPHTOKENS_")

    log_level: str = "INFO"

    # Model sizes (desk scale)
    d_llm: int = 32
    hidden_dim: int = 16
    encoder_layers: int = 2
    tokens: int = 8
    clusters: int = 8
    sgformer_alpha: float = 0.5

    # Retrieval
    edge_cost: float = 0.5
    top_n: int = 10

    # Training
    lr: float = 0.05
    epochs: int = 10
    aux_weight: float = 1.0
    lora_rank: int = 8
    lora_scale: float = 16.0

    # Gradient checking
    fd_step: float = 1e-5
    gradcheck_floor: float = 1e-4
    gradcheck_tolerance: float = 1e-5


settings = Settings()

# App Defaults - pipeline configuration
D_LLM = settings.d_llm
HIDDEN_DIM = settings.hidden_dim
ENCODER_LAYERS = settings.encoder_layers
TOKENS = settings.tokens
CLUSTERS = settings.clusters
SGFORMER_ALPHA = settings.sgformer_alpha

EDGE_COST = settings.edge_cost
TOP_N = settings.top_n

LR = settings.lr
EPOCHS = settings.epochs
AUX_WEIGHT = settings.aux_weight
LORA_RANK = settings.lora_rank
LORA_SCALE = settings.lora_scale
DEFAULT_SEEDS = (1, 2, 3, 4)

FD_STEP = settings.fd_step
GRADCHECK_FLOOR = settings.gradcheck_floor
GRADCHECK_TOLERANCE = settings.gradcheck_tolerance
