import logging
from typing import Dict, List, Optional, Type

from .errors import ConfigError
from .pooling import (
    AllTokensOperator,
    BasePoolingOperator,
    DiffPoolOperator,
    MeanPoolOperator,
    MinCutPoolOperator,
    RandKOperator,
    SAGPoolOperator,
    TopKOperator,
    VNPoolOperator,
)
from .schemas import OperatorSchema, PoolingConfig

logger = logging.getLogger(__name__)


class OperatorRegistry:
    def __init__(self):
        self.operator_classes: Dict[str, Type[BasePoolingOperator]] = {}

        # Baselines
        self.register(MeanPoolOperator)
        self.register(RandKOperator)
        self.register(AllTokensOperator)
        # Pruning
        self.register(TopKOperator)
        self.register(SAGPoolOperator)
        # Clustering
        self.register(DiffPoolOperator)
        self.register(MinCutPoolOperator)
        # Global
        self.register(VNPoolOperator)

    def register(self, cls):
        if hasattr(cls, "OPERATOR_TYPE"):
            self.operator_classes[cls.OPERATOR_TYPE] = cls

    def get_operator_class(self, operator_type: str) -> Optional[Type[BasePoolingOperator]]:
        return self.operator_classes.get(operator_type)

    def create(self, cfg: PoolingConfig) -> BasePoolingOperator:
        cls = self.get_operator_class(cfg.operator)
        if cls is None:
            raise ConfigError(f"Unknown pooling operator '{cfg.operator}'")
        return cls(cfg)

    def get_all_metadata(self) -> List[OperatorSchema]:
        schemas = []
        for _, cls in self.operator_classes.items():
            try:
                schemas.append(cls.get_schema())
            except Exception as e:
                logger.error(f"Error extracting schema from {cls}: {e}")
        return schemas


registry = OperatorRegistry()
