import logging
from typing import Any, Dict, List

from ..schemas import StageSchema, parameter_definitions

logger = logging.getLogger(__name__)


class BasePipelineStage:
    """Mixin adding pipeline metadata and shared-state bookkeeping to PocketFlow nodes."""

    STAGE_TYPE = "base"
    DESCRIPTION = "Base Stage"
    INPUTS: List[str] = []
    OUTPUTS: List[str] = []
    PARAMS: Dict[str, Any] = {}

    @classmethod
    def get_schema(cls) -> StageSchema:
        return StageSchema(
            type=cls.STAGE_TYPE,
            description=cls.DESCRIPTION,
            inputs=cls.INPUTS,
            outputs=cls.OUTPUTS,
            params=parameter_definitions(cls.PARAMS),
        )

    @property
    def stage_id(self) -> str:
        return getattr(self, "id", None) or self.STAGE_TYPE

    def setting(self, shared: dict, key: str, default=None):
        """Stage config > shared pipeline state > application default."""
        cfg = getattr(self, "config", {}) or {}
        if cfg.get(key) is not None:
            return cfg[key]
        if shared.get(key) is not None:
            return shared[key]
        return default

    def emit(self, event: str, payload: dict):
        callback = getattr(self, "on_event", None)
        logger.debug(f"{event}: {payload}")
        if callback:
            try:
                callback(event, payload)
            except Exception as e:
                logger.error(f"Event callback failed on {event}: {e}")

    def start(self, shared: dict):
        self.emit("stage_start", {"stage_id": self.stage_id, "stage_type": self.STAGE_TYPE})

    def post(self, shared, prep_res, exec_res):
        shared.setdefault("results", {})
        name = getattr(self, "name", None) or self.stage_id
        # re-insert so the latest stage is always last
        shared["results"].pop(name, None)
        shared["results"][name] = exec_res
        for key in self.OUTPUTS:
            if isinstance(exec_res, dict) and key in exec_res:
                shared[key] = exec_res[key]
        self.emit("stage_end", {"stage_id": self.stage_id, "stage_name": name})
        return None
