from .base import BasePipelineStage
from .retrieve import RetrieveStage, TextualizeStage
from .tokens import EncodeStage, GraphPrompt, PoolStage, ProjectStage

STAGE_CLASSES = {
    cls.STAGE_TYPE: cls for cls in (RetrieveStage, TextualizeStage, EncodeStage, PoolStage, ProjectStage)
}
