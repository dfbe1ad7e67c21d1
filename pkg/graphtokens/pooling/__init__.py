from .base import (
    AUX_LOSS_NAMES,
    AssignmentMatrix,
    BasePoolingOperator,
    PoolResult,
    calibrate_retention,
    default_aux_weights,
    retained_count,
)
from .baselines import AllTokensOperator, MeanPoolOperator, RandKOperator, all_tokens, mean_pool, rand_k
from .clustering import (
    DiffPoolOperator,
    MinCutPoolOperator,
    diff_pool,
    diffpool_losses,
    mincut_losses,
    mincut_pool,
)
from .projector import ProjectorParams, init_projector, project_tokens, projector_backward, projector_forward
from .pruning import SAGPoolOperator, TopKOperator, sag_pool, selected_identities, topk_pool
from .virtual import VirtualNodeBank, VNPoolOperator, perceiver_encode, vn_pool
