from .config import ELITISM, GLOBAL, MULTI_SCALE_THETA, NEIGHBOR, SINGLE_SCALE_THETA, SPMConfig
from .forward import neighbor_grouping_forward, spm_forward
from .pooling import pool_supertokens
from .scoring import compute_scores, elitism_filter, keep_top_k
from .types import ActiveMask, ScoreMap, SupertokenLayout, SupertokenSet, TokenGrid, WindowPartition
from .windows import make_partition, unpartition, window_partition

__all__ = [
    'ELITISM', 'GLOBAL', 'MULTI_SCALE_THETA', 'NEIGHBOR', 'SINGLE_SCALE_THETA', 'SPMConfig',
    'neighbor_grouping_forward', 'spm_forward', 'pool_supertokens',
    'compute_scores', 'elitism_filter', 'keep_top_k',
    'ActiveMask', 'ScoreMap', 'SupertokenLayout', 'SupertokenSet', 'TokenGrid', 'WindowPartition',
    'make_partition', 'unpartition', 'window_partition',
]
