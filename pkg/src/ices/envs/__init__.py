from .base import EnvSpec, MultiAgentEnv, ProtocolError, StepResult
from .corridor import ACTION_NAMES, CorridorConfig, NoisyCorridor, noisy_tv_mask
from .matrix_game import (
    CooperativeMatrixGame,
    MatrixGameTable,
    counterfactual_row,
    oracle_scaffold,
    oracle_table,
    shipped_table,
)

__all__ = [
    "ACTION_NAMES",
    "CooperativeMatrixGame",
    "CorridorConfig",
    "EnvSpec",
    "MatrixGameTable",
    "MultiAgentEnv",
    "NoisyCorridor",
    "ProtocolError",
    "StepResult",
    "counterfactual_row",
    "noisy_tv_mask",
    "oracle_scaffold",
    "oracle_table",
    "shipped_table",
]
