from ._calab import (
    CheckpointError,
    ConfigError,
    DataError,
    MetricError,
    Model,
    NonFiniteError,
    Vocab,
    accuracy,
    attack_delta,
    f1_binary,
    info_nce,
    mcc,
    motif_task,
    selfcheck,
    spearman,
    tokenize,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "MetricError",
    "Model",
    "NonFiniteError",
    "Vocab",
    "accuracy",
    "attack_delta",
    "f1_binary",
    "info_nce",
    "mcc",
    "motif_task",
    "selfcheck",
    "spearman",
    "tokenize",
]
