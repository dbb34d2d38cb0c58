from ._trajformer import (
    CheckpointError,
    ConfigError,
    DataError,
    Model,
    NumericError,
    ShapeError,
    Trajectory,
    delta_encode,
    featurize,
    fit_normalization,
    generate_synthetic,
    haversine,
    pretext_check,
    read_jsonl,
    train,
    write_jsonl,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "Trajectory",
    "delta_encode",
    "featurize",
    "fit_normalization",
    "generate_synthetic",
    "haversine",
    "pretext_check",
    "read_jsonl",
    "train",
    "write_jsonl",
]
