"""Best-effort adaptation co-training: joint learning of a predictor and
per-sample source weights under a discrepancy-aware objective."""

from beacon.core import (
    Config,
    Dataset,
    DiscrepancyScores,
    HyperParams,
    LabeledSample,
    RunSpec,
    ShiftSpec,
    WeightState,
    load_config,
    save_config,
    seed_rng,
)

__version__ = "0.1.0"

__all__ = [
    "Config",
    "Dataset",
    "DiscrepancyScores",
    "HyperParams",
    "LabeledSample",
    "RunSpec",
    "ShiftSpec",
    "WeightState",
    "load_config",
    "save_config",
    "seed_rng",
]
