from .acquisition import expected_improvement
from .forest import RandomForest
from .sampling import Encoder, FullSampler, TinySampler, lhs_sample, stratified_indices
from .tuner import Observation, Tuner, TunerConfig, TuningResult, read_session_log, run, stage_of

__all__ = [
    "Encoder", "FullSampler", "Observation", "RandomForest", "TinySampler", "Tuner", "TunerConfig",
    "TuningResult", "expected_improvement", "lhs_sample", "read_session_log", "run", "stage_of",
    "stratified_indices",
]
