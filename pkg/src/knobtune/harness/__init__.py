from .base import EvalResult, Harness, HarnessError, WorkloadSpec, penalize, sense_normalize
from .simulated import SimulatedHarness, SurfaceDim, SyntheticSurface

__all__ = [
    "EvalResult", "Harness", "HarnessError", "SimulatedHarness", "SurfaceDim", "SyntheticSurface",
    "WorkloadSpec", "penalize", "sense_normalize",
]
