from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping, Protocol

OUTCOMES = ("ok", "crash", "timeout")
# added to 2*|worst| when the worst internal objective is not positive
CRASH_MARGIN = 1.0


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "olap"
    objective: str = "latency"
    queries: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("oltp", "olap"):
            raise ValueError(f"workload kind must be oltp or olap, got {self.kind!r}")
        if self.objective not in ("throughput", "latency"):
            raise ValueError(f"objective must be throughput or latency, got {self.objective!r}")


@dataclass(frozen=True)
class EvalResult:
    outcome: str
    objective_raw: float | None = None
    wall_ms: float = 0.0
    message: str = ""

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if (self.objective_raw is not None) != (self.outcome == "ok"):
            raise ValueError("objective_raw must be present exactly when outcome is ok")


class HarnessError(RuntimeError):
    pass


class Harness(Protocol):
    def evaluate(self, config: Mapping, workload: WorkloadSpec | None = None) -> EvalResult: ...

    def get_plan(self, query: str): ...

    def apply_config(self, config: Mapping) -> None: ...


def sense_normalize(value: float, sense: str) -> float:
    """Map a raw metric to the internal minimized objective."""
    if sense == "latency":
        return float(value)
    if sense == "throughput":
        return -float(value)
    raise ValueError(f"unknown objective sense {sense!r}")


def penalize(result: EvalResult, worst_so_far: float | None, sense: str = "latency") -> float:
    """Internal objective of an evaluation; crashes score twice the worst seen."""
    if result.outcome == "ok":
        return sense_normalize(result.objective_raw, sense)
    if worst_so_far is None:
        raise HarnessError("cannot score a crash before any successful evaluation")
    if worst_so_far > 0:
        return 2.0 * worst_so_far
    return 2.0 * abs(worst_so_far) + CRASH_MARGIN


@dataclass
class ExclusiveUse:
    """Rejects re-entrant or concurrent use of a harness."""

    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @contextmanager
    def hold(self):
        if not self._lock.acquire(blocking=False):
            raise HarnessError("harness is already evaluating a configuration")
        try:
            yield
        finally:
            self._lock.release()
