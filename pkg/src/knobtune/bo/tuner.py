"""Coarse-to-fine Bayesian optimization over the tiny and full search spaces.

Iteration 0 measures the default configuration.  A Latin hypercube design
over the tiny space follows, then ``coarse_iterations`` surrogate-guided
suggestions restricted to the tiny space, then surrogate-guided suggestions
over the extended full space until the budget is spent.  Every iteration
draws from its own generator seeded by ``(seed, iteration)`` so an
interrupted session resumed from its log continues exactly as an
uninterrupted one would.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..harness.base import EvalResult, Harness, HarnessError, WorkloadSpec, penalize, sense_normalize
from ..space import SearchSpace, default_config
from .acquisition import expected_improvement
from .forest import RandomForest
from .sampling import Encoder, FullSampler, TinySampler

log = logging.getLogger(__name__)

STAGES = ("default", "lhs", "coarse", "fine")
_LHS_STREAM = 7919


@dataclass(frozen=True)
class TunerConfig:
    lhs_samples: int = 10
    coarse_iterations: int = 20
    budget: int = 100
    candidates: int = 2000
    neighbors: int = 50
    local_steps: int = 20
    n_trees: int = 10
    min_samples_split: int = 3
    seed: int = 0
    sense: str = "latency"
    max_seconds: float | None = None
    target: float | None = None

    def __post_init__(self):
        if self.lhs_samples < 1:
            raise ValueError("lhs_samples must be >= 1")
        if self.coarse_iterations < 0:
            raise ValueError("coarse_iterations must be >= 0")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.sense not in ("latency", "throughput"):
            raise ValueError(f"unknown objective sense {self.sense!r}")


@dataclass
class Observation:
    iteration: int
    stage: str
    config: dict
    objective: float
    outcome: str
    wall_ms: float
    objective_raw: float | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "stage": self.stage,
                "config": self.config,
                "objective": self.objective,
                "outcome": self.outcome,
                "wall_ms": self.wall_ms,
                "objective_raw": self.objective_raw,
            },
            sort_keys=True,
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "Observation":
        return cls(d["iteration"], d["stage"], dict(d["config"]), float(d["objective"]), d["outcome"],
                   float(d["wall_ms"]), d.get("objective_raw"))


def read_session_log(path: str | Path) -> list[Observation]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Observation.from_dict(json.loads(line)))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{n}: malformed session log line: {exc}") from exc
    return out


@dataclass
class TuningResult:
    best_config: dict
    best_objective_raw: float
    observations: list[Observation]
    fit_sizes: list[int] = field(default_factory=list)
    stop_reason: str = "budget"

    @property
    def best_internal(self) -> float:
        return min(o.objective for o in self.observations if o.outcome == "ok")


def stage_of(iteration: int, n_lhs: int, n_coarse: int) -> str:
    if iteration == 0:
        return "default"
    if iteration <= n_lhs:
        return "lhs"
    if iteration <= n_lhs + n_coarse:
        return "coarse"
    return "fine"


class Tuner:
    def __init__(self, full: SearchSpace, tiny: SearchSpace | None, harness: Harness,
                 config: TunerConfig = TunerConfig(), workload: WorkloadSpec | None = None):
        self.full = full.with_granularity("full")
        self.tiny = tiny if tiny is not None and len(tiny) else None
        self.harness = harness
        self.config = config
        self.workload = workload
        self.encoder = Encoder(self.full)
        self.full_sampler = FullSampler(self.encoder)
        self.tiny_sampler = TinySampler(self.tiny, self.encoder) if self.tiny is not None else None
        # without a tiny space the design covers the full space and the coarse stage is skipped
        self.n_coarse = config.coarse_iterations if self.tiny is not None else 0
        self.observations: list[Observation] = []
        self.rows: list[np.ndarray] = []
        self.fit_sizes: list[int] = []
        self._design: np.ndarray | None = None

    # -- bookkeeping -------------------------------------------------------

    def _worst_ok(self) -> float | None:
        ok = [o.objective for o in self.observations if o.outcome == "ok"]
        return max(ok) if ok else None

    def _record(self, iteration: int, stage: str, row: np.ndarray, result: EvalResult) -> Observation:
        config = self.encoder.physical_from_raw(row) if stage != "default" else default_config(self.full)
        if result.outcome != "ok" and stage == "default":
            raise HarnessError(f"default configuration failed to run ({result.outcome}: {result.message})")
        objective = penalize(result, self._worst_ok(), self.config.sense)
        obs = Observation(iteration, stage, config, objective, result.outcome, result.wall_ms, result.objective_raw)
        self.observations.append(obs)
        self.rows.append(row)
        return obs

    def _replay(self, previous: list[Observation]) -> None:
        for i, obs in enumerate(previous):
            if obs.iteration != i:
                raise ValueError(f"session log is not contiguous at line {i + 1}")
            self.observations.append(obs)
            self.rows.append(self.encoder.raw_from_physical(obs.config))

    # -- suggestion ----------------------------------------------------------

    def design(self) -> np.ndarray:
        if self._design is None:
            rng = np.random.default_rng([self.config.seed, _LHS_STREAM])
            sampler = self.tiny_sampler or self.full_sampler
            self._design = sampler.lhs(rng, self.config.lhs_samples)
        return self._design

    def _incumbent(self, sampler) -> np.ndarray | None:
        best = None
        for obs, row in zip(self.observations, self.rows):
            if obs.outcome == "ok" and sampler.contains(row) and (best is None or obs.objective < best[0]):
                best = (obs.objective, row)
        return None if best is None else best[1]

    def suggest(self, stage: str, rng: np.random.Generator) -> np.ndarray | None:
        sampler = self.tiny_sampler if stage == "coarse" else self.full_sampler
        X = self.encoder.normalize(np.array(self.rows))
        y = np.array([o.objective for o in self.observations])
        best = float(y.min())
        forest = RandomForest(self.config.n_trees, self.config.min_samples_split,
                              seed=int(rng.integers(2**32)))
        forest.fit(X, y, self.encoder.cat_mask)
        self.fit_sizes.append(len(y))
        seen = {r.tobytes() for r in self.rows}

        def score(rows: np.ndarray) -> np.ndarray:
            mean, var = forest.predict(self.encoder.normalize(rows))
            ei = expected_improvement(mean, var, best)
            # evaluated points are never re-suggested
            fresh = np.array([r.tobytes() not in seen for r in rows], dtype=bool)
            return np.where(fresh, ei, -np.inf)

        cand = sampler.sample(rng, self.config.candidates)
        inc = self._incumbent(sampler)
        if inc is not None and self.config.neighbors > 0:
            cand = np.vstack([cand, self._local_search(sampler, inc, score, rng)])
        ei = score(cand)
        k = int(np.argmax(ei))
        return None if ei[k] == -np.inf else cand[k]

    def _local_search(self, sampler, start: np.ndarray, score, rng) -> np.ndarray:
        """Hill-climb the acquisition from ``start`` through sampled neighbourhoods."""
        visited = []
        current, current_ei = start, -np.inf
        for _ in range(self.config.local_steps):
            nb = sampler.neighbors(current, rng, self.config.neighbors)
            if not len(nb):
                break
            visited.append(nb)
            ei = score(nb)
            k = int(np.argmax(ei))
            if not ei[k] > current_ei:
                break
            current, current_ei = nb[k], ei[k]
        return np.vstack(visited) if visited else np.empty((0, len(start)))

    # -- main loop -------------------------------------------------------------

    def _target_hit(self) -> bool:
        if self.config.target is None:
            return False
        goal = sense_normalize(self.config.target, self.config.sense)
        return any(o.outcome == "ok" and o.objective <= goal for o in self.observations)

    def run(self, log_path: str | Path | None = None, resume: bool = False) -> TuningResult:
        cfg = self.config
        if log_path is not None:
            log_path = Path(log_path)
            if resume and log_path.exists():
                self._replay(read_session_log(log_path))
            else:
                log_path.parent.mkdir(parents=True, exist_ok=True)
                log_path.write_text("", encoding="utf-8")
        started = time.monotonic()
        stop = "budget"
        with open(log_path, "a", encoding="utf-8") if log_path is not None else _NullSink() as sink:
            for i in range(len(self.observations), cfg.budget):
                if self._target_hit():
                    stop = "target"
                    break
                # the default configuration is always measured so there is a baseline to report
                if i > 0 and cfg.max_seconds is not None and time.monotonic() - started >= cfg.max_seconds:
                    stop = "time"
                    break
                stage = stage_of(i, cfg.lhs_samples, self.n_coarse)
                rng = np.random.default_rng([cfg.seed, i])
                if stage == "default":
                    row = self.encoder.raw_from_physical(default_config(self.full))
                elif stage == "lhs":
                    row = self.design()[i - 1]
                else:
                    row = self.suggest(stage, rng)
                    if row is None and stage == "coarse":
                        log.info("tiny space exhausted at iteration %d, switching to the full space", i)
                        stage = "fine"
                        row = self.suggest(stage, rng)
                    if row is None:
                        stop = "exhausted"
                        break
                config = self.encoder.physical_from_raw(row) if stage != "default" else default_config(self.full)
                result = self.harness.evaluate(config, self.workload)
                obs = self._record(i, stage, row, result)
                sink.write(obs.to_json() + "\n")
                sink.flush()
                log.debug("iteration %d %s -> %s %.6g", i, stage, obs.outcome, obs.objective)
            else:
                if self._target_hit():
                    stop = "target"
        return self.result(stop)

    def result(self, stop: str = "budget") -> TuningResult:
        ok = [o for o in self.observations if o.outcome == "ok"]
        if not ok:
            raise HarnessError("no successful evaluation")
        best = min(ok, key=lambda o: o.objective)
        return TuningResult(dict(best.config), best.objective_raw, list(self.observations),
                            list(self.fit_sizes), stop)


class _NullSink:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def write(self, _):
        pass

    def flush(self):
        pass


def run(full: SearchSpace, tiny: SearchSpace | None, harness: Harness, config: TunerConfig = TunerConfig(),
        workload: WorkloadSpec | None = None, log_path=None, resume: bool = False) -> TuningResult:
    return Tuner(full, tiny, harness, config, workload).run(log_path, resume)
