"""Offline stand-in for a DBMS: a deterministic synthetic performance surface."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .base import EvalResult, ExclusiveUse, HarnessError, WorkloadSpec


def _query_key(query: str) -> str:
    return " ".join(query.split()).rstrip(";")


@dataclass(frozen=True)
class SurfaceDim:
    target: object
    weight: float = 1.0
    low: float = 0.0
    high: float = 1.0


@dataclass
class SyntheticSurface:
    """Weighted squared distance to per-knob targets in normalized coordinates.

    Latency surfaces return ``base + scale * dist - bonuses``; throughput
    surfaces return ``base - scale * dist + bonuses`` (floored just above 0).
    A bonus applies when a knob sits exactly on its special value.  Crash
    rules fire when the summed value of the listed knobs exceeds a limit.
    Dimensions missing from a configuration do not contribute.
    """

    dims: dict[str, SurfaceDim]
    base: float = 100.0
    scale: float = 100.0
    sense: str = "latency"
    bonuses: list[dict] = field(default_factory=list)
    crash_rules: list[dict] = field(default_factory=list)
    noise: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSurface":
        return cls(
            dims={k: SurfaceDim(**v) for k, v in d["dims"].items()},
            base=float(d.get("base", 100.0)),
            scale=float(d.get("scale", 100.0)),
            sense=d.get("sense", "latency"),
            bonuses=list(d.get("bonuses", [])),
            crash_rules=list(d.get("crash_rules", [])),
            noise=float(d.get("noise", 0.0)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSurface":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "dims": {k: vars(v) for k, v in self.dims.items()},
            "base": self.base,
            "scale": self.scale,
            "sense": self.sense,
            "bonuses": self.bonuses,
            "crash_rules": self.crash_rules,
            "noise": self.noise,
            "seed": self.seed,
        }

    def crashes(self, config: Mapping) -> bool:
        for rule in self.crash_rules:
            total = sum(float(config.get(k, 0)) for k in rule["knobs"])
            if total > float(rule["max_total"]):
                return True
        return False

    def distance(self, config: Mapping) -> float:
        dist = 0.0
        for name, dim in self.dims.items():
            if name not in config:
                # knob left untouched by the tuner: constant contribution, ignored
                continue
            x = config[name]
            if isinstance(dim.target, (str, bool)) or isinstance(x, (str, bool)):
                d = 0.0 if x == dim.target else 1.0
            else:
                span = (dim.high - dim.low) or 1.0
                d = (float(x) - float(dim.target)) / span
            dist += dim.weight * d * d
        return dist

    def bonus(self, config: Mapping) -> float:
        return sum(float(b["bonus"]) for b in self.bonuses if config.get(b["knob"]) == b["value"])

    def _noise_factor(self, config: Mapping) -> float:
        if self.noise <= 0:
            return 1.0
        key = json.dumps({k: config[k] for k in sorted(config)}, sort_keys=True, default=str)
        digest = hashlib.sha256(f"{self.seed}|{key}".encode()).digest()
        g = np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal()
        return 1.0 + self.noise * float(g)

    def value(self, config: Mapping) -> float:
        dist = self.distance(config)
        if self.sense == "latency":
            v = self.base + self.scale * dist - self.bonus(config)
        else:
            v = max(self.base - self.scale * dist + self.bonus(config), 1e-3)
        return v * self._noise_factor(config)

    def optimum(self) -> float:
        """Objective value at the targets, without special-value bonuses."""
        return self.base


@dataclass
class SimulatedHarness:
    surface: SyntheticSurface
    plans: dict[str, object] = field(default_factory=dict)
    wall_ms: float = 0.0
    events: list[str] = field(default_factory=list, repr=False)
    applied: dict | None = None
    _guard: ExclusiveUse = field(default_factory=ExclusiveUse, repr=False)

    @classmethod
    def from_files(cls, surface_path, plans_dir=None) -> "SimulatedHarness":
        plans = {}
        if plans_dir is not None:
            for f in sorted(Path(plans_dir).glob("*.json")):
                d = json.loads(f.read_text(encoding="utf-8"))
                plans[_query_key(d["query"])] = d["plan"]
        return cls(SyntheticSurface.from_json(surface_path), plans)

    def apply_config(self, config: Mapping) -> None:
        self.applied = dict(config)
        self.events.append("apply")

    def evaluate(self, config: Mapping, workload: WorkloadSpec | None = None) -> EvalResult:
        with self._guard.hold():
            virtual = [k for k in config if k.startswith(("control_", "normal_", "special_")) and k not in self.surface.dims]
            if virtual:
                raise HarnessError(f"configuration still contains virtual knobs: {virtual}")
            self.apply_config(config)
            self.events.append("restart")
            if self.surface.crashes(config):
                return EvalResult("crash", None, self.wall_ms, "server failed to start")
            self.events.append("measure")
            value = self.surface.value(config)
            if not math.isfinite(value):
                return EvalResult("crash", None, self.wall_ms, "non-finite metric")
            return EvalResult("ok", value, self.wall_ms)

    def get_plan(self, query: str):
        plans = {_query_key(q): p for q, p in self.plans.items()}
        key = _query_key(query)
        if key not in plans:
            raise HarnessError(f"no plan fixture for query {query[:60]!r}")
        return plans[key]
