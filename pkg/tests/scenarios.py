"""Synthetic spaces and surfaces shared by the optimizer tests."""

from __future__ import annotations

import numpy as np

from knobtune.harness import EvalResult, SurfaceDim, SyntheticSurface
from knobtune.catalog import KnobCatalog, KnobSpec
from knobtune.knowledge.types import StructuredKnob
from knobtune.space import KnobDomainView, build_views, deviate

BETAS = (0.0, 0.25, 0.5)


def knowledge_scenario(seed: int = 123, d: int = 20, major: int = 5):
    """``d`` integer knobs on [0, 100000] whose optimum sits on deviated suggested values.

    Returns (views with knowledge, views without knowledge, surface).  The
    first ``major`` knobs carry most of the weight, as a handful of knobs
    usually dominates DBMS performance.
    """
    rng = np.random.default_rng(seed)
    with_k, without_k, dims = [], [], {}
    vmin, vmax = 0, 100_000
    for i in range(d):
        name = f"k{i:02d}"
        lo = int(rng.integers(5_000, 30_000))
        hi = int(rng.integers(60_000, 95_000))
        s = int(rng.integers(lo + 5_000, hi - 5_000))
        default = int(rng.integers(vmin, vmax))
        tiny = sorted({deviate(s, b, beta, "integer", lo, hi) for beta in BETAS for b in (lo, hi)})
        target = tiny[int(rng.integers(len(tiny)))]
        with_k.append(KnobDomainView(name, "integer", lo, hi, tuple(tiny), (), default, None, None, vmin, vmax))
        without_k.append(KnobDomainView(name, "integer", vmin, vmax, (), (), default, None, None, vmin, vmax))
        dims[name] = SurfaceDim(target, 1.0 if i < major else 0.05, vmin, vmax)
    return with_k, without_k, SyntheticSurface(dims, base=100.0, scale=300.0)


def special_catalog(others: int = 3, seed: int = 5):
    """Catalog plus knowledge for a knob whose special value 0 sits below a [1, 2^31] range."""
    rng = np.random.default_rng(seed)
    knobs = {"idle_timeout": KnobSpec("idle_timeout", "integer", 0, 2**31, 32_768)}
    knowledge = {
        "idle_timeout": StructuredKnob("idle_timeout", [16_384], 1, 2**31, {"value": 0, "meaning": "disabled"}),
    }
    targets = {}
    for i in range(others):
        n = f"p{i}"
        knobs[n] = KnobSpec(n, "integer", 0, 1000, 500)
        knowledge[n] = StructuredKnob(n, [500], 0, 1000)
        targets[n] = int(rng.integers(100, 900))
    return KnobCatalog(knobs), knowledge, targets


def special_scenario(virtual: bool = True, others: int = 3, seed: int = 5):
    """Views and a surface on which ``idle_timeout = 0`` is uniquely optimal."""
    catalog, knowledge, targets = special_catalog(others, seed)
    views = build_views(catalog, catalog.names(), knowledge, None, virtual=virtual)
    dims = {"idle_timeout": SurfaceDim(1, 1.0, 0, 2**31)}
    dims.update({n: SurfaceDim(t, 0.5, 0, 1000) for n, t in targets.items()})
    surface = SyntheticSurface(dims, base=100.0, scale=50.0,
                               bonuses=[{"knob": "idle_timeout", "value": 0, "bonus": 30.0}])
    return views, surface


class CrashAt:
    """Wraps a harness so that the listed evaluation indices crash."""

    def __init__(self, inner, crash_on=(5,)):
        self.inner = inner
        self.crash_on = set(crash_on)
        self.calls = 0

    def evaluate(self, config, workload=None):
        i = self.calls
        self.calls += 1
        if i in self.crash_on:
            return EvalResult("crash", None, 0.0, "scripted crash")
        return self.inner.evaluate(config, workload)

    def get_plan(self, query):
        return self.inner.get_plan(query)

    def apply_config(self, config):
        self.inner.apply_config(config)
