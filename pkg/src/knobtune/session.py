"""Session configuration: one TOML file binding every input of a tuning session.

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .bo.tuner import TunerConfig
from .harness.base import WorkloadSpec
from .quantity import QuantityError, SystemProfile
from .space import DEFAULT_BETAS, DeviationConfig

BUILTIN_VIEWS = {"builtin:pg14": ("pg14", "pg_settings.tsv")}


class ConfigError(ValueError):
    pass


def _path(base: Path, value, what: str, must_exist: bool = True, kind: str = "any") -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{what}: {p} does not exist")
    if must_exist and kind == "dir" and not p.is_dir():
        raise ConfigError(f"{what}: {p} is not a directory")
    return p


@dataclass
class SessionConfig:
    seed: int
    dbms: str = "postgres"
    output_dir: Path = Path("knobtune-out")
    profile: SystemProfile | None = None
    system_view: Path | None = None
    deny_rules: Path | None = None
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    knowledge_dirs: dict[str, Path] = field(default_factory=dict)
    llm_source: bool = True
    max_rounds: int = 3
    ensemble_size: int = 5
    examples_per_prompt: int = 3
    example_pool: Path | None = None
    llm: dict[str, Any] = field(default_factory=dict)
    cap: int = 60
    static_knobs: Path | None = None
    max_plan_tokens: int = 2000
    knobs: list[str] | None = None
    tuner: TunerConfig = field(default_factory=lambda: TunerConfig())
    deviation: DeviationConfig = field(default_factory=DeviationConfig)
    use_knowledge: bool = True
    virtual: bool = True
    harness: dict[str, Any] = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def lake_dir(self) -> Path:
        return self.output_dir / "lake"

    @property
    def structured_dir(self) -> Path:
        return self.output_dir / "structured"

    @property
    def selection_path(self) -> Path:
        return self.output_dir / "selection.json"

    @property
    def session_log(self) -> Path:
        return self.output_dir / "session.jsonl"

    def system_view_path(self) -> Path:
        if self.system_view is None:
            raise ConfigError("catalog.system_view is required")
        return self.system_view


def _table(d: dict, key: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"[{key}] must be a table")
    return v


def load_session(path: str | Path, seed: int | None = None, output_dir: str | Path | None = None) -> SessionConfig:
    """Read and validate a session file; ``seed`` and ``output_dir`` override the file."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read session file: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return session_from_dict(raw, path.resolve().parent, seed, output_dir)


def session_from_dict(raw: dict, base: Path, seed: int | None = None, output_dir=None) -> SessionConfig:
    if seed is None:
        seed = raw.get("seed")
    if seed is None or isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed is mandatory and must be an integer")
    try:
        system = _table(raw, "system")
        profile = SystemProfile.from_dict(system) if system else None
    except (QuantityError, ValueError, KeyError) as exc:
        raise ConfigError(f"[system]: {exc}") from exc

    catalog = _table(raw, "catalog")
    view = catalog.get("system_view", "builtin:pg14")
    if view in BUILTIN_VIEWS:
        from . import data

        sub, name = BUILTIN_VIEWS[view]
        view_path = Path(data.__file__).parent / sub / name
    else:
        view_path = _path(base, view, "catalog.system_view")

    wl = _table(raw, "workload")
    queries = list(wl.get("queries", []))
    qdir = _path(base, wl.get("queries_dir"), "workload.queries_dir", kind="dir")
    if qdir is not None:
        queries += [f.read_text(encoding="utf-8").strip() for f in sorted(qdir.glob("*.sql"))]
    try:
        workload = WorkloadSpec(wl.get("kind", "olap"), wl.get("objective", "latency"), tuple(queries),
                                wl.get("name", ""))
    except ValueError as exc:
        raise ConfigError(f"[workload]: {exc}") from exc

    kn = _table(raw, "knowledge")
    dirs = {}
    for source in ("manual", "web"):
        p = _path(base, kn.get(source), f"knowledge.{source}", kind="dir")
        if p is not None:
            dirs[source] = p

    llm = dict(_table(raw, "llm"))
    if llm.get("fixtures"):
        llm["fixtures"] = str(_path(base, llm["fixtures"], "llm.fixtures", kind="dir"))

    sel = _table(raw, "selection")
    tn = dict(_table(raw, "tuner"))
    betas = tuple(tn.pop("betas", DEFAULT_BETAS))
    use_knowledge = bool(tn.pop("use_knowledge", True))
    virtual = bool(tn.pop("virtual", True))
    tn["sense"] = workload.objective
    try:
        tuner = TunerConfig(seed=seed, **tn)
        deviation = DeviationConfig(betas)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[tuner]: {exc}") from exc

    harness = dict(_table(raw, "harness"))
    backend = harness.setdefault("backend", "simulated")
    if backend == "simulated":
        if "surface" not in harness:
            raise ConfigError("[harness] simulated backend needs a surface file")
        harness["surface"] = str(_path(base, harness["surface"], "harness.surface"))
        if harness.get("plans"):
            harness["plans"] = str(_path(base, harness["plans"], "harness.plans", kind="dir"))
    elif backend == "postgres":
        for key in ("conf_path", "restart_command", "benchmark_command"):
            if not harness.get(key):
                raise ConfigError(f"[harness] postgres backend needs {key}")
        harness["conf_path"] = str(_path(base, harness["conf_path"], "harness.conf_path"))
    else:
        raise ConfigError(f"unknown harness backend {backend!r}")

    cap = sel.get("cap", 60)
    if not isinstance(cap, int) or cap < 1:
        raise ConfigError("selection.cap must be a positive integer")
    out = Path(output_dir) if output_dir is not None else Path(raw.get("output_dir", "knobtune-out"))
    if not out.is_absolute():
        out = (Path.cwd() if output_dir is not None else base) / out
    return SessionConfig(
        seed=seed,
        dbms=raw.get("dbms", "postgres"),
        output_dir=out,
        profile=profile,
        system_view=view_path,
        deny_rules=_path(base, catalog.get("deny_rules"), "catalog.deny_rules"),
        workload=workload,
        knowledge_dirs=dirs,
        llm_source=bool(kn.get("llm_source", True)),
        max_rounds=int(kn.get("max_rounds", 3)),
        ensemble_size=int(kn.get("ensemble_size", 5)),
        examples_per_prompt=int(kn.get("examples_per_prompt", 3)),
        example_pool=_path(base, kn.get("example_pool"), "knowledge.example_pool"),
        llm=llm,
        cap=cap,
        static_knobs=_path(base, sel.get("static_knobs"), "selection.static_knobs"),
        max_plan_tokens=int(sel.get("max_plan_tokens", 2000)),
        knobs=list(sel["knobs"]) if "knobs" in sel else None,
        tuner=tuner,
        deviation=deviation,
        use_knowledge=use_knowledge,
        virtual=virtual,
        harness=harness,
        base_dir=base,
    )
