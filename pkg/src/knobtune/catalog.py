"""Knob metadata loaded from a DBMS system-view export (e.g. ``pg_settings``)."""

from __future__ import annotations

import csv
import fnmatch
import io
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .quantity import (
    MEMORY_FACTORS,
    TIME_FACTORS,
    UNITS,
    Number,
    SystemProfile,
    resolve_quantity,
    unit_kind,
)

log = logging.getLogger(__name__)

KINDS = ("integer", "real", "categorical", "boolean")
SYSTEM_VIEW_COLUMNS = ("name", "vartype", "min_val", "max_val", "boot_val", "unit", "enumvals")

# query that produces the export consumed by load_system_view (run via psql)
PG_EXPORT_QUERY = (
    "COPY (SELECT name, vartype, min_val, max_val, boot_val, unit, enumvals "
    "FROM pg_settings ORDER BY name) TO STDOUT WITH (FORMAT csv, DELIMITER E'\\t', HEADER)"
)

_VARTYPES = {
    "integer": "integer",
    "int": "integer",
    "real": "real",
    "float": "real",
    "double": "real",
    "bool": "boolean",
    "boolean": "boolean",
    "enum": "categorical",
    "categorical": "categorical",
}
_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class KnobSpec:
    name: str
    kind: str
    vendor_min: Number | None = None
    vendor_max: Number | None = None
    default_value: object = None
    unit: str = "none"
    categories: tuple[str, ...] = ()
    description: str = ""
    # suffix the DBMS uses for this knob's raw values (e.g. "8kB"); kept for rendering
    native_unit: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CatalogError(f"{self.name}: unknown kind {self.kind!r}")
        if self.unit not in UNITS:
            raise CatalogError(f"{self.name}: unknown unit {self.unit!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise CatalogError(f"{self.name}: categorical knob without categories")
        elif self.categories:
            raise CatalogError(f"{self.name}: categories given for a {self.kind} knob")
        if self.kind in ("categorical", "boolean") and self.unit != "none":
            raise CatalogError(f"{self.name}: {self.kind} knob cannot carry a unit")
        if self.is_numeric:
            if self.vendor_min is None or self.vendor_max is None:
                raise CatalogError(f"{self.name}: numeric knob without bounds")
            if not self.vendor_min <= self.default_value <= self.vendor_max:
                raise CatalogError(
                    f"{self.name}: default {self.default_value} outside "
                    f"[{self.vendor_min}, {self.vendor_max}]"
                )

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("integer", "real")

    @property
    def is_memory(self) -> bool:
        return unit_kind(self.unit) == "memory"

    def domain_values(self) -> list:
        """Finite domain of a non-numeric knob."""
        if self.kind == "boolean":
            return [False, True]
        if self.kind == "categorical":
            return list(self.categories)
        raise CatalogError(f"{self.name} has a numeric domain")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnobSpec":
        d = dict(d)
        d["categories"] = tuple(d.get("categories") or ())
        return cls(**d)


@dataclass
class KnobCatalog:
    knobs: dict[str, KnobSpec] = field(default_factory=dict)
    profile: SystemProfile | None = None
    skipped: list[str] = field(default_factory=list)

    def __contains__(self, name: str) -> bool:
        return name in self.knobs

    def __getitem__(self, name: str) -> KnobSpec:
        return self.knobs[name]

    def __len__(self) -> int:
        return len(self.knobs)

    def names(self) -> set[str]:
        return set(self.knobs)

    def to_json(self) -> str:
        return json.dumps(
            {
                "profile": None if self.profile is None else self.profile.to_dict(),
                "knobs": [k.to_dict() for k in self.knobs.values()],
                "skipped": self.skipped,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "KnobCatalog":
        d = json.loads(text)
        profile = None if d.get("profile") is None else SystemProfile.from_dict(d["profile"])
        knobs = {}
        for kd in d["knobs"]:
            spec = KnobSpec.from_dict(kd)
            knobs[spec.name] = spec
        return cls(knobs=knobs, profile=profile, skipped=list(d.get("skipped", [])))


def _native_unit(raw: str) -> tuple[str, float]:
    """Map a system-view unit string (``8kB``, ``ms``, ``16MB``...) to (unit, scale)."""
    raw = (raw or "").strip()
    if raw == "":
        return "none", 1
    m = re.fullmatch(r"(\d*)\s*([A-Za-z]+)", raw)
    if not m:
        raise CatalogError(f"unknown unit {raw!r}")
    mult = int(m.group(1)) if m.group(1) else 1
    suffix = m.group(2).lower()
    if suffix in MEMORY_FACTORS:
        return "bytes", mult * MEMORY_FACTORS[suffix]
    if suffix in TIME_FACTORS:
        return "milliseconds", mult * TIME_FACTORS[suffix]
    if suffix in ("count",):
        return "count", mult
    raise CatalogError(f"unknown unit {raw!r}")


def _parse_number(text: str, kind: str, scale: float, knob: str, fld: str) -> Number:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise CatalogError(f"{knob}: cannot parse {fld} {text!r}") from None
    if kind == "integer":
        # -1 style sentinels keep their raw meaning
        if value < 0:
            return int(value)
        return int(round(value * scale))
    scaled = value * scale if value >= 0 else value
    return scaled


def _parse_enumvals(text: str) -> tuple[str, ...]:
    text = (text or "").strip()
    if text.startswith("{") and text.endswith("}"):
        text = text[1:-1]
    if not text:
        return ()
    return tuple(next(csv.reader([text])))


def _parse_bool(text: str, knob: str) -> bool:
    t = (text or "").strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise CatalogError(f"{knob}: cannot parse boot_val {text!r} as boolean")


def load_system_view(
    rows: Iterable[Mapping[str, str]], profile: SystemProfile | None = None
) -> KnobCatalog:
    """Build a catalog from system-view rows.

    String-typed knobs (paths, names) are not tunable and are recorded in
    ``catalog.skipped`` instead of becoming specs.
    """
    catalog = KnobCatalog(profile=profile)
    for row in rows:
        missing = [c for c in SYSTEM_VIEW_COLUMNS if c not in row]
        if missing:
            raise CatalogError(f"row missing columns {missing}: {dict(row)}")
        name = row["name"].strip()
        if name in catalog.knobs or name in catalog.skipped:
            raise CatalogError(f"duplicate knob name {name!r}")
        vartype = row["vartype"].strip().lower()
        if vartype == "string":
            catalog.skipped.append(name)
            continue
        if vartype not in _VARTYPES:
            raise CatalogError(f"{name}: unknown vartype {vartype!r}")
        kind = _VARTYPES[vartype]
        if kind in ("integer", "real"):
            unit, scale = _native_unit(row["unit"])
            spec = KnobSpec(
                name=name,
                kind=kind,
                vendor_min=_parse_number(row["min_val"], kind, scale, name, "min_val"),
                vendor_max=_parse_number(row["max_val"], kind, scale, name, "max_val"),
                default_value=_parse_number(row["boot_val"], kind, scale, name, "boot_val"),
                unit=unit,
                description=row.get("short_desc", "") or "",
                native_unit=(row["unit"] or "").strip(),
            )
        elif kind == "boolean":
            spec = KnobSpec(
                name=name,
                kind=kind,
                default_value=_parse_bool(row["boot_val"], name),
                description=row.get("short_desc", "") or "",
            )
        else:
            cats = _parse_enumvals(row["enumvals"])
            spec = KnobSpec(
                name=name,
                kind=kind,
                default_value=row["boot_val"].strip(),
                categories=cats,
                description=row.get("short_desc", "") or "",
            )
        catalog.knobs[name] = spec
    return catalog


def read_system_view(path: str | Path, profile: SystemProfile | None = None) -> KnobCatalog:
    """Load a tab-separated system-view export with a header row."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    return load_system_view(reader, profile)


# Category rules expand to name globs.
CATEGORY_GLOBS = {
    "debugging": [
        "debug_*", "trace_*", "log_*", "logging_*", "syslog_*", "event_source",
        "ignore_*", "zero_damaged_pages", "allow_system_table_mods", "exit_on_error",
        "jit_debugging_support", "jit_dump_bitcode", "jit_profiling_support",
        "post_auth_delay", "pre_auth_delay", "wal_consistency_checking",
        "backtrace_functions", "restart_after_crash", "data_sync_retry",
        "remove_temp_files_after_crash", "debug_discard_caches", "client_min_messages",
        "track_*", "stats_temp_directory", "compute_query_id", "update_process_title",
        "cluster_name", "application_name", "lc_*",
    ],
    "security": [
        "ssl", "ssl_*", "password_encryption", "krb_*", "db_user_namespace",
        "row_security", "authentication_timeout", "scram_*", "*_auth_*",
        "listen_addresses", "port", "unix_socket_*", "bonjour*", "tcp_*",
        "superuser_reserved_connections", "idle_session_timeout",
    ],
    "path-setting": [
        "*_file", "*_directory", "*_dir", "*_path", "*_prefix", "dynamic_library_path",
        "search_path", "local_preload_libraries", "session_preload_libraries",
        "shared_preload_libraries", "archive_command", "restore_command",
        "archive_cleanup_command", "recovery_end_command", "data_directory",
        "external_pid_file", "include*",
    ],
}


def default_deny_rules() -> list[str]:
    text = resources.files("knobtune.data").joinpath("deny_rules.txt").read_text("utf-8")
    return parse_deny_rules(text)


def parse_deny_rules(text: str) -> list[str]:
    rules = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rules.append(line)
    return rules


def _rule_globs(rule: str) -> list[str]:
    if rule.startswith("@") or rule.startswith("category:"):
        cat = rule.split(":", 1)[1] if rule.startswith("category:") else rule[1:]
        if cat not in CATEGORY_GLOBS:
            raise CatalogError(f"unknown deny category {cat!r}")
        return CATEGORY_GLOBS[cat]
    return [rule]


def filter_configurable(catalog: KnobCatalog, deny_rules: Iterable[str]) -> set[str]:
    """Names of catalog knobs matching none of the deny rules."""
    globs = [g for r in deny_rules for g in _rule_globs(r)]
    return {n for n in catalog.knobs if not any(fnmatch.fnmatchcase(n, g) for g in globs)}


def resolve_for_knob(expr, spec: KnobSpec, profile: SystemProfile | None) -> Number:
    """Resolve a quantity for a specific knob, rounding for integer knobs."""
    value = resolve_quantity(expr, profile, spec.unit)
    if spec.kind == "integer":
        return int(round(value))
    return float(value)
