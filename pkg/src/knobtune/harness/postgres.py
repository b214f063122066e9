"""Live PostgreSQL backend driven through shell commands and psql."""

from __future__ import annotations

import json
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..catalog import KnobCatalog
from ..quantity import render_quantity
from .base import EvalResult, ExclusiveUse, HarnessError, WorkloadSpec

BEGIN_MARK = "# BEGIN knobtune managed block"
END_MARK = "# END knobtune managed block"
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_BLOCK = re.compile(re.escape(BEGIN_MARK) + r".*?" + re.escape(END_MARK) + r"\n?", re.S)


def render_setting(name: str, value, catalog: KnobCatalog | None = None) -> str:
    """One ``name = value`` line in postgresql.conf syntax."""
    if isinstance(value, bool):
        text = "on" if value else "off"
    elif isinstance(value, str):
        text = "'" + value.replace("'", "''") + "'"
    else:
        unit = catalog[name].unit if catalog is not None and name in catalog else "none"
        text = render_quantity(value, unit)
        if not _NUMBER.fullmatch(text):
            text = f"'{text}'"
    return f"{name} = {text}"


def render_block(config: Mapping, catalog: KnobCatalog | None = None) -> str:
    lines = [BEGIN_MARK]
    lines += [render_setting(k, config[k], catalog) for k in sorted(config)]
    lines.append(END_MARK)
    return "\n".join(lines) + "\n"


def parse_block(text: str) -> dict[str, str]:
    """Assignments inside the managed block, values as written (quotes stripped)."""
    m = _BLOCK.search(text)
    if not m:
        return {}
    out = {}
    for line in m.group(0).splitlines()[1:-1]:
        name, _, value = line.partition("=")
        out[name.strip()] = value.strip().strip("'")
    return out


def last_number(text: str) -> float | None:
    found = _NUMBER.findall(text)
    return float(found[-1]) if found else None


@dataclass
class PostgresHarness:
    conf_path: str
    restart_command: str
    benchmark_command: str
    catalog: KnobCatalog | None = None
    results_file: str | None = None
    timeout_s: float = 300.0
    restart_timeout_s: float = 120.0
    psql: str = "psql"
    host: str | None = None
    port: int | None = None
    user: str | None = None
    dbname: str | None = None
    _guard: ExclusiveUse = field(default_factory=ExclusiveUse, repr=False)
    _backed_up: bool = field(default=False, repr=False)

    # -- configuration file ----------------------------------------------------

    def apply_config(self, config: Mapping) -> None:
        path = Path(self.conf_path)
        try:
            text = path.read_text(encoding="utf-8") if path.exists() else ""
            if not self._backed_up and path.exists():
                shutil.copy2(path, str(path) + ".knobtune.bak")
                self._backed_up = True
            block = render_block(config, self.catalog)
            if _BLOCK.search(text):
                text = _BLOCK.sub(lambda _: block, text, count=1)
            else:
                text = text + ("" if not text or text.endswith("\n") else "\n") + block
            fd, tmp = tempfile.mkstemp(prefix=".knobtune.", dir=str(path.parent))
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(text)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            raise HarnessError(f"cannot write {path}: {exc}") from exc

    # -- evaluation --------------------------------------------------------------

    def _run(self, command: str, timeout: float, workload: WorkloadSpec | None = None):
        cmd = command.format(workload=(workload.name if workload else ""), conf=self.conf_path)
        return subprocess.run(cmd, shell=True, capture_output=True, text=True, timeout=timeout)

    def evaluate(self, config: Mapping, workload: WorkloadSpec | None = None) -> EvalResult:
        with self._guard.hold():
            start = time.monotonic()
            elapsed = lambda: (time.monotonic() - start) * 1000.0  # noqa: E731
            self.apply_config(config)
            try:
                proc = self._run(self.restart_command, self.restart_timeout_s)
            except subprocess.TimeoutExpired:
                return EvalResult("crash", None, elapsed(), "restart timed out")
            if proc.returncode != 0:
                return EvalResult("crash", None, elapsed(), (proc.stderr or proc.stdout).strip()[-500:])
            try:
                proc = self._run(self.benchmark_command, self.timeout_s, workload)
            except subprocess.TimeoutExpired:
                return EvalResult("timeout", None, elapsed(), f"benchmark exceeded {self.timeout_s}s")
            if proc.returncode != 0:
                return EvalResult("crash", None, elapsed(), (proc.stderr or proc.stdout).strip()[-500:])
            if self.results_file:
                try:
                    source = Path(self.results_file).read_text(encoding="utf-8")
                except OSError as exc:
                    return EvalResult("crash", None, elapsed(), f"no results file: {exc}")
            else:
                source = proc.stdout
            value = last_number(source)
            if value is None:
                return EvalResult("crash", None, elapsed(), "benchmark printed no metric")
            return EvalResult("ok", value, elapsed())

    # -- plans -------------------------------------------------------------------------

    def psql_args(self) -> list[str]:
        args = shlex.split(self.psql) + ["-X", "-A", "-t", "-v", "ON_ERROR_STOP=1"]
        for flag, value in (("-h", self.host), ("-p", self.port), ("-U", self.user), ("-d", self.dbname)):
            if value is not None:
                args += [flag, str(value)]
        return args

    def get_plan(self, query: str):
        sql = f"EXPLAIN (FORMAT JSON) {query.strip().rstrip(';')}"
        try:
            proc = subprocess.run(self.psql_args() + ["-c", sql], capture_output=True, text=True,
                                  timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise HarnessError(f"cannot run psql: {exc}") from exc
        if proc.returncode != 0:
            raise HarnessError(proc.stderr.strip() or f"psql exited with {proc.returncode}")
        try:
            return json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise HarnessError(f"unparsable plan output: {exc}") from exc
