from __future__ import annotations

from pathlib import Path

import pytest

import knobtune.data
from knobtune.catalog import default_deny_rules, filter_configurable, read_system_view
from knobtune.llm import ScriptedLLM
from knobtune.quantity import SystemProfile

GiB = 1024**3
DEMO = Path(__file__).parent / "fixtures" / "demo"
PG14_VIEW = Path(knobtune.data.__file__).parent / "pg14" / "pg_settings.tsv"


@pytest.fixture
def profile():
    return SystemProfile(16 * GiB, "ssd", 8)


@pytest.fixture
def catalog(profile):
    return read_system_view(PG14_VIEW, profile)


@pytest.fixture
def configurable(catalog):
    return filter_configurable(catalog, default_deny_rules())


@pytest.fixture
def demo_llm():
    return ScriptedLLM.from_dir(DEMO / "llm")


@pytest.fixture
def demo_dir():
    return DEMO
