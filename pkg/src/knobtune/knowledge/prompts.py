from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template

_template_dir: Path | None = None


def set_template_dir(path: str | Path | None) -> None:
    """Use templates from ``path`` instead of the packaged ones."""
    global _template_dir
    _template_dir = None if path is None else Path(path)
    _load.cache_clear()


@lru_cache(maxsize=None)
def _load(name: str) -> Template:
    if _template_dir is not None and (_template_dir / f"{name}.txt").exists():
        text = (_template_dir / f"{name}.txt").read_text(encoding="utf-8")
    else:
        text = resources.files("knobtune.data").joinpath("templates", f"{name}.txt").read_text("utf-8")
    return Template(text)


def render(name: str, **fields) -> str:
    return _load(name).substitute({k: str(v) for k, v in fields.items()})


def load_example_pool(path: str | Path | None = None) -> list[dict]:
    if path is None:
        text = resources.files("knobtune.data").joinpath("example_pool.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)
