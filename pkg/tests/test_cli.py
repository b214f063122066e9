import csv
import io
import json
import shutil

import pytest

from conftest import DEMO
from knobtune.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, cmd_tune, main, report_csv
from knobtune.bo import read_session_log
from knobtune.session import ConfigError, load_session


def session_file(tmp_path, budget=20, extra="", **over):
    text = (DEMO / "session.toml").read_text()
    for key in ("knowledge/manual", "knowledge/web", "llm", "static_knobs.txt", "surface.json", "plans", "queries"):
        text = text.replace(f'"{key}"', json.dumps(str(DEMO / key)))
    text = text.replace('output_dir = "out"', f'output_dir = {json.dumps(str(tmp_path / "out"))}')
    text = text.replace("budget = 100", f"budget = {budget}")
    for k, v in over.items():
        text = text.replace(k, v)
    path = tmp_path / "session.toml"
    path.write_text(text + extra)
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = session_file(tmp)
    codes = [main(["--config", str(cfg), cmd]) for cmd in ("prepare-knowledge", "transform", "select-knobs", "tune")]
    return tmp, cfg, codes


def test_full_workflow(pipeline):
    tmp, _, codes = pipeline
    out = tmp / "out"
    assert codes == [EXIT_OK] * 4
    lake = sorted(p.stem for p in (out / "lake" / "postgres").glob("*.txt"))
    assert lake == ["backend_flush_after", "effective_io_concurrency", "lock_timeout", "random_page_cost",
                    "shared_buffers"]
    assert len(json.loads((out / "selection.json").read_text())["final_set"]) == 60
    obs = read_session_log(out / "session.jsonl")
    assert len(obs) == 20 and obs[0].stage == "default"
    best = json.loads((out / "best_config.json").read_text())
    assert len(best) == 60 and "improvement over default" in (out / "report.txt").read_text()


def test_structured_knowledge_written(pipeline):
    out = pipeline[0] / "out" / "structured"
    sb = json.loads((out / "shared_buffers.json").read_text())
    assert (sb["min_value"], sb["max_value"]) == ("25% of RAM", "40% of RAM")


def test_steps_are_idempotent(pipeline, capsys):
    tmp, cfg, _ = pipeline
    out = tmp / "out"
    stable = lambda p: p.is_file() and p.name not in ("report.txt", "prepare_report.json")  # noqa: E731
    before = {p: p.read_bytes() for p in out.rglob("*") if stable(p)}
    assert main(["--config", str(cfg), "prepare-knowledge"]) == EXIT_OK
    assert "lake entries written: 0" in capsys.readouterr().out
    assert main(["--config", str(cfg), "transform"]) == EXIT_OK
    assert main(["--config", str(cfg), "select-knobs"]) == EXIT_OK
    assert main(["--config", str(cfg), "tune"]) == EXIT_OK
    after = {p: p.read_bytes() for p in out.rglob("*") if stable(p)}
    assert after == before


def test_report_csv(pipeline, capsys):
    tmp, cfg, _ = pipeline
    log = tmp / "out" / "session.jsonl"
    assert main(["report", str(log), "--csv", str(tmp / "r.csv")]) == EXIT_OK
    printed = capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO(printed)))
    assert len(rows) == 20 and list(rows[0]) == ["iteration", "stage", "objective", "best_so_far"]
    best = [float(r["best_so_far"]) for r in rows]
    assert all(a >= b for a, b in zip(best, best[1:]))
    assert (tmp / "r.csv").read_text() == printed
    assert main(["--config", str(cfg), "report", "--summary"]) == EXIT_OK
    assert "best objective" in capsys.readouterr().out


def test_report_csv_throughput_in_natural_units():
    from knobtune.bo import Observation

    obs = [Observation(0, "default", {}, -10.0, "ok", 0, 10.0), Observation(1, "lhs", {}, -12.0, "ok", 0, 12.0)]
    rows = list(csv.DictReader(io.StringIO(report_csv(obs))))
    assert [r["best_so_far"] for r in rows] == ["10.0", "12.0"]


def test_tune_resumes_an_interrupted_log(pipeline, tmp_path):
    tmp, _, _ = pipeline
    full = (tmp / "out" / "session.jsonl").read_text()
    cfg = load_session(session_file(tmp_path))
    cfg.output_dir.mkdir(parents=True)
    shutil.copy(tmp / "out" / "selection.json", cfg.selection_path)
    shutil.copytree(tmp / "out" / "structured", cfg.structured_dir)
    cfg.session_log.write_text("".join(full.splitlines(keepends=True)[:7]))
    cmd_tune(cfg)
    assert cfg.session_log.read_text() == full


@pytest.mark.parametrize("args,code", [
    (["tune"], EXIT_INVALID),
    (["--config", "/nonexistent.toml", "tune"], EXIT_INVALID),
    (["report", "/nonexistent.jsonl"], EXIT_INVALID),
])
def test_exit_codes_for_bad_input(args, code):
    assert main(args) == code


def test_invalid_session_values(tmp_path):
    assert main(["--config", str(session_file(tmp_path, extra="\n[selection]\n")), "tune"]) == EXIT_INVALID
    bad = session_file(tmp_path, **{'kind = "olap"': 'kind = "batch"'})
    assert main(["--config", str(bad), "tune"]) == EXIT_INVALID
    noseed = session_file(tmp_path, **{"seed = 42": ""})
    with pytest.raises(ConfigError):
        load_session(noseed)
    assert load_session(noseed, seed=5).seed == 5


def test_tune_without_selection_is_invalid(tmp_path):
    assert main(["--config", str(session_file(tmp_path)), "tune"]) == EXIT_INVALID


def test_unknown_selected_knob_is_invalid(tmp_path):
    cfg = session_file(tmp_path, extra='\n')
    text = cfg.read_text().replace("cap = 60", 'cap = 60\nknobs = ["shared_buffers", "no_such_knob"]')
    cfg.write_text(text)
    assert main(["--config", str(cfg), "tune"]) == EXIT_INVALID


def test_crashing_default_is_runtime_failure(tmp_path):
    surface = json.loads((DEMO / "surface.json").read_text())
    surface["crash_rules"] = [{"knobs": ["shared_buffers"], "max_total": 0}]
    (tmp_path / "s.json").write_text(json.dumps(surface))
    cfg = session_file(tmp_path, budget=5)
    cfg.write_text(cfg.read_text().replace(json.dumps(str(DEMO / "surface.json")), json.dumps(str(tmp_path / "s.json")))
                   .replace("cap = 60", 'cap = 60\nknobs = ["shared_buffers", "work_mem"]'))
    assert main(["--config", str(cfg), "tune"]) == EXIT_RUNTIME


def test_seed_and_output_dir_overrides(tmp_path):
    cfg = load_session(session_file(tmp_path), seed=9, output_dir=tmp_path / "elsewhere")
    assert cfg.seed == 9 and cfg.tuner.seed == 9 and cfg.output_dir == tmp_path / "elsewhere"
