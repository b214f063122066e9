"""Command-line entry point: knowledge preparation, transformation, selection, tuning, reports."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .bo.tuner import Observation, Tuner, read_session_log
from .catalog import CatalogError, KnobCatalog, default_deny_rules, filter_configurable, parse_deny_rules, read_system_view
from .harness.base import HarnessError
from .harness.postgres import PostgresHarness
from .harness.simulated import SimulatedHarness
from .knowledge import prompts
from .knowledge.prepare import FileDropAdapter, LLMSourceAdapter, collect, prepare_knob, read_lake, write_lake_entry
from .knowledge.transform import read_structured, transform, write_structured
from .llm import LLMError, client_from_config
from .selection import SelectionReport, load_static_list, select_knobs
from .session import ConfigError, SessionConfig, load_session
from .space import build_full_space, build_tiny_space, build_views

log = logging.getLogger("knobtune")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class RuntimeFailure(RuntimeError):
    pass


# -- shared setup -----------------------------------------------------------------------


def load_catalog(cfg: SessionConfig) -> tuple[KnobCatalog, set[str]]:
    catalog = read_system_view(cfg.system_view_path(), cfg.profile)
    rules = parse_deny_rules(cfg.deny_rules.read_text(encoding="utf-8")) if cfg.deny_rules else default_deny_rules()
    return catalog, filter_configurable(catalog, rules)


def make_llm(cfg: SessionConfig):
    return client_from_config(cfg.llm)


def make_harness(cfg: SessionConfig, catalog: KnobCatalog | None = None):
    h = dict(cfg.harness)
    backend = h.pop("backend")
    if backend == "simulated":
        harness = SimulatedHarness.from_files(h["surface"], h.get("plans"))
        harness.wall_ms = float(h.get("wall_ms", 0.0))
        return harness
    keys = ("conf_path", "restart_command", "benchmark_command", "results_file", "timeout_s", "restart_timeout_s",
            "psql", "host", "port", "user", "dbname")
    return PostgresHarness(catalog=catalog, **{k: h[k] for k in keys if k in h})


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands ------------------------------------------------------------------------


def cmd_prepare_knowledge(cfg: SessionConfig, force: bool = False) -> dict:
    """Build the tuning lake; knobs that already have a lake file are skipped unless forced."""
    catalog, configurable = load_catalog(cfg)
    knobs = sorted(configurable if cfg.knobs is None else set(cfg.knobs) & configurable)
    lake_root = cfg.lake_dir
    todo = [k for k in knobs if force or not (lake_root / cfg.dbms / f"{k}.txt").exists()]
    llm = make_llm(cfg)
    adapters = [FileDropAdapter(p, source) for source, p in sorted(cfg.knowledge_dirs.items())]
    if cfg.llm_source:
        adapters.append(LLMSourceAdapter(llm, dbms=cfg.dbms))
    errors: dict[str, str] = {}
    docs = collect(adapters, todo, errors) if todo else []
    by_knob: dict[str, list] = {}
    for d in docs:
        by_knob.setdefault(d.knob_name, []).append(d)
    report = {"written": [], "skipped": sorted(set(knobs) - set(todo)), "no_knowledge": [], "failed": {},
              "discarded": {}, "adapter_errors": errors}
    for knob in todo:
        if knob not in by_knob:
            report["no_knowledge"].append(knob)
            continue
        try:
            prep = prepare_knob(knob, by_knob[knob], catalog[knob], llm, cfg.max_rounds)
        except (LLMError, ValueError) as exc:
            report["failed"][knob] = str(exc)
            continue
        if prep.discarded:
            report["discarded"][knob] = [{"source": d.source, "reason": v.reason} for d, v in prep.discarded]
        if prep.entry is None:
            report["no_knowledge"].append(knob)
            continue
        write_lake_entry(lake_root, cfg.dbms, prep.entry)
        report["written"].append(knob)
    _write_json(cfg.output_dir / "prepare_report.json", report)
    if report["failed"] and not report["written"]:
        raise RuntimeFailure(f"knowledge preparation failed for every knob ({len(report['failed'])})")
    return report


def cmd_transform(cfg: SessionConfig, force: bool = False) -> dict:
    catalog, configurable = load_catalog(cfg)
    lake = read_lake(cfg.lake_dir, cfg.dbms)
    llm = make_llm(cfg)
    pool = prompts.load_example_pool(cfg.example_pool) if cfg.example_pool else None
    report = {"written": [], "skipped": [], "ignored": []}
    for knob in sorted(lake):
        if knob not in catalog:
            report["ignored"].append(knob)
            continue
        out = cfg.structured_dir / f"{knob}.json"
        if out.exists() and not force:
            report["skipped"].append(knob)
            continue
        sk = transform(lake[knob], catalog[knob], llm, cfg.ensemble_size, cfg.seed, pool,
                       cfg.examples_per_prompt, cfg.profile)
        write_structured(cfg.structured_dir, sk)
        report["written"].append(knob)
    return report


def cmd_select(cfg: SessionConfig, force: bool = False) -> SelectionReport:
    if cfg.selection_path.exists() and not force:
        return SelectionReport.from_dict(json.loads(cfg.selection_path.read_text(encoding="utf-8")))
    catalog, configurable = load_catalog(cfg)
    lake = read_lake(cfg.lake_dir, cfg.dbms)
    llm = make_llm(cfg)
    harness = make_harness(cfg, catalog) if cfg.workload.queries else None
    static = load_static_list(cfg.static_knobs) if cfg.static_knobs else []
    report = select_knobs(configurable, cfg.workload, cfg.dbms, lake, harness, llm, cfg.cap, static,
                          cfg.max_plan_tokens)
    cfg.selection_path.parent.mkdir(parents=True, exist_ok=True)
    cfg.selection_path.write_text(report.to_json(), encoding="utf-8")
    return report


def cmd_tune(cfg: SessionConfig, force: bool = False) -> dict:
    catalog, configurable = load_catalog(cfg)
    if cfg.knobs is not None:
        selected = set(cfg.knobs)
    elif cfg.selection_path.exists():
        selected = set(json.loads(cfg.selection_path.read_text(encoding="utf-8"))["final_set"])
    else:
        raise ConfigError("no knob selection: run select-knobs first or list selection.knobs")
    unknown = sorted(selected - configurable)
    if unknown:
        raise ConfigError(f"selected knobs are not configurable: {', '.join(unknown)}")
    if not selected:
        raise ConfigError("knob selection is empty")
    knowledge = read_structured(cfg.structured_dir) if cfg.structured_dir.is_dir() else {}
    views = build_views(catalog, selected, knowledge, cfg.profile, cfg.deviation, cfg.use_knowledge, cfg.virtual)
    full = build_full_space(views)
    tiny = build_tiny_space(views) if cfg.use_knowledge else None
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "space.json").write_text(full.to_json() + "\n", encoding="utf-8")
    harness = make_harness(cfg, catalog)
    tuner = Tuner(full, tiny, harness, cfg.tuner, cfg.workload)
    resume = cfg.session_log.exists() and not force
    result = tuner.run(cfg.session_log, resume=resume)
    _write_json(cfg.output_dir / "best_config.json", result.best_config)
    summary = summarize_session(result.observations, cfg.tuner.sense)
    summary["stop_reason"] = result.stop_reason
    (cfg.output_dir / "report.txt").write_text(format_summary(summary), encoding="utf-8")
    return summary


# -- reports ----------------------------------------------------------------------------


def infer_sense(observations: list[Observation]) -> str:
    for o in observations:
        if o.outcome == "ok" and o.objective_raw:
            return "throughput" if o.objective == -o.objective_raw else "latency"
    return "latency"


def best_so_far(observations: list[Observation]) -> list[float]:
    """Running minimum of the internal objective over successful evaluations."""
    out, best = [], None
    for o in observations:
        if o.outcome == "ok" and (best is None or o.objective < best):
            best = o.objective
        out.append(best)
    return out


def summarize_session(observations: list[Observation], sense: str | None = None) -> dict:
    if not observations:
        raise ValueError("session log is empty")
    sense = sense or infer_sense(observations)
    sign = -1.0 if sense == "throughput" else 1.0
    ok = [o for o in observations if o.outcome == "ok"]
    best = min(ok, key=lambda o: o.objective)
    default = observations[0]
    base = default.objective_raw
    if base:
        gain = (base - best.objective_raw) / base if sense == "latency" else (best.objective_raw - base) / base
    else:
        gain = 0.0
    stages = {}
    for o in observations:
        s = stages.setdefault(o.stage, {"evaluations": 0, "crashes": 0, "best": None})
        s["evaluations"] += 1
        if o.outcome != "ok":
            s["crashes"] += 1
        elif s["best"] is None or sign * o.objective_raw < sign * s["best"]:
            s["best"] = o.objective_raw
    return {
        "sense": sense,
        "evaluations": len(observations),
        "default_objective": base,
        "best_objective": best.objective_raw,
        "best_iteration": best.iteration,
        "best_stage": best.stage,
        "improvement_pct": 100.0 * gain,
        "stages": stages,
    }


def format_summary(s: dict) -> str:
    unit = "tx/s" if s["sense"] == "throughput" else "ms"
    lines = [
        f"evaluations: {s['evaluations']}",
        f"default objective: {s['default_objective']:.6g} {unit}",
        f"best objective: {s['best_objective']:.6g} {unit} (iteration {s['best_iteration']}, stage {s['best_stage']})",
        f"improvement over default: {s['improvement_pct']:.2f}%",
    ]
    if "stop_reason" in s:
        lines.append(f"stopped by: {s['stop_reason']}")
    lines.append("stages:")
    for name in ("default", "lhs", "coarse", "fine"):
        if name in s["stages"]:
            st = s["stages"][name]
            best = "-" if st["best"] is None else f"{st['best']:.6g}"
            lines.append(f"  {name:8s} evaluations={st['evaluations']:3d} crashes={st['crashes']:2d} best={best}")
    return "\n".join(lines) + "\n"


def report_csv(observations: list[Observation]) -> str:
    """Per-iteration series in natural units: iteration,stage,objective,best_so_far."""
    sign = -1.0 if infer_sense(observations) == "throughput" else 1.0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "stage", "objective", "best_so_far"])
    for o, b in zip(observations, best_so_far(observations)):
        w.writerow([o.iteration, o.stage, repr(sign * o.objective), "" if b is None else repr(sign * b)])
    return buf.getvalue()


def cmd_report(log_path: Path, csv_path: Path | None = None) -> str:
    observations = read_session_log(log_path)
    text = report_csv(observations)
    if csv_path is not None:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(text, encoding="utf-8")
    return text


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="session TOML file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the session seed")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS, help="redo finished work")
    common.add_argument("--output-dir", type=Path, default=argparse.SUPPRESS, help="override the output directory")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="knobtune", description="Knowledge-guided DBMS knob tuning.")
    p.add_argument("--config", type=Path, default=None, help="session TOML file")
    p.add_argument("--seed", type=int, default=None, help="override the session seed")
    p.add_argument("--force", action="store_true", default=False, help="redo finished work")
    p.add_argument("--output-dir", type=Path, default=None, help="override the output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare-knowledge", parents=[common], help="build the tuning lake")
    sub.add_parser("transform", parents=[common], help="extract structured knowledge from the lake")
    sub.add_parser("select-knobs", parents=[common], help="choose the target knob set")
    sub.add_parser("tune", parents=[common], help="run coarse-to-fine optimization")
    rep = sub.add_parser("report", parents=[common], help="per-iteration CSV from a session log")
    rep.add_argument("log", nargs="?", type=Path, help="session log (default: <output-dir>/session.jsonl)")
    rep.add_argument("--csv", type=Path, default=None, help="also write the CSV here")
    rep.add_argument("--summary", action="store_true", help="print the text summary instead of CSV")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report" and args.log is not None:
            log_path = args.log
        else:
            if args.config is None:
                raise ConfigError("--config is required")
            cfg = load_session(args.config, args.seed, args.output_dir)
            log_path = cfg.session_log
        if args.command == "report":
            if not log_path.exists():
                raise ConfigError(f"session log {log_path} does not exist")
            if args.summary:
                sys.stdout.write(format_summary(summarize_session(read_session_log(log_path))))
                if args.csv:
                    cmd_report(log_path, args.csv)
            else:
                sys.stdout.write(cmd_report(log_path, args.csv))
            return EXIT_OK
        if args.command == "prepare-knowledge":
            r = cmd_prepare_knowledge(cfg, args.force)
            print(f"lake entries written: {len(r['written'])}, skipped: {len(r['skipped'])}, "
                  f"without knowledge: {len(r['no_knowledge'])}, failed: {len(r['failed'])}")
        elif args.command == "transform":
            r = cmd_transform(cfg, args.force)
            print(f"structured knowledge written: {len(r['written'])}, skipped: {len(r['skipped'])}")
        elif args.command == "select-knobs":
            r = cmd_select(cfg, args.force)
            flag = " (static fallback)" if r.fallback_used else ""
            print(f"selected {len(r.final_set)} knobs{flag}: {', '.join(sorted(r.final_set))}")
        elif args.command == "tune":
            s = cmd_tune(cfg, args.force)
            sys.stdout.write(format_summary(s))
        return EXIT_OK
    except (ConfigError, CatalogError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (RuntimeFailure, HarnessError, LLMError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
