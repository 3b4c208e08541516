"""Batch command line: simulate -> diagnose -> prescribe -> report.

Every stage reads and writes files in one run directory (``--out``).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import reporting
from .backends import BackendSpec, ExternalModuleBackend, OracleCache, fill_oracles, gold_backend
from .diagnosis import (CausalSweepResult, diagnose_task, fate_census, naive_severity_target, tau_sensitivity,
                        write_sweep_csv)
from .pipeline import Agent, DEFAULT_SLOTS, map_tasks, read_episodes, run_pipeline, write_episodes
from .prescription import (DEFAULT_CONFIGURATIONS, ConfigurationResult, PrescriptionContext, RoutingStats, build_pools,
                           parse_configuration, read_pools, run_configuration, write_pools)
from .scoring import FailureRecord, RubricJudge, judge_episode, write_records_csv
from .simulator.agent import DegradedOracle, SyntheticAgentConfig, make_agent
from .simulator.domain import SyntheticTask, get_domain
from .simulator.paradox import KAPPA_GRID, SimulationConfig, hazard_onset, kappa_grid, reproduce_paradox, split_tasks
from .stats import cascade_shift

log = logging.getLogger("causalpipe")

CONFIG = "config.json"
TASKS = "tasks.jsonl"
SPLITS = "splits.json"
EPISODES = "episodes.jsonl"
ORACLE = "oracle_cache.jsonl"
MANIFEST = "manifest.json"

SYSTEM_TEXT = {
    "query-rewrite": "Rewrite the customer request as one canonical sentence.",
    "planner": 'Return JSON {"intent": ..., "slots": {...}} for the rewritten request.',
    "router": 'Return JSON {"tool": ..., "args": {...}} choosing one tool for the plan.',
    "response": "Write the final reply to the customer.",
}


class CLIError(Exception):
    pass


# -- config -----------------------------------------------------------------

_FIELD_TYPES = {"n_diag": int, "n_presc": int, "seed": int, "k": int, "domain": str, "tau_demo": float,
                "tau": float, "routing_corruption": float, "tau_sweep": list, "configurations": list}


def validate_config(data) -> None:
    """Raise CLIError naming the offending field path."""
    if not isinstance(data, dict):
        raise CLIError("config error at <root>: expected a JSON object")
    extra = {"backend"}
    for key, value in data.items():
        if key in extra:
            continue
        if key == "agent":
            if not isinstance(value, dict):
                raise CLIError("config error at agent: expected an object")
            for ak, av in value.items():
                if ak not in SyntheticAgentConfig.__dataclass_fields__:
                    raise CLIError(f"config error at agent.{ak}: unknown field")
                if ak == "seed":
                    if not isinstance(av, int) or isinstance(av, bool):
                        raise CLIError("config error at agent.seed: expected an integer")
                elif isinstance(av, bool) or not isinstance(av, (int, float)) or not 0 <= av <= 1:
                    raise CLIError(f"config error at agent.{ak}: expected a number in [0, 1]")
            continue
        if key not in _FIELD_TYPES:
            raise CLIError(f"config error at {key}: unknown field")
        want = _FIELD_TYPES[key]
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) if want is float else \
            isinstance(value, want) and not isinstance(value, bool)
        if not ok:
            raise CLIError(f"config error at {key}: expected {want.__name__}")
    if "domain" in data:
        try:
            get_domain(data["domain"])
        except ValueError as exc:
            raise CLIError(f"config error at domain: {exc}") from None
    try:
        SimulationConfig.from_json({k: v for k, v in data.items() if k not in extra})
    except (ValueError, TypeError) as exc:
        raise CLIError(f"config error: {exc}") from None


def load_config(path) -> tuple:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CLIError(f"config file {p} is not valid JSON: {exc}") from None
    validate_config(data)
    backend = data.pop("backend", None)
    return SimulationConfig.from_json(data), backend


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


# -- run directory ----------------------------------------------------------

class Run:
    def __init__(self, out):
        self.dir = Path(out)

    def path(self, name) -> Path:
        return self.dir / name

    def need(self, *names) -> None:
        missing = [n for n in names if not self.path(n).exists()]
        if missing:
            raise CLIError(f"missing inputs in {self.dir}: {', '.join(missing)}")

    def config(self) -> tuple:
        self.need(CONFIG)
        data = json.loads(self.path(CONFIG).read_text(encoding="utf-8"))
        backend = data.pop("backend", None)
        return SimulationConfig.from_json(data), backend

    def tasks(self) -> dict:
        self.need(TASKS)
        out = {}
        for line in self.path(TASKS).read_text(encoding="utf-8").splitlines():
            if line.strip():
                t = SyntheticTask.from_json(json.loads(line))
                out[t.task_id] = t
        return out

    def splits(self) -> dict:
        self.need(SPLITS)
        return json.loads(self.path(SPLITS).read_text(encoding="utf-8"))

    def baselines(self) -> dict:
        self.need(EPISODES)
        return {e.task_id: e for e in read_episodes(self.path(EPISODES))}

    def write(self, name, text: str) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return p

    def manifest(self, command: str, argv, outputs, config: SimulationConfig, started: str) -> None:
        """Append this command to the run manifest with content hashes of its outputs."""
        mpath = self.path(MANIFEST)
        m = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {}
        cfg_hash = _sha(self.path(CONFIG))
        m.update({"run_id": f"run-{cfg_hash[:12]}", "config_hash": cfg_hash, "root_seed": config.seed})
        if self.path(TASKS).exists():
            m["dataset_hashes"] = {TASKS: _sha(self.path(TASKS))}
        entry = {"command": command, "argv": list(argv), "started": started,
                 "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                 "outputs": {str(Path(p).relative_to(self.dir)): _sha(Path(p)) for p in outputs}}
        m["commands"] = [c for c in m.get("commands", []) if c["command"] != command] + [entry]
        m["artifacts"] = sorted({o for c in m["commands"] for o in c["outputs"]})
        mpath.write_text(_canon(m), encoding="utf-8")


def build_agent(config: SimulationConfig, backend_kind: str, backend_spec) -> Agent:
    if backend_kind == "simulated":
        return make_agent(config.agent)
    if not backend_spec:
        raise CLIError("--backend external needs a 'backend' object in the config")
    spec = BackendSpec.from_json({**backend_spec, "kind": "external"})
    return Agent({s.index: ExternalModuleBackend(spec, SYSTEM_TEXT.get(s.name, s.name)) for s in DEFAULT_SLOTS},
                 DEFAULT_SLOTS, f"external:{spec.model_name}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _tag_file(tag: str) -> str:
    return "results/" + tag.replace("@", "_at_") + ".csv"


# -- commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = _now()
    config, backend = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    run = Run(args.out)
    run.dir.mkdir(parents=True, exist_ok=True)
    stored = config.to_json()
    if backend:
        stored["backend"] = backend
    run.write(CONFIG, _canon(stored))
    agent = build_agent(config, args.backend, backend)
    diag, presc = split_tasks(config)
    tasks = diag + presc
    with open(run.path(TASKS), "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
    run.write(SPLITS, _canon({"diag": [t.task_id for t in diag], "presc": [t.task_id for t in presc]}))
    episodes = map_tasks(lambda t: run_pipeline(t, agent, seed=config.seed), tasks, args.jobs, agent.serial)
    write_episodes(run.path(EPISODES), episodes)
    cache = OracleCache(run.path(ORACLE), "gold")
    if cache.sealed:
        cache.verify()
    fill_oracles(cache, tasks, gold_backend, agent.k)
    outs = [run.path(n) for n in (CONFIG, TASKS, SPLITS, EPISODES, ORACLE)]
    run.manifest("simulate", args.argv, outs, config, started)
    print(f"simulated {len(tasks)} tasks ({len(diag)} diag / {len(presc)} presc) -> {run.dir}")
    return 0


def _diag_context(run: Run, config: SimulationConfig, tau: float):
    pools = read_pools(run.path("pools.json"))
    census = json.loads(run.path("census.json").read_text(encoding="utf-8"))
    stats = RoutingStats.from_json(json.loads(run.path("routing_stats.json").read_text(encoding="utf-8")))
    return PrescriptionContext(pools, census["pop_target"], census["naive_target"], stats, tau,
                               DegradedOracle(config.routing_corruption, config.seed))


def cmd_diagnose(args) -> int:
    started = _now()
    run = Run(args.out)
    run.need(CONFIG, TASKS, SPLITS, EPISODES, ORACLE)
    config, backend = run.config()
    tau = config.tau if args.tau is None else args.tau
    taus = config.tau_sweep if args.tau_sweep is None else tuple(args.tau_sweep)
    agent = build_agent(config, args.backend, backend)
    tasks, splits, baselines = run.tasks(), run.splits(), run.baselines()
    cache = OracleCache(run.path(ORACLE))
    cache.verify()
    diag = [tasks[i] for i in splits["diag"]]
    missing = [t.task_id for t in diag if t.task_id not in baselines]
    if missing:
        raise CLIError(f"missing baseline episodes for {len(missing)} diagnosis tasks, e.g. {missing[0]}")
    oracles = {t.task_id: cache.oracle_set(t.task_id, agent.k) for t in diag}
    judge = RubricJudge()
    ds = map_tasks(lambda t: diagnose_task(t, agent, oracles[t.task_id], judge, config.seed,
                                           baselines[t.task_id]), diag, args.jobs, agent.serial)
    sweep = CausalSweepResult.from_per_task({d.task_id: d.delta_F for d in ds})
    triples = [x for d in ds for x in d.triples]
    try:
        censuses = tau_sensitivity(triples, taus)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    naive = naive_severity_target([d.severities for d in ds])
    write_sweep_csv(run.path("sweep.csv"), ds, tau)
    summary = {"means": sweep.means, "pop_target": sweep.pop_target, "naive_target": naive, "tau": tau,
               "census": fate_census(triples, tau).to_json(), "censuses": [c.to_json() for c in censuses]}
    run.write("census.json", _canon(summary))
    pools = build_pools(ds, tasks, oracles, config.tau_demo, config.k)
    write_pools(run.path("pools.json"), pools)
    run.write("routing_stats.json", _canon(RoutingStats.from_triples(triples).to_json()))
    write_records_csv(run.path("severities_diag.csv"),
                      [FailureRecord.from_severity(d.task_id, judge_episode(d.baseline, oracles[d.task_id], judge))
                       for d in ds])
    digest = cache.seal() if not cache.sealed else cache.content_hash
    outs = [run.path(n) for n in ("sweep.csv", "census.json", "pools.json", "routing_stats.json",
                                  "severities_diag.csv", ORACLE + ".seal")]
    run.manifest("diagnose", args.argv, outs, config, started)
    print(f"pop_target=M{sweep.pop_target} naive_target=M{naive}; oracle cache sealed ({digest[:12]})")
    return 0


def cmd_prescribe(args) -> int:
    started = _now()
    run = Run(args.out)
    run.need(CONFIG, TASKS, SPLITS, EPISODES, ORACLE, "pools.json", "census.json", "routing_stats.json")
    config, backend = run.config()
    tags = list(args.configs) if args.configs else list(DEFAULT_CONFIGURATIONS)
    for tag in tags:
        try:
            parse_configuration(tag, len(DEFAULT_SLOTS))
        except ValueError as exc:
            raise CLIError(str(exc)) from None
    cache = OracleCache(run.path(ORACLE))
    if not cache.sealed:
        raise CLIError("oracle cache is not sealed; run diagnose first")
    cache.verify()
    sealed_hash = cache.content_hash
    agent = build_agent(config, args.backend, backend)
    tasks, splits, baselines = run.tasks(), run.splits(), run.baselines()
    presc = [tasks[i] for i in splits["presc"]]
    oracles = {t.task_id: cache.oracle_set(t.task_id, agent.k) for t in presc}
    tau = config.tau if args.tau is None else args.tau
    ctx = _diag_context(run, config, tau)
    judge = RubricJudge()
    need = set(tags) | ({"baseline", "popccp@M1", "popccp@M3", "adaptive-zscore"} if args.table4 else set())
    if args.cascade:
        need |= {"baseline", "popccp@M1", "popccp@M3"}
    ordered = list(dict.fromkeys(tags + sorted(need - set(tags))))
    results, outs = {}, []
    for tag in ordered:
        r = run_configuration(tag, presc, agent, oracles, judge, baselines, ctx, config.seed, args.jobs)
        results[tag] = r
        p = run.path(_tag_file(tag))
        p.parent.mkdir(parents=True, exist_ok=True)
        r.write_csv(p)
        outs.append(p)
        outs.append(run.write(_tag_file(tag)[:-4] + ".json", _canon(r.summary())))
    if cache.content_hash != sealed_hash:
        raise CLIError("oracle cache changed during prescription")
    summary = {"pop_target": ctx.pop_target, "configurations": [results[t].summary() for t in ordered]}
    outs.append(run.write("prescribe_summary.json", _canon(summary)))
    write_records_csv(run.path("severities_presc.csv"),
                      [FailureRecord.from_severity(e.task_id, judge_episode(e, oracles[e.task_id], judge), tag)
                       for tag, r in results.items() for e in r.episodes])
    outs.append(run.path("severities_presc.csv"))
    if args.table4:
        outs += _write_table4(run, results)
    if args.cascade:
        tables = {t: cascade_shift(results["baseline"].episodes, results[t].episodes).to_json()
                  for t in ("popccp@M1", "popccp@M3")}
        outs.append(run.write("cascade.json", _canon(tables)))
        reporting.write_shift_csv(run.path("cascade.csv"), tables)
        outs.append(run.path("cascade.csv"))
    run.manifest("prescribe", args.argv, outs, config, started)
    for row in summary["configurations"]:
        print(f"{row['configuration_tag']:<24} mean delta {row['mean_delta']:+.3f}")
    return 0


def _write_table4(run: Run, results) -> list:
    rows = reporting.table4(results)
    p1 = run.write("table4.json", _canon(reporting.stat_reports_json(rows)))
    reporting.write_stat_reports_csv(run.path("table4.csv"), rows)
    return [p1, run.path("table4.csv")]


def _load_results(run: Run, tags) -> dict:
    out = {}
    for tag in tags:
        p = run.path(_tag_file(tag))
        if p.exists():
            out[tag] = ConfigurationResult.read_csv(p, tag)
    return out


def cmd_table4(args) -> int:
    started = _now()
    run = Run(args.out)
    config, _ = run.config()
    results = _load_results(run, [t for _, a, b in reporting.TABLE4_COMPARISONS for t in (a, b)])
    try:
        outs = _write_table4(run, results)
    except KeyError as exc:
        raise CLIError(f"missing configuration results: {exc}") from None
    run.manifest("table4", args.argv, outs, config, started)
    print(Path(outs[0]).read_text(encoding="utf-8"), end="")
    return 0


def cmd_report(args) -> int:
    started = _now()
    run = Run(args.out)
    config, _ = run.config()
    report = {"run_id": f"run-{_sha(run.path(CONFIG))[:12]}", "note": reporting.HOLM_NOTE}
    if run.path("census.json").exists():
        report["diagnosis"] = json.loads(run.path("census.json").read_text(encoding="utf-8"))
    expected = list(args.configs) if args.configs else list(DEFAULT_CONFIGURATIONS)
    if run.path("prescribe_summary.json").exists():
        done = json.loads(run.path("prescribe_summary.json").read_text(encoding="utf-8"))["configurations"]
        expected += [r["configuration_tag"] for r in done if r["configuration_tag"] not in expected]
    results = _load_results(run, expected)
    if not results and not args.judge_a:
        raise CLIError(f"missing inputs in {run.dir}: no prescription results; run prescribe first")
    report["configurations"] = [results[t].summary() if t in results else {"configuration_tag": t, "missing": True}
                                for t in expected]
    report["missing_configurations"] = [t for t in expected if t not in results]
    try:
        report["table4"] = reporting.stat_reports_json(reporting.table4(results))
    except KeyError:
        report["table4"] = None
    for name, key in (("cascade.json", "cascade"), ("kappa_grid.json", "kappa_grid")):
        if run.path(name).exists():
            report[key] = json.loads(run.path(name).read_text(encoding="utf-8"))
    if args.judge_a or args.judge_b:
        if not (args.judge_a and args.judge_b):
            raise CLIError("judge agreement needs both --judge-a and --judge-b")
        for p in (args.judge_a, args.judge_b):
            if not Path(p).is_file():
                raise CLIError(f"severity file not found: {p}")
        report["judge_agreement"] = reporting.judge_agreement(args.judge_a, args.judge_b)
    outs = [run.write("report.json", _canon(report)), run.write("report.txt", reporting.render_text(report))]
    run.manifest("report", args.argv, outs, config, started)
    print(run.path("report.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_kappa_grid(args) -> int:
    started = _now()
    config, _ = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    run = Run(args.out)
    run.dir.mkdir(parents=True, exist_ok=True)
    if not run.path(CONFIG).exists():
        run.write(CONFIG, _canon(config.to_json()))
    rows = kappa_grid(config, args.kappas or KAPPA_GRID, args.jobs)
    onset = hazard_onset(rows)
    outs = [run.write("kappa_grid.json", _canon({"rows": rows, "hazard_onset": onset}))]
    run.manifest("kappa-grid", args.argv, outs, config, started)
    for r in rows:
        print(f"kappa={r['kappa']:<5g} compensator_rate_M3={r['compensator_rate_m3']:.3f} "
              f"delta_CCP@M3={r['delta_ccp_m3']:+.3f}")
    return 0


def cmd_paradox(args) -> int:
    started = _now()
    config, _ = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    run = Run(args.out)
    run.dir.mkdir(parents=True, exist_ok=True)
    if not run.path(CONFIG).exists():
        run.write(CONFIG, _canon(config.to_json()))
    rep = reproduce_paradox(config, args.jobs)
    body = rep.to_json()
    if args.cascade:
        body["cascade"] = rep.cascade()
    outs = [run.write("paradox_report.json", _canon(body))]
    rep.write_f_csv(run.path("paradox_f.csv"))
    outs.append(run.path("paradox_f.csv"))
    run.manifest("paradox", args.argv, outs, config, started)
    for tag, d in rep.mean_delta.items():
        print(f"{tag:<24} mean delta {d:+.3f}")
    print(f"M1 vs M3: p={rep.contrast['raw_p']:.3g}")
    return 0


# -- parser -------------------------------------------------------------------

def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _tags(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalpipe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False):
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--backend", choices=("simulated", "external"), default="simulated")
        if config:
            sp.add_argument("--config", required=True, help="simulation config JSON")
            sp.add_argument("--seed", type=int, default=None, help="override the root seed")

    sp = sub.add_parser("simulate", help="generate tasks, baseline episodes and the oracle cache")
    common(sp, config=True)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("diagnose", help="causal sweep, mediation, fate census, pools; seals the oracle cache")
    common(sp)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--tau-sweep", type=_floats, default=None)
    sp.set_defaults(fn=cmd_diagnose)

    sp = sub.add_parser("prescribe", help="run prescription configurations on the held-out split")
    common(sp)
    sp.add_argument("--configs", type=_tags, default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--cascade", action="store_true", help="also emit the cascade shift tables")
    sp.add_argument("--no-table4", dest="table4", action="store_false")
    sp.set_defaults(fn=cmd_prescribe)

    sp = sub.add_parser("table4", help="four pre-specified paired comparisons with Holm correction")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_table4)

    sp = sub.add_parser("report", help="consolidated text + JSON report")
    sp.add_argument("--out", required=True)
    sp.add_argument("--configs", type=_tags, default=None)
    sp.add_argument("--judge-a", default=None, help="severity CSV from the first judge")
    sp.add_argument("--judge-b", default=None, help="severity CSV from the second judge")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("kappa-grid", help="compensator rate and CCP@M3 delta across coupling strengths")
    common(sp, config=True)
    sp.add_argument("--kappas", type=_floats, default=None)
    sp.set_defaults(fn=cmd_kappa_grid)

    sp = sub.add_parser("paradox", help="one-shot in-memory diagnose + prescribe on the simulator")
    common(sp, config=True)
    sp.add_argument("--cascade", action="store_true")
    sp.set_defaults(fn=cmd_paradox)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
