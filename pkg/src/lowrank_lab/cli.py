"""Command-line entry point: gen, run, eval, check, bench.

Exit codes: 0 ok, 1 algorithm failure, 2 usage error, 3 assertion violation.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io, seeding
from .analysis import sys_id_report
from .envs import (KINDS, GenSpec, HypothesisFamily, check_dlv_bound, compute_reachability, gen_hypothesis_family,
                   gen_lowerbound_mdp, gen_matching_slack_mdp, gen_rank2_separation, generate, truth_family)
from .errors import LowRankLabError
from .flambe import PLANNERS, default_beta, run_flambe, run_metrics
from .mdp import LowRankMDP
from .oracles import mle_bound
from .planners import FqiConfig, PlannerResult
from .suites import SUITES, benchmark_env, benchmark_family, run_suite

EXIT_OK, EXIT_ALGO, EXIT_USAGE, EXIT_ASSERT = 0, 1, 2, 3

METRICS_COLUMNS = ("seed", "level", "sys_id_error", "kappa", "planner_T", "log_likelihood", "phi_index", "mu_index")
TRACE_COLUMNS = ("seed", "level") + PlannerResult.TRACE_COLUMNS
SYSID_COLUMNS = ("seed", "level", "worst", "random_mean")
CHECK_COLUMNS = ("case", "value", "bound", "holds")
BENCH_COLUMNS = ("planner", "seconds", "trajectories", "max_sys_id_error")
DEFAULT_TRIALS = {"B1": 100, "C2": 50, "F1": 100, "L1": 50, "propA2": 20}


class UsageError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    env: object = None  # path to model.json or a GenSpec dict
    family: object = None  # path to family.json or {"size": k}; size 0 means truths only
    planner: str = "simplex"
    beta: float | None = None
    n: int = 5000
    delta: float = 0.1
    fqi_n: int = 10_000
    seeds: list = field(default_factory=lambda: [0])
    out: str = "run.json"

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known - {"schema_version"}
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**{k: v for k, v in doc.items() if k in known})
        # relative paths inside a config file are relative to that file
        for key in ("env", "family", "out"):
            val = getattr(cfg, key)
            if key in doc and isinstance(val, str) and not Path(val).is_absolute():
                setattr(cfg, key, str(base / val))
        return cfg

    def validate(self) -> None:
        if self.env is None:
            raise UsageError("an environment (path or generator spec) is required")
        for key in ("env", "family"):
            val = getattr(self, key)
            if isinstance(val, str) and not Path(val).is_file():
                raise UsageError(f"{key} path {val!r} does not exist")
            if val is not None and not isinstance(val, (str, dict)):
                raise UsageError(f"{key} must be a path or an object")
        if self.planner not in PLANNERS:
            raise UsageError(f"planner must be one of {PLANNERS}")
        if self.beta is not None and not self.beta > 0:
            raise UsageError("beta must be positive")
        if int(self.n) < 1 or int(self.fqi_n) < 1:
            raise UsageError("sample sizes must be positive")
        if not 0 < self.delta < 1:
            raise UsageError("delta must lie in (0, 1)")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise UsageError("seeds must be a nonempty list of distinct integers")

    def load_env(self) -> LowRankMDP:
        if isinstance(self.env, str):
            return io.load_model(self.env)
        spec = GenSpec(**self.env)
        return generate(spec, seeding.stream(spec.seed, "env"))

    def load_family(self, env: LowRankMDP, seed: int) -> HypothesisFamily:
        if isinstance(self.family, str):
            return io.family_from_dict(io.read_json(self.family))
        size = 10 if self.family is None else int(self.family.get("size", 10))
        if size == 0:
            return truth_family(env)
        return gen_hypothesis_family(env, size, size, seeding.stream(seed, "family"))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    try:
        kind = args.kind
        if kind == "rank2sep":
            model, spec = gen_rank2_separation(args.M or 3), {"kind": kind, "M": args.M or 3}
        elif kind == "matchingslack":
            model, spec = gen_matching_slack_mdp(args.n or 4), {"kind": kind, "n": args.n or 4}
        elif kind == "lowerbound":
            M = args.M or 4
            v = None if args.v is None else [int(c) for c in args.v]
            model = gen_lowerbound_mdp(M, v, seeding.stream(args.seed, "env"))
            spec = {"kind": kind, "M": M, "v": args.v, "seed": args.seed}
        else:
            gs = GenSpec(kind=kind, N=args.N, K=args.K, Z=args.Z, H=args.H, eta_target=args.eta,
                         seed=args.seed, d=args.d)
            spec = asdict(gs)
            model = generate(gs, seeding.stream(args.seed, "env"))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out or "model.json")
    meta = {"schema_version": io.SCHEMA_VERSION, "seeding_version": seeding.SEEDING_VERSION, "spec": spec,
            "validity": [lvl.check() for lvl in model.levels]}
    if model.latent is not None:
        eta, table = compute_reachability(model)
        meta.update(eta_min=eta, reachability=table, dlv_bound_ok=check_dlv_bound(model, eta_min=eta))
    else:
        meta["eta_min"] = None
    io.save_model(out, model)
    io.write_json(out.with_name("meta.json"), _jsonable(meta))
    if args.family_size is not None:
        fam = (truth_family(model) if args.family_size == 0 else
               gen_hypothesis_family(model, args.family_size, args.family_size, seeding.stream(args.seed, "family")))
        io.write_json(args.family_out or out.with_name("family.json"), io.family_to_dict(fam))
    print(f"wrote {out}")
    return EXIT_OK


def _run_seed(cfg: ExperimentConfig, env: LowRankMDP, seed: int) -> dict:
    family = cfg.load_family(env, seed)
    beta = cfg.beta
    if cfg.planner == "elliptical" and beta is None:
        if env.latent is None:
            raise UsageError("elliptical planner needs --beta when the model has no latent representation")
        beta = default_beta(compute_reachability(env)[0], env.d)
    run = run_flambe(env, family, cfg.planner, beta, int(cfg.n), seeding.stream(seed, "run"),
                     FqiConfig(n=int(cfg.fqi_n)))
    metrics = [{"seed": seed, **r} for r in run_metrics(env, run)]
    traces = [{"seed": seed, "level": d.level, **t} for d in run.diagnostics for t in d.trace]
    record = {
        "seed": seed,
        "beta": beta,
        "learned": io.model_to_dict(run.learned),
        "rhos": [io.policy_to_dict(r) for r in run.rhos],
        "diagnostics": [{k: v for k, v in asdict(d).items() if k not in ("wall_time", "trace")}
                        for d in run.diagnostics],
        "trajectories_used": run.trajectories_used,
        "mle_trajectories": run.mle_trajectories,
        "fqi_trajectories": run.fqi_trajectories,
        "mle_bound": mle_bound(family.size, int(cfg.n), cfg.delta),
    }
    return {"record": record, "metrics": metrics, "traces": traces, "dataset": run.datasets.to_rows()}


def cmd_run(args) -> int:
    doc = {}
    base = Path(".")
    if args.config:
        try:
            doc = io.read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        base = Path(args.config).parent
    overrides = {"env": args.env, "family": args.family, "planner": args.planner, "beta": args.beta, "n": args.n,
                 "delta": args.delta, "fqi_n": args.fqi_n, "out": args.out}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    elif args.seed_given or "seeds" not in doc:
        overrides["seeds"] = [args.seed]
    if args.family_size is not None:
        overrides["family"] = {"size": args.family_size}
    cfg = ExperimentConfig.from_dict(doc, base)
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    cfg.validate()
    try:
        env = cfg.load_env()
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"cannot load environment: {exc}") from exc

    seeds = [int(s) for s in cfg.seeds]
    if args.threads > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_run_seed, [cfg] * len(seeds), [env] * len(seeds), seeds))
    else:
        results = [_run_seed(cfg, env, s) for s in seeds]

    out = Path(cfg.out)
    cfg_doc = asdict(cfg)
    cfg_doc.pop("out")
    io.write_json(out, _jsonable({"schema_version": io.SCHEMA_VERSION, "seeding_version": seeding.SEEDING_VERSION,
                                  "config": cfg_doc, "runs": [r["record"] for r in results]}))
    metrics = [m for r in results for m in r["metrics"]]
    io.write_csv(args.metrics or out.with_name("metrics.csv"), METRICS_COLUMNS, metrics)
    traces = [t for r in results for t in r["traces"]]
    if traces:
        io.write_csv(out.with_name("traces.csv"), TRACE_COLUMNS, traces)
    if args.dataset_out:
        io.write_jsonl(args.dataset_out, [{"seed": r["record"]["seed"], **row} for r in results for row in r["dataset"]])
    for m in metrics:
        print(f"seed={m['seed']} level={m['level']} sys_id={m['sys_id_error']:.4g} kappa={m['kappa']:.4g} "
              f"T={m['planner_T']}")
    return EXIT_OK


def _learned_models(path) -> list:
    doc = io.read_json(path)
    if "runs" in doc:
        return [(r["seed"], io.model_from_dict(r["learned"])) for r in doc["runs"]]
    return [(None, io.model_from_dict(doc))]


def cmd_eval(args) -> int:
    if not args.env or not args.learned:
        raise UsageError("eval needs --env and --learned")
    try:
        env = io.load_model(args.env)
        learned = _learned_models(args.learned)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    for seed, model in learned:
        rep = sys_id_report(env, model, seeding.stream(args.seed, "eval"), n_random=args.n_random)
        rows.extend({"seed": seed, **r} for r in rep.rows())
    io.write_csv(args.out or "sysid.csv", SYSID_COLUMNS, rows)
    for r in rows:
        print(f"seed={r['seed']} level={r['level']} worst={r['worst']:.4g} random_mean={r['random_mean']:.4g}")
    return EXIT_OK


def cmd_check(args) -> int:
    trials = args.trials if args.trials is not None else DEFAULT_TRIALS[args.lemma]
    kw = {}
    if args.env:
        if args.lemma not in ("B1", "L1"):
            raise UsageError("--env applies to the B1 and L1 suites only")
        env = io.load_model(args.env)
        learned = _learned_models(args.learned)[0][1] if args.learned else env
        kw = {"env": env, "learned": learned}
    rows = run_suite(args.lemma, trials, args.seed, **kw)
    if args.out:
        io.write_csv(args.out, CHECK_COLUMNS, rows)
    bad = [r for r in rows if not r["holds"]]
    print(f"{args.lemma}: {len(rows) - len(bad)}/{len(rows)} hold")
    for r in bad:
        print(f"  violated: {r['case']} value={r['value']!r} bound={r['bound']!r}")
    return EXIT_ASSERT if bad else EXIT_OK


def cmd_bench(args) -> int:
    env = benchmark_env(args.seed)
    family = benchmark_family(env, args.seed)
    beta = default_beta(compute_reachability(env)[0], env.d)
    rows = []
    for planner in args.planners:
        start = time.perf_counter()
        run = run_flambe(env, family, planner, beta, args.n, seeding.stream(args.seed, f"bench:{planner}"),
                         FqiConfig(n=args.fqi_n))
        secs = time.perf_counter() - start
        worst = max(m["sys_id_error"] for m in run_metrics(env, run))
        rows.append({"planner": planner, "seconds": secs, "trajectories": run.trajectories_used,
                     "max_sys_id_error": worst})
        print(f"{planner}: {secs:.3f}s trajectories={run.trajectories_used} max_sys_id={worst:.4g}")
    if args.out:
        io.write_csv(args.out, BENCH_COLUMNS, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _seed_list(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("seeds must be comma-separated integers") from exc


class _SeedAction(argparse.Action):
    def __call__(self, parser, ns, values, option_string=None):
        ns.seed = values
        ns.seed_given = True


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), action=_SeedAction, help="master seed (default 0)")
    parser.add_argument("--out", default=d(None), help="output path")
    parser.add_argument("--threads", type=int, default=d(1), help="worker processes for multi-seed runs")
    parser.add_argument("--config", default=d(None), help="JSON experiment config (run)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="lowrank-lab", description=__doc__, formatter_class=fmt)
    _globals(p, suppress=False)
    p.set_defaults(seed_given=False)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a model", formatter_class=fmt, epilog=(
        "writes model.json (or --out) and meta.json beside it with eta_min, the exact\n"
        "reachability table, the latent-count audit and per-level validity checks.\n"
        "--family-size k also writes family.json (k x k; k=0 keeps only the true tables)."))
    _globals(g, suppress=True)
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--N", type=int, default=20)
    g.add_argument("--K", type=int, default=2)
    g.add_argument("--d", type=int, default=None)
    g.add_argument("--Z", type=int, default=3)
    g.add_argument("--H", type=int, default=3)
    g.add_argument("--eta", type=float, default=0.2, help="reachability target, in (0, 1/Z]")
    g.add_argument("--M", type=int, default=None, help="size for rank2sep and lowerbound")
    g.add_argument("--n", type=int, default=None, help="graph order for matchingslack (even)")
    g.add_argument("--v", default=None, help="bit string for lowerbound, e.g. 0110")
    g.add_argument("--family-size", type=int, default=None)
    g.add_argument("--family-out", default=None)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run the feature-learning loop", formatter_class=fmt, epilog=(
        "outputs (schema version embedded in run.json):\n"
        "  run.json      config, learned model, exploration policies, per-level diagnostics\n"
        "  metrics.csv   seed, level, sys_id_error (worst-case expected TV), kappa (realized\n"
        "                coverage ratio, nan without latents), planner_T (policies in the\n"
        "                mixture), log_likelihood (of the selected pair), phi_index, mu_index\n"
        "  traces.csv    seed, level, t, objective (halting value), trace_term (cumulative\n"
        "                potential), bound (2 d log(1 + t/d)); elliptical planner only\n"
        "  --dataset-out JSONL rows with keys seed, h, x, a, xp"))
    _globals(r, suppress=True)
    r.add_argument("--env", default=None, help="model.json")
    r.add_argument("--family", default=None, help="family.json")
    r.add_argument("--family-size", type=int, default=None, help="generate a k x k family instead")
    r.add_argument("--planner", choices=PLANNERS, default=None)
    r.add_argument("--beta", type=float, default=None, help="default eta_min^2 / (9 d)")
    r.add_argument("--n", type=int, default=None, help="triples per level")
    r.add_argument("--delta", type=float, default=None)
    r.add_argument("--fqi-n", type=int, default=None, help="samples per FQI level (realworld)")
    r.add_argument("--seeds", type=_seed_list, default=None, help="comma-separated seeds")
    r.add_argument("--metrics", default=None, help="metrics CSV path (default beside run.json)")
    r.add_argument("--dataset-out", default=None)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="system-identification report", formatter_class=fmt, epilog=(
        "sysid.csv columns: seed (blank for a bare model), level, worst (max over policies of\n"
        "expected TV), random_mean (mean over random tabular policies)"))
    _globals(e, suppress=True)
    e.add_argument("--env", required=False)
    e.add_argument("--learned", required=False, help="run.json or model.json")
    e.add_argument("--n-random", type=int, default=100)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run a named lemma suite", formatter_class=fmt, epilog=(
        "exit 0 when every case holds, 3 otherwise.\n"
        "--out CSV columns: case, value (measured quantity), bound, holds"))
    _globals(c, suppress=True)
    c.add_argument("--lemma", choices=SUITES, required=True)
    c.add_argument("--trials", type=int, default=None)
    c.add_argument("--env", default=None, help="B1/L1: true model")
    c.add_argument("--learned", default=None, help="B1/L1: learned model or run.json (default: --env)")
    c.set_defaults(func=cmd_check)

    b = sub.add_parser("bench", help="time the loop on the benchmark model", formatter_class=fmt, epilog=(
        "--out CSV columns: planner, seconds, trajectories, max_sys_id_error"))
    _globals(b, suppress=True)
    b.add_argument("--planners", type=lambda s: s.split(","), default=list(PLANNERS))
    b.add_argument("--n", type=int, default=5000)
    b.add_argument("--fqi-n", type=int, default=10_000)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LowRankLabError as exc:
        print(f"algorithm failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ALGO


if __name__ == "__main__":
    sys.exit(main())
