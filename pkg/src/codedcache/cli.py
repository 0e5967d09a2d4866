"""Command-line experiment runner: rates, allocations, bounds, simulations, sweeps."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .allocation import optimize_oca, optimize_pca
from .bound import BoundGrid, LowerBound
from .cache import from_csv, to_csv
from .catalog import build_model
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DecodeError, DomainError
from .rates import RateEvaluator
from .sim import SimConfig, simulate, summary_csv, trace_csv

SCHEME_ORDER = {"RAN": 0, "UNCODED": 1, "MAN": 2, "PCC": 3, "LB": 4}
RATE_HEADER = ["scheme", "M", "rate", "delta_phi1", "delta_phi2"]
SWEEP_HEADER = ["M", "scheme", "allocation", "analytic_rate", "sim_mean", "sim_stderr", "lower_bound", "wallclock"]


def _fmt(x):
    if x is None or x == "":
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _objective(cfg: ExperimentConfig, scheme: str) -> str:
    return scheme if scheme in ("MAN", "PCC") else cfg.ran_objective


def allocate(cfg: ExperimentConfig, M: float, method: str, objective: str):
    if method == "PCA":
        return optimize_pca(cfg.model, M, objective, cfg.tie_index)
    return optimize_oca(cfg.model, M, objective, cfg.oca["restarts"], cfg.seed, max_iter=cfg.oca["max_iter"],
                        pca_starts=cfg.oca["pca_starts"], tie_index=cfg.tie_index)


def _sim_config(cfg: ExperimentConfig) -> SimConfig:
    s = cfg.sim
    return SimConfig(num_slots=s.num_slots, burn_in=max(s.burn_in, cfg.model.B), seed=cfg.seed, mode=s.mode,
                     arrival_schedule=cfg.schedule(), F=s.F, pcc_part2=cfg.pcc_part2)


def _analytic(breakdown, scheme):
    return {"RAN": breakdown.rate_ran, "UNCODED": breakdown.rate_ran, "MAN": breakdown.rate_man,
            "PCC": breakdown.rate_pcc}[scheme]


def sweep_point(args) -> list[tuple]:
    cfg, M = args
    model = cfg.model
    t0 = time.perf_counter()
    lb = float(LowerBound(model, BoundGrid(cfg.bound_points))(M)[0])
    rows = []
    if "LB" in cfg.schemes:
        rows.append((M, "LB", "-", lb, None, None, lb, time.perf_counter() - t0))
    for alloc in cfg.allocations:
        cache = {}
        for scheme in cfg.schemes:
            if scheme == "LB":
                continue
            t1 = time.perf_counter()
            obj = _objective(cfg, scheme)
            if obj not in cache:
                res = allocate(cfg, M, alloc, obj)
                cache[obj] = (res, RateEvaluator(model, res.Q, tie_index=cfg.tie_index).breakdown())
            res, bd = cache[obj]
            rate = _analytic(bd, scheme)
            sim_mean = sim_se = None
            if cfg.sim.enabled:
                s = "RAN" if scheme == "UNCODED" else scheme
                sim_mean, sim_se = simulate(model, res.Q, _sim_config(cfg), (s,)).summary(s)
            rows.append((M, scheme, alloc, rate, sim_mean, sim_se, lb, time.perf_counter() - t1))
    return rows


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> list[tuple]:
    jobs = [(cfg, M) for M in cfg.M_grid]
    if threads > 1:
        with ProcessPoolExecutor(threads) as ex:
            parts = list(ex.map(sweep_point, jobs))
    else:
        parts = [sweep_point(j) for j in jobs]
    rows = [r for p in parts for r in p]
    rows.sort(key=lambda r: (r[0], SCHEME_ORDER[r[1]], r[2]))
    return rows


def run_chunk_popularity_report(cfg: ExperimentConfig) -> list[tuple]:
    spec = cfg.model_spec
    rep = cfg.chunk_report
    alphas = rep.get("alphas", [spec["alpha"]])
    betas = rep.get("betas", [spec["beta"]])
    rows = []
    for a in alphas:
        for b in betas:
            m = build_model(spec["N"], spec["B"], float(a), float(b), spec["popularity_mode"], spec["arrivals"])
            pop = m.stats.chunk_popularity
            for i in range(m.N):
                for j in range(m.B):
                    rows.append((float(a), float(b), i + 1, j + 1, float(pop[i, j])))
    return rows


def _single_M(cfg: ExperimentConfig) -> float:
    if len(cfg.M_grid) != 1:
        raise ConfigError("this command needs a single cache size ('M' or a one-point 'M_grid')")
    return cfg.M_grid[0]


def _load_Q(cfg: ExperimentConfig, M: float):
    if not cfg.Q_csv:
        return None
    try:
        with open(cfg.Q_csv) as fh:
            Q = from_csv(fh.read(), M)
    except OSError as exc:
        raise ConfigError(f"cannot read Q csv {cfg.Q_csv}: {exc}") from None
    if Q.q.shape != (cfg.model.N, cfg.model.B):
        raise ConfigError(f"Q csv shape {Q.q.shape} does not match the model")
    return Q


def cmd_rate(cfg, args):
    rows = []
    for M in cfg.M_grid:
        Q = _load_Q(cfg, M)
        for scheme in cfg.schemes:
            if scheme == "LB":
                lb = float(LowerBound(cfg.model, BoundGrid(cfg.bound_points))(M)[0])
                rows.append(("LB", M, lb, None, None))
                continue
            Qs = Q if Q is not None else allocate(cfg, M, cfg.allocations[0], _objective(cfg, scheme)).Q
            bd = RateEvaluator(cfg.model, Qs, tie_index=cfg.tie_index).breakdown()
            if scheme == "PCC":
                rows.append((scheme, M, bd.rate_pcc, bd.delta_phi1, bd.delta_phi2))
            else:
                rows.append((scheme, M, _analytic(bd, scheme), None, None))
    _emit(_csv(RATE_HEADER, rows), args.out or cfg.out)


def cmd_optimize(cfg, args):
    M = _single_M(cfg)
    res = allocate(cfg, M, cfg.allocations[0], cfg.objective)
    _emit(to_csv(res.Q), args.out or cfg.out)
    trace = {"method": res.method, "objective": cfg.objective, "M": M, "achieved_rate": res.achieved_rate}
    trace.update({k: v for k, v in res.solver_trace.items() if k != "sweep"})
    sys.stderr.write(json.dumps(trace, default=float, sort_keys=True) + "\n")


def cmd_bound(cfg, args):
    lb = LowerBound(cfg.model, BoundGrid(cfg.bound_points))
    vals = lb(cfg.M_grid)
    rows = [("LB", M, float(v), None, None) for M, v in zip(cfg.M_grid, vals)]
    _emit(_csv(RATE_HEADER, rows), args.out or cfg.out)


def cmd_simulate(cfg, args):
    M = _single_M(cfg)
    Q = _load_Q(cfg, M)
    if Q is None:
        Q = allocate(cfg, M, cfg.allocations[0], cfg.objective).Q
    schemes = []
    for s in cfg.schemes:
        s = "RAN" if s == "UNCODED" else s
        if s != "LB" and s not in schemes:
            schemes.append(s)
    res = simulate(cfg.model, Q, _sim_config(cfg), schemes)
    _emit(summary_csv(res, schemes), args.out or cfg.out)
    trace = args.trace or cfg.sim.trace
    if trace:
        _emit(trace_csv(res), trace)


def cmd_sweep(cfg, args):
    _emit(_csv(SWEEP_HEADER, run_sweep(cfg, args.threads)), args.out or cfg.out)


def cmd_chunk_report(cfg, args):
    header = ["alpha", "beta", "file_index", "chunk_index", "popularity"]
    _emit(_csv(header, run_chunk_popularity_report(cfg)), args.out or cfg.out)


COMMANDS = {
    "rate": cmd_rate,
    "optimize": cmd_optimize,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "chunk-report": cmd_chunk_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="codedcache", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--mode", choices=("sync", "async"), help="arrival scenario for simulations")
        if name == "simulate":
            p.add_argument("--trace", help="per-slot trace CSV path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.mode is not None:
            cfg.mode = args.mode
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        COMMANDS[args.command](cfg, args)
    except (ConfigError, DomainError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (DecodeError, AssertionError) as exc:
        sys.stderr.write(f"internal error: {exc}\n")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
