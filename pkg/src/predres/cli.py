"""Command-line interface: ``predres <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from . import copula as cp
from . import diagnostics as dg
from . import meanvar as mv
from .config import ConfigError, RunConfig, parse_int_list, read_config_file
from .io import DatasetError, load_dataset, write_columns, write_json, write_outputs
from .resampler import ResamplingPlan, run_pr


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; command-line options take precedence")
    p.add_argument("--out", help="output directory (created on demand)")
    p.add_argument("--seed", type=int)


def _add_family(p: argparse.ArgumentParser):
    p.add_argument("--family", choices=["meanvar", "copula"])
    p.add_argument("--kernel", help="gaussian | student:<df> | mixture:<path>")
    p.add_argument("--mode", choices=list(mv.MODES))
    _add_copula(p)


def _add_copula(p: argparse.ArgumentParser):
    p.add_argument("--rho", type=float)
    p.add_argument("--rho-grid", help="lo:hi:step or comma list (default 0.05:0.95:0.05)")
    p.add_argument("--weights", help="a | b | const:<r> | file:<path>")
    p.add_argument("--grid-min", type=float)
    p.add_argument("--grid-max", type=float)
    p.add_argument("--grid-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predres", description="Predictive resampling toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pr", help="posterior sample by predictive resampling")
    _add_common(p)
    _add_family(p)
    p.add_argument("--data")
    p.add_argument("--estimand", choices=["mean", "variance"])
    p.add_argument("--N", type=int, dest="N")
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--s", type=int, dest="s", help="expected number of observations (checked)")
    p.add_argument("--workers", type=int)
    p.add_argument("--coordinate", type=int)
    p.add_argument("--allow-degenerate", action="store_true", default=None)
    p.add_argument("--kde", action="store_true", default=None, help="also write posterior_density.csv")

    p = sub.add_parser("converge", help="L1 distance to f0 along self-generated paths")
    _add_common(p)
    _add_family(p)
    p.add_argument("--n-max", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--delta", type=float, help="stabilization tolerance")

    p = sub.add_parser("rate", help="median n^gamma TV distance to the limit")
    _add_common(p)
    p.add_argument("--n-list", help="comma-separated increasing n values")
    p.add_argument("--gamma", help="comma-separated exponents")
    p.add_argument("--reps", type=int)

    p = sub.add_parser("select-rho", help="prequential choice of rho")
    _add_common(p)
    _add_copula(p)
    p.add_argument("--data")

    p = sub.add_parser("check", help="total-variation verdicts and martingale reports")
    _add_common(p)
    p.add_argument("--kernel")
    p.add_argument("--mode", choices=list(mv.MODES))
    p.add_argument("--data", help="history for the martingale report (default: 10 standard normal points)")
    _add_copula(p)
    p.add_argument("--copula-bound", type=float)
    p.add_argument("--draws", type=int)

    p = sub.add_parser("bench", help="timing sweep of meanvar and copula resampling")
    _add_common(p)
    _add_copula(p)
    p.add_argument("--bench-s", help="comma-separated data sizes")
    p.add_argument("--bench-N", dest="bench_N", help="comma-separated forward lengths")
    p.add_argument("--B", type=int, dest="B")
    return parser


def _config(args) -> RunConfig:
    vals = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    file_vals = read_config_file(args.config) if args.config else {}
    return RunConfig.from_sources(file_vals, vals)


def _emit(payload: dict):
    print(json.dumps(payload, indent=2, sort_keys=True, default=float))


def cmd_pr(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("pr needs --data")
    data = load_dataset(cfg.data)
    plan = cfg.plan(data)
    ps = run_pr(plan, data, workers=cfg.workers, density=cfg.kde)
    if cfg.out:
        write_outputs(cfg.out, cfg.record(), ps)
    _emit({"summary": ps.summary, "rho": ps.meta.get("rho"), "seconds": ps.meta["seconds"]})


def cmd_converge(cfg: RunConfig):
    fam = cfg.predictive_family(1)
    if isinstance(fam, cp.CopulaFamily) and fam.rho is None:
        raise ConfigError("converge with the copula family needs --rho")
    ns, dist = dg.convergence_paths(fam, cfg.n_max, reps=cfg.reps, seed=cfg.seed)
    idx = [dg.stabilization_index(ns, row, cfg.delta) for row in dist]
    extra = {"stabilization_index": idx, "median_stabilization_index": float(np.median(idx))}
    if cfg.out:
        write_outputs(cfg.out, cfg.record(), convergence=(ns, dist), extra=extra)
    _emit(extra | {"final_l1_median": float(np.median(dist[:, -1]))})


def cmd_rate(cfg: RunConfig):
    n_list = parse_int_list(cfg.n_list, "n_list")
    d = dg.rate_distances(n_list, cfg.reps, cfg.seed)
    rows = {g: dg.rate_experiment(n_list, g, distances=d) for g in cfg.gammas()}
    if cfg.out:
        gam = [g for g in rows for _ in n_list]
        write_columns(f"{cfg.out}/rate.csv", ["gamma", "n", "value"],
                      [gam, [n for g in rows for n, _ in rows[g]], [v for g in rows for _, v in rows[g]]])
        write_json(f"{cfg.out}/summary.json", {"version": __version__, "config": cfg.record(),
                                                "rate": {str(g): r for g, r in rows.items()}})
    _emit({str(g): r for g, r in rows.items()})


def cmd_select_rho(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("select-rho needs --data")
    data = load_dataset(cfg.data)
    if data.shape[1] != 1:
        raise ConfigError("select-rho needs a single-column dataset")
    rhos = cfg.rho_values()
    rho, scores = cp.select_rho(data[:, 0], rhos, cfg.schedule(),
                                cp.make_grid(cfg.grid_min, cfg.grid_max, cfg.grid_size))
    if cfg.out:
        write_columns(f"{cfg.out}/rho_scores.csv", ["rho", "score"], [rhos, scores])
    _emit({"rho": rho, "scores": dict(zip(map(str, rhos), scores.tolist()))})


def cmd_check(cfg: RunConfig):
    sched = cfg.schedule()
    verdict = cp.check_tv_conditions(sched, cfg.copula_bound, cfg.rho)
    if cfg.data:
        hist = load_dataset(cfg.data)
    else:
        from .streams import rng_substream

        hist = rng_substream(cfg.seed, 0, 0).standard_normal((10, 1))
    kernel = cfg.kernel_spec(hist.shape[1])
    stats = mv.absorb(mv.init_stats(hist.shape[1], cfg.mode), hist)
    out = {"weights": sched.describe(), "tv_verdict": verdict.name, "tv_reason": verdict.value}
    if stats.singular:
        out["martingale"] = "skipped: history covariance is singular"
    else:
        rep = dg.martingale_report(kernel, stats, cfg.draws, cfg.seed)
        out["martingale"] = {"n": rep.n, "passed": rep.passed, "max_abs_z": rep.max_abs_z,
                             "mean_z": rep.mean_z.tolist(), "cov_z": rep.cov_z.tolist()}
    if cfg.out:
        write_json(f"{cfg.out}/summary.json", {"version": __version__, "config": cfg.record(), **out})
    _emit(out)


def cmd_bench(cfg: RunConfig):
    from .streams import rng_substream

    s_list = parse_int_list(cfg.bench_s, "bench_s")
    n_list = parse_int_list(cfg.bench_N, "bench_N")
    rho = 0.5 if cfg.rho is None else cfg.rho
    rows = []
    for s in s_list:
        x = rng_substream(cfg.seed, 0, 0).standard_normal(s)
        t0 = time.perf_counter()
        cp.absorb(cp.initial_state(rho, cfg.schedule(), cp.make_grid(cfg.grid_min, cfg.grid_max, cfg.grid_size)), x)
        init = time.perf_counter() - t0
        for N in n_list:
            fam_c = cp.CopulaFamily(rho, schedule=cfg.schedule(), grid_min=cfg.grid_min,
                                    grid_max=cfg.grid_max, grid_size=cfg.grid_size)
            t_m = run_pr(ResamplingPlan(s, N, cfg.B, seed=cfg.seed), x).meta["seconds"]
            t_c = run_pr(ResamplingPlan(s, N, cfg.B, family=fam_c, seed=cfg.seed), x).meta["seconds"]
            rows.append({"s": s, "N": N, "meanvar_seconds": t_m, "copula_seconds": t_c,
                         "copula_init_seconds": init})
    if cfg.out:
        keys = list(rows[0])
        write_columns(f"{cfg.out}/bench.csv", keys, [[r[k] for r in rows] for k in keys])
    _emit({"B": cfg.B, "rows": rows})


COMMANDS = {
    "pr": cmd_pr,
    "converge": cmd_converge,
    "rate": cmd_rate,
    "select-rho": cmd_select_rho,
    "check": cmd_check,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg)
    except (ConfigError, DatasetError, ValueError, OSError) as exc:
        print(f"predres {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
