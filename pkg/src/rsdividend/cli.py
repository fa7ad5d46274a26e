"""Command-line entry point: simulate | estimate | fd | train | evaluate."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RunConfig
from .core import ConfigError, EnvParams, NoPositiveRoot
from .estimation import em_estimate, heuristic_estimate, summarize, write_table_csv
from .evaluation import DegenerateEvaluation, FrozenPolicy, evaluate
from .evaluation import write_table_csv as write_eval_csv
from .fd import (PGrid, SplitCalibrationError, benchmark_value, calibrate_splits,
                 fd_at_splits, ols_poly_fit)
from .market import (STREAM_INIT, STREAM_NOISE, STREAM_REGIME, initial_regime, path_rng,
                     simulate_regime_chain, simulate_surplus, simulate_uncontrolled_paths)
from .parametric import ParametricModel
from .trainer import TrainingFailure, load_checkpoint, train

log = logging.getLogger("rsdividend")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (NoPositiveRoot, TrainingFailure, SplitCalibrationError,
                  DegenerateEvaluation, FloatingPointError, ArithmeticError)


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig, n_paths: int | None = None) -> str:
    sim = cfg.simulate
    n_paths = n_paths or sim.n_paths
    control = dataclasses.replace(cfg.control, horizon_T=sim.years)
    rate = control.cap_a if sim.dividend == "cap" else 0.0
    if sim.dividend not in ("none", "cap"):
        raise ConfigError(f"unknown dividend rule {sim.dividend!r}")
    path = _out(cfg, "paths.csv")
    n = control.n_steps
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path_id", "k", "t", "x", "regime", "u", "ruined"])
        for i in range(n_paths):
            start = initial_regime(control.p0, path_rng(cfg.seed, i, STREAM_INIT))
            reg = simulate_regime_chain(cfg.env, n, control.dt,
                                        path_rng(cfg.seed, i, STREAM_REGIME), start)
            rp = simulate_surplus(cfg.env, control, reg, np.full(n, rate),
                                  rng=path_rng(cfg.seed, i, STREAM_NOISE))
            ruined = int(not rp.alive)
            for k in range(n + 1):
                wr.writerow([i, k, _fmt(rp.times[k]), _fmt(rp.surplus[k]), int(rp.regimes[k]),
                             _fmt(rp.dividends[k]), ruined])
    return path


# ---------------------------------------------------------------- estimate


def _estimate_one(args):
    surplus, dt, est, deltas = args
    h = heuristic_estimate(surplus, dt, est.lookback, est.eta_u, deltas, strict=False)
    e = em_estimate(surplus, dt, est.em_iters, est.em_tol, deltas)
    return h, e


def cmd_estimate(cfg: RunConfig, workers: int = 1, single_path: int | None = None) -> str:
    est = cfg.estimation
    deltas = (cfg.env.delta1, cfg.env.delta2)
    if single_path is not None:
        paths = simulate_uncontrolled_paths(cfg.env, cfg.control, est.years, 1, cfg.seed,
                                            first_index=single_path)
    else:
        paths = simulate_uncontrolled_paths(cfg.env, cfg.control, est.years, est.n_paths, cfg.seed)
    jobs = [(p.surplus, cfg.control.dt, est, deltas) for p in paths]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_estimate_one, jobs))
    else:
        results = [_estimate_one(j) for j in jobs]
    reports = [r for pair in results for r in pair]
    table = _out(cfg, "estimation_table.csv")
    write_table_csv(summarize(reports), table)
    with open(_out(cfg, "estimates.json"), "w") as fh:
        json.dump([{"path": i, "heuristic": h.values, "em": e.values, "em_converged": e.converged,
                    "em_monotone": e.diagnostics["monotone"]}
                   for i, (h, e) in enumerate(results)], fh, sort_keys=True, indent=1)
    return table


# ---------------------------------------------------------------- fd


def solve_fd(env: EnvParams, lam: float, cap_a: float, fdc) -> tuple:
    """FD benchmark for one configuration; returns (solution, note)."""
    grid = PGrid(fdc.grid_cells)
    try:
        sol = calibrate_splits(env, lam, cap_a, tuple(fdc.targets), grid, fdc.relax, fdc.tol,
                               fdc.tol, fdc.max_iter, tuple(fdc.init), fdc.stencil, strict=False)
        return sol, "calibrated" if sol.converged else "not converged"
    except ValueError:
        # negative boundary targets: keep the initial splits
        s = tuple(fdc.init)
        return fd_at_splits(env, lam, cap_a, (s[0], 1 - s[0]), (s[1], 1 - s[1]), grid,
                            fdc.stencil), "fixed splits"


def cmd_fd(cfg: RunConfig, sweep: bool = False) -> str:
    fdc = cfg.fd
    cases = ([(a, s) for a in fdc.sweep_caps for s in fdc.sweep_sigmas] if sweep
             else [(cfg.control.cap_a, cfg.env.sigma)])
    xs = np.linspace(0.0, fdc.x_max, fdc.x_points)
    ps = np.linspace(0.0, 1.0, fdc.p_points)
    surf_path = _out(cfg, "fd_surface.csv")
    ols_path = _out(cfg, "fd_ols.csv")
    summary = []
    with open(surf_path, "w", newline="") as fs, open(ols_path, "w", newline="") as fo:
        ws, wo = csv.writer(fs), csv.writer(fo)
        ws.writerow(["cap_a", "sigma", "x", "p", "v"])
        wo.writerow(["cap_a", "sigma", "curve", "p", "fd", "ols", "nmae"])
        for a, s in cases:
            env = dataclasses.replace(cfg.env, sigma=s)
            sol, note = solve_fd(env, cfg.control.lam, a, fdc)
            X, P = np.meshgrid(xs, ps, indexing="ij")
            v, _ = benchmark_value(sol, X.ravel(), P.ravel())
            for x, p, val in zip(X.ravel(), P.ravel(), v):
                ws.writerow([a, s, _fmt(x), _fmt(p), _fmt(val)])
            step = max(1, (len(sol.p) - 1) // (fdc.p_points - 1))
            fits = {}
            for name, g in (("g1", sol.g1), ("g2", sol.g2), ("g", sol.g1 + sol.g2)):
                coef, nmae = ols_poly_fit(sol.p, g, 2)
                fits[name] = nmae
                fit = np.polynomial.polynomial.polyval(sol.p, coef)
                for j in range(0, len(sol.p), step):
                    wo.writerow([a, s, name, _fmt(sol.p[j]), _fmt(g[j]), _fmt(fit[j]), _fmt(nmae)])
            summary.append({"cap_a": a, "sigma": s, "note": note, "kappa": [sol.kappa1, sol.kappa2],
                            "converged": sol.converged, "residuals": list(sol.residuals),
                            "ols_nmae": fits})
            if not sweep:
                sol.to_json(_out(cfg, "fd_solution.json"))
    with open(_out(cfg, "fd_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return surf_path


# ---------------------------------------------------------------- train


def _trainer_for(cfg: RunConfig, mode: str | None, filt: str | None, iterations: int | None):
    tc = cfg.trainer
    kw = {}
    if mode == "ml":
        kw["mode"] = "ml"
    elif mode == "ctd":
        kw["mode"] = "ctd"
    elif mode == "ctd-star":
        kw.update(mode="ctd", filter_source="est", reg_source="est")
    if filt is not None and mode != "ctd-star":
        kw["filter_source"] = filt
    if iterations is not None:
        kw["n_iterations"] = iterations
    return dataclasses.replace(tc, **kw)


def cmd_train(cfg: RunConfig, mode: str | None = None, filt: str | None = None,
              iterations: int | None = None, resume: str | None = None, tag: str = "") -> str:
    tc = _trainer_for(cfg, mode, filt, iterations)
    name = tag or f"{mode or tc.mode}_{tc.filter_source}"
    ckpt = _out(cfg, f"theta_{name}.json")
    res = train(tc, cfg.control, cfg.env, cfg.seed,
                resume=load_checkpoint(resume) if resume else None, checkpoint_path=ckpt)
    res.log.to_csv(_out(cfg, f"trainlog_{name}.csv"))
    return ckpt


# ---------------------------------------------------------------- evaluate


def _eval_one(args):
    policy_spec, cfg, env_filter = args
    if policy_spec == "optimal":
        sol, _ = solve_fd(cfg.env, cfg.control.lam, cfg.control.cap_a, cfg.fd)
        pol = FrozenPolicy.from_fd(sol)
    else:
        d = load_checkpoint(policy_spec)
        model = ParametricModel((cfg.env.delta1, cfg.env.delta2), cfg.control.lam,
                                cfg.control.cap_a, cfg.trainer.n_grid, d["theta"].m)
        pol = FrozenPolicy.from_theta(model, d["theta"],
                                      os.path.splitext(os.path.basename(policy_spec))[0])
    # test paths use a seed distinct from training episodes
    return evaluate(pol, cfg.env, env_filter, cfg.control, cfg.evaluation.n_paths,
                    seed=cfg.seed + 1, chunk=cfg.evaluation.chunk)


def cmd_evaluate(cfg: RunConfig, checkpoints=(), filt: str = "true", workers: int = 1,
                 optimal: bool = True) -> str:
    env_filter = cfg.env
    if filt == "est":
        from .trainer import estimate_environment
        env_filter = estimate_environment(cfg.env, cfg.control, cfg.seed, 0,
                                          cfg.trainer.history_years)[0]
    specs = (["optimal"] if optimal else []) + list(checkpoints)
    if not specs:
        raise ConfigError("nothing to evaluate")
    jobs = [(s, cfg, env_filter) for s in specs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_eval_one, jobs))
    else:
        reports = [_eval_one(j) for j in jobs]
    path = _out(cfg, "evaluation_table.csv")
    write_eval_csv(reports, path)
    with open(_out(cfg, "evaluation.json"), "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, sort_keys=True, indent=1)
    return path


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", help="output directory")
    ap = argparse.ArgumentParser(prog="rsdividend", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--n-paths", type=int)
    p = sub.add_parser("estimate", parents=[common])
    p.add_argument("--single-path", type=int, help="estimate one path with this index")
    p = sub.add_parser("fd", parents=[common])
    p.add_argument("--sweep", action="store_true", help="run the cap x sigma grid")
    p = sub.add_parser("train", parents=[common])
    p.add_argument("--mode", choices=["ml", "ctd", "ctd-star"])
    p.add_argument("--filter", choices=["true", "est"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="checkpoint JSON to continue from")
    p.add_argument("--tag", default="")
    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("checkpoints", nargs="*")
    p.add_argument("--filter", choices=["true", "est"], default="true")
    p.add_argument("--no-optimal", action="store_true")
    p = sub.add_parser("dump-config", parents=[common], help="print the effective config")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.out:
            cfg = cfg.replace(out_dir=args.out)
        workers = max(1, args.workers)
        if args.command == "simulate":
            out = cmd_simulate(cfg, args.n_paths)
        elif args.command == "estimate":
            out = cmd_estimate(cfg, workers, args.single_path)
        elif args.command == "fd":
            out = cmd_fd(cfg, args.sweep)
        elif args.command == "train":
            out = cmd_train(cfg, args.mode, args.filter, args.iterations, args.resume, args.tag)
        elif args.command == "evaluate":
            out = cmd_evaluate(cfg, args.checkpoints, args.filter, workers, not args.no_optimal)
        else:
            sys.stdout.write(cfg.to_yaml())
            return EXIT_OK
    except (ConfigError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
