"""Command-line harness: ``cgaopt run`` and ``cgaopt audit``.

Exit codes: 0 converged (or audit passed), 1 bad input, 3 iteration limit
reached without convergence, 4 numerical/solver failure, 5 audit failed.
Set CGAOPT_NUM_THREADS to cap BLAS/OpenMP worker threads.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import field_net as fn
from .artifacts import write_composition_csv, write_convergence_csv, write_pgm
from .config import ProblemConfig, parse_config
from .errors import CgaoptError, IllPosedProblem, InvalidConfig, NonFiniteError, RunAborted, SolverFailure
from .mesh import Grid2D, element_centers
from .optimizer import OptimizationResult, run_baseline_element, run_optimization
from .spectrum import (band_energy_ratio, bernstein_audit, dft2, field_to_lattice, network_period_spectrum,
                       report_lines)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAX_ITER = 3
EXIT_SOLVER = 4
EXIT_AUDIT = 5

THREADS_ENV = "CGAOPT_NUM_THREADS"
# Out-of-band energy allowed over one network period (leakage-free lattice).
PERIOD_BAND_TOL = 1e-6

COMPOSITION = "composition.csv"
CONVERGENCE = "convergence.csv"
REPORT = "report.txt"
CHECKPOINT = "network.ckpt"
AUDIT_REPORT = "audit_report.txt"

log = logging.getLogger("cgaopt")


def artifact_names(mode: str, n_components: int) -> list[str]:
    """Exact file set written by a successful or max-iteration run."""
    names = [COMPOSITION, CONVERGENCE, REPORT] + [f"rho_{j + 1}.pgm" for j in range(n_components)]
    if mode == "neural":
        names.append(CHECKPOINT)
    return sorted(names)


def thread_limit(deterministic: bool):
    """Context capping native thread pools: 1 in deterministic mode, else $CGAOPT_NUM_THREADS."""
    n = 1 if deterministic else None
    env = os.environ.get(THREADS_ENV)
    if n is None and env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidConfig(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise InvalidConfig(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def analysis_lines(grid: Grid2D, rho: np.ndarray, bandwidth, params: fn.MfnParams | None) -> list[str]:
    """Spectrum of the element field, plus period spectrum and Bernstein audit for a network."""
    spec = dft2(field_to_lattice(rho, grid), grid.lx, grid.ly)
    lines = report_lines(spec, bandwidth)
    if params is not None:
        audit = bernstein_audit(params, grid, bandwidth)
        lines += report_lines(audit=audit)
        if params.config.period is not None:
            ratio = band_energy_ratio(network_period_spectrum(params), *bandwidth)
            lines += [f"period.size = {params.config.period[0]:.12g},{params.config.period[1]:.12g}",
                      f"period.out_of_band = {ratio:.6e}",
                      f"period.passed = {str(ratio < PERIOD_BAND_TOL).lower()}"]
    return lines


def _summary(cfg: ProblemConfig, mode: str, seed: int, res: OptimizationResult | None, status: str,
             history: list[dict]) -> dict:
    last = history[-1] if history else {}
    out = {"config": cfg.source, "mode": mode, "seed": seed, "status": status}
    if res is not None:
        out.update({"converged": str(res.converged).lower(), "iterations": res.iterations,
                    "J": f"{res.J:.12g}", "J0": f"{res.J0:.12g}", "J_ratio": f"{res.J_ratio:.12g}",
                    "wall_time": f"{res.wall_time:.3f}"})
    for key in ("g_m", "g_u", "g_l", "g_p", "rho_min", "rho_max", "partition_max_dev", "tau"):
        if key in last:
            out[f"final.{key}"] = f"{last[key]:.12g}"
    return out


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    mode = args.mode or cfg.run["mode"]
    seed = cfg.network["seed"] if args.seed is None else args.seed
    deterministic = args.deterministic or cfg.run["deterministic"]
    out = Path(args.out or cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    with thread_limit(deterministic):
        problem = cfg.build_problem()
        run = cfg.run_config(deterministic)
        S = problem.n_components
        params = None
        if mode == "neural":
            params = fn.init_mfn(cfg.network_config(S, seed))
        log.info("%s run on %s: %d elements, %d components", mode, cfg.source, problem.grid.n_elem, S)
        try:
            if mode == "neural":
                res = run_optimization(problem, params, run)
            else:
                res = run_baseline_element(problem, run)
        except (RunAborted, SolverFailure, IllPosedProblem, NonFiniteError) as exc:
            history = getattr(exc, "history", [])
            if history:
                write_convergence_csv(out / CONVERGENCE, history)
            if getattr(exc, "params", None) is not None:
                fn.save_checkpoint(exc.params, out / CHECKPOINT)
            lines = [f"{k} = {v}" for k, v in _summary(cfg, mode, seed, None, "solver_failure", history).items()]
            lines.append(f"error = {exc}")
            (out / REPORT).write_text("\n".join(lines) + "\n")
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVER

        grid = problem.grid
        write_composition_csv(out / COMPOSITION, res.rho)
        write_convergence_csv(out / CONVERGENCE, res.history)
        for j in range(S):
            write_pgm(out / f"rho_{j + 1}.pgm", res.rho[:, j], grid)
        if res.params is not None:
            fn.save_checkpoint(res.params, out / CHECKPOINT)
        status = "converged" if res.converged else "max_iter"
        summary = _summary(cfg, mode, seed, res, status, res.history)
        lines = report_lines(extra=summary) + analysis_lines(grid, res.rho, cfg.bandwidth, res.params)
        (out / REPORT).write_text("\n".join(lines) + "\n")
    print(f"{mode}: {status} after {res.iterations} iterations, J = {res.J:.6g} (J/J0 = {res.J_ratio:.4f}) -> {out}")
    return EXIT_OK if res.converged else EXIT_MAX_ITER


def _check_compatible(cfg: ProblemConfig, params: fn.MfnParams, S: int) -> None:
    expected = cfg.network_config(S, seed=params.config.seed)
    have = params.config
    for name in ("n_layers", "width", "n_out", "bandwidth", "period"):
        a, b = getattr(have, name), getattr(expected, name)
        if (tuple(a) if isinstance(a, (tuple, list)) else a) != (tuple(b) if isinstance(b, (tuple, list)) else b):
            raise InvalidConfig(f"checkpoint {name} = {a} does not match config ({b})")


def cmd_audit(args) -> int:
    cfg = parse_config(args.config)
    params = fn.load_checkpoint(args.checkpoint)
    material = cfg.build_material()
    _check_compatible(cfg, params, material.n_components)
    grid = cfg.build_grid()
    with thread_limit(True):
        rho = fn.forward(params, element_centers(grid))
        lines = analysis_lines(grid, rho, cfg.bandwidth, params)
    text = "\n".join([f"checkpoint = {args.checkpoint}", f"config = {cfg.source}"] + lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / AUDIT_REPORT).write_text(text)
    sys.stdout.write(text)
    ok = "audit.passed = true" in lines and "period.passed = false" not in lines
    return EXIT_OK if ok else EXIT_AUDIT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgaopt", description="Band-limited composition optimization for graded alloys")
    ap.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="optimize a design described by a config file")
    r.add_argument("config")
    r.add_argument("--mode", choices=["neural", "baseline"], help="override [run] mode")
    r.add_argument("--seed", type=int, help="override [network] seed")
    r.add_argument("--out", help="output directory (default: [output] dir)")
    r.add_argument("--deterministic", action="store_true", help="single-threaded, reproducible run")
    r.set_defaults(func=cmd_run)
    a = sub.add_parser("audit", help="spectrum and gradation audit of a saved network")
    a.add_argument("checkpoint")
    a.add_argument("config")
    a.add_argument("--out", help="also write audit_report.txt here")
    a.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CgaoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
