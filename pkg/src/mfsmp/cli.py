"""Command-line entry point: ``mfsmp <mode> [--config PATH] [--seed N] [--workers N] [--out DIR]``.

Exit status: 0 success, 1 a property check failed, 2 invalid configuration,
3 solver failure (details in ``diagnostics.txt``, or ``summary.txt`` when the
optimizer aborts on rising costs).  An optimizer that stops at its iteration
cap or at the Monte Carlo noise floor (no Armijo step) exits 0; ``status`` in
the summary says which.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND, K, set_workers
from .backward import BsdeSolverError, solve_mf_bsde
from .checks import run_checks
from .config import MODES, ConfigError, ScenarioConfig, build_problem, dump, from_dict, load, with_overrides
from .controls import ControlError, ControlGrid
from .csvio import fmt, write_rows
from .forward import NoiseBank, SimulationError, TimeGrid, moment_report, simulate_mkv
from .measure import MeasureError
from .mollify import mollify_report
from .regression import RegressionError
from .smp import OptimizeOptions, optimize

log = logging.getLogger("mfsmp")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
SOLVER_ERRORS = (SimulationError, BsdeSolverError, RegressionError, ControlError, MeasureError, FloatingPointError)


def _summary(path: Path, items: list[tuple[str, object]]) -> None:
    width = max(len(k) for k, _ in items)
    lines = [f"{k.ljust(width)} = {fmt(v)}" for k, v in items]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _setup(cfg: ScenarioConfig) -> tuple[TimeGrid, NoiseBank, Path]:
    grid = TimeGrid(cfg.grid.T, cfg.grid.M)
    noise = NoiseBank(cfg.seed, cfg.particles.N, grid, cfg.particles.antithetic)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return grid, noise, out


def _common(cfg: ScenarioConfig) -> list[tuple[str, object]]:
    return [
        ("mode", cfg.mode),
        ("problem", cfg.problem.key),
        ("seed", cfg.seed),
        ("N_particles", cfg.particles.N),
        ("M_steps", cfg.grid.M),
        ("T_seconds", cfg.grid.T),
    ]


def run_simulate_sde(cfg: ScenarioConfig) -> int:
    spec = build_problem(cfg)
    grid, noise, out = _setup(cfg)
    ens = simulate_mkv(spec, cfg.sde.x0, grid, noise)
    rows = []
    for k, t in enumerate(grid.times):
        x = np.ascontiguousarray(ens.states[:, k])
        m = K.ordered_mean(x)
        rows.append((k, t, m, K.ordered_mean(x * x), K.ordered_mean((x - m) ** 2)))
    write_rows(out / "report.csv", ["step", "t_seconds", "mean_state", "second_moment_state", "variance_state"], rows)
    n_paths = min(cfg.sde.paths, ens.N)
    if n_paths:
        write_rows(
            out / "paths.csv",
            ["t_seconds", *[f"state_path_{i}" for i in range(n_paths)]],
            [(t, *ens.states[:n_paths, k]) for k, t in enumerate(grid.times)],
        )
    items = _common(cfg) + [("x0_state", cfg.sde.x0), ("mean_state_T", rows[-1][2])]
    for p in (2, 4, 8):
        items.append((f"E_sup_abs_state_pow{p}", moment_report(ens, p)["sup_moment"]))
    items.append(("clamped_drifts", ens.clamped))
    _summary(out / "summary.txt", items)
    return EXIT_OK


def run_solve_bsde(cfg: ScenarioConfig) -> int:
    driver = build_problem(cfg)
    grid, noise, out = _setup(cfg)
    if cfg.bsde.terminal == "constant":
        terminal = cfg.bsde.value
    else:
        terminal = np.ascontiguousarray(noise.W[:, -1])
    sols = []
    for v0 in cfg.bsde.V0:
        sols.append(
            solve_mf_bsde(
                driver, terminal, grid, noise, V0=v0,
                tol_picard=cfg.solver.tol_picard, max_picard=cfg.solver.max_picard,
                degree=cfg.solver.degree, tol_law=cfg.solver.tol_law, max_law=cfg.solver.max_law,
            )
        )
    rows = []
    for v0, sol in zip(cfg.bsde.V0, sols):
        for i, r in enumerate(sol.residuals, start=1):
            rows.append((v0, i, r))
        if not sol.residuals:
            rows.append((v0, sol.picard_iterations, sol.residual))
    write_rows(out / "report.csv", ["picard_init_V0", "picard_iteration", "weighted_residual"], rows)
    first = sols[0]
    write_rows(
        out / "paths.csv",
        ["t_seconds", "mean_Y", "var_Y", "mean_Z"],
        [(r["t"], r["mean_Y"], r["var_Y"], r["mean_Z"]) for r in first.column_stats()],
    )
    y0s = [s.Y0 for s in sols]
    y1 = np.ascontiguousarray(first.Y[:, 1])
    se = float(np.sqrt(K.ordered_mean((y1 - K.ordered_mean(y1)) ** 2) / max(noise.N - 1, 1)))
    items = _common(cfg) + [("terminal", cfg.bsde.terminal)]
    for v0, sol in zip(cfg.bsde.V0, sols):
        items += [
            (f"Y0[V0={fmt(float(v0))}]", sol.Y0),
            (f"picard_iterations[V0={fmt(float(v0))}]", sol.picard_iterations),
            (f"y0_bound[V0={fmt(float(v0))}]", sol.y0_bound),
        ]
    items += [
        ("Y0", y0s[0]),
        ("Y0_standard_error", se),
        ("Y0_spread_across_inits", max(y0s) - min(y0s)),
        ("Y0_spread_bound", 2.0 * max(s.y0_bound for s in sols)),
        ("flags", " | ".join(sorted({f for s in sols for f in s.flags})) or "none"),
    ]
    _summary(out / "summary.txt", items)
    return EXIT_OK


def run_optimize(cfg: ScenarioConfig) -> int:
    problem = build_problem(cfg)
    grid, noise, out = _setup(cfg)
    u0 = ControlGrid.for_problem(problem, cfg.optimize.u0, grid.M)
    opts = OptimizeOptions(
        max_iters=cfg.solver.max_iters, tol=cfg.solver.tol_opt, eta0=cfg.solver.eta0,
        fresh_noise=cfg.solver.fresh_noise, degree=cfg.solver.degree,
    )
    rep = optimize(problem, u0, grid, noise, opts)
    steps = rep.step_sizes + [np.nan]
    write_rows(
        out / "report.csv",
        ["iteration", "J_cost", "J_standard_error", "projected_gradient_norm", "step_size"],
        [(i, J, se, g, s) for i, (J, se, g, s) in enumerate(zip(rep.costs, rep.cost_se, rep.grad_norms, steps))],
    )
    m = rep.control.dim
    write_rows(
        out / "paths.csv",
        ["t_seconds", *[f"u_control_{j}" for j in range(m)], "smp_violation"],
        [(grid.times[k], *rep.control.values[k], rep.residual_per_step[k]) for k in range(grid.M)],
    )
    items = _common(cfg) + [
        ("status", rep.status),
        ("iterations", rep.iterations),
        ("J_star", rep.final_cost),
        ("J_star_standard_error", rep.final_cost_se),
        ("J_last_iterate", rep.costs[-1]),
        ("smp_residual", rep.residual),
        ("u_min", float(rep.control.values.min())),
        ("u_max", float(rep.control.values.max())),
        ("clamped_drifts", rep.diagnostics["clamped_drifts"]),
    ]
    _summary(out / "summary.txt", items)
    return EXIT_SOLVER if rep.status == "aborted" else EXIT_OK


def run_mollify_report(cfg: ScenarioConfig) -> int:
    driver = build_problem(cfg)
    _, _, out = _setup(cfg)
    points = np.array([(y, m) for m in cfg.mollify.mean for y in cfg.mollify.y])
    rows = mollify_report(
        driver, cfg.mollify.ns, points, np.random.default_rng(cfg.seed), Q=cfg.mollify.Q, n_pairs=cfg.mollify.n_pairs
    )
    header = ["n", "y", "mean", "g", "g_n", "abs_err", "lipschitz_estimate"]
    write_rows(out / "report.csv", header, ([r[h] for h in header] for r in rows))
    items = [("mode", cfg.mode), ("problem", cfg.problem.key), ("seed", cfg.seed), ("Q", cfg.mollify.Q)]
    for n in cfg.mollify.ns:
        sel = [r for r in rows if r["n"] == n]
        items.append((f"sup_abs_err[n={n}]", max(r["abs_err"] for r in sel)))
        items.append((f"lipschitz_estimate[n={n}]", sel[0]["lipschitz_estimate"]))
    _summary(out / "summary.txt", items)
    return EXIT_OK


def run_check(cfg: ScenarioConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_checks(cfg.seed, cfg.check.only or None)
    write_rows(
        out / "report.csv",
        ["check", "passed", "value", "threshold", "detail"],
        [(r.name, r.passed, r.value, r.threshold, r.detail) for r in results],
    )
    failed = [r.name for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value:.3g} (threshold {r.threshold:.3g})")
    _summary(out / "summary.txt", [("mode", cfg.mode), ("seed", cfg.seed), ("checks", len(results)),
                                   ("failed", ",".join(failed) or "none")])
    return EXIT_CHECK_FAILED if failed else EXIT_OK


RUNNERS = {
    "simulate-sde": run_simulate_sde,
    "solve-bsde": run_solve_bsde,
    "optimize": run_optimize,
    "mollify-report": run_mollify_report,
    "check": run_check,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfsmp", description="Mean-field SDE, BSDE and control scenarios.")
    p.add_argument("--version", action="version", version=f"mfsmp {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*MODES, "run"):
        sp = sub.add_parser(name, help="mode from the config file" if name == "run" else f"{name} scenario")
        sp.add_argument("--config", type=Path, required=(name == "run"), help="TOML scenario file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, help="cap on worker threads")
        sp.add_argument("--out", type=str, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
        sp.add_argument("--print-config", action="store_true", help="print the canonical config and exit")
    return p


def resolve_config(args) -> ScenarioConfig:
    if args.config is not None:
        cfg = load(args.config)
        if args.command != "run" and cfg.mode != args.command:
            raise ConfigError(f"config mode {cfg.mode!r} does not match subcommand {args.command!r}")
    else:
        cfg = from_dict({"mode": args.command})
    return with_overrides(cfg, seed=args.seed, workers=args.workers, out=args.out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"mfsmp: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(dump(cfg))
        return EXIT_OK
    set_workers(cfg.workers)
    out = Path(cfg.out)
    try:
        status = RUNNERS[cfg.mode](cfg)
    except SOLVER_ERRORS as exc:
        out.mkdir(parents=True, exist_ok=True)
        diag = getattr(exc, "diagnostics", {}) or {}
        if isinstance(exc, SimulationError):
            diag = {"step": exc.step}
        lines = [f"error = {type(exc).__name__}: {exc}"] + [f"{k} = {v}" for k, v in sorted(diag.items())]
        (out / "diagnostics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"mfsmp: solver failure: {exc} (see {out / 'diagnostics.txt'})", file=sys.stderr)
        return EXIT_SOLVER
    (out / "config.toml").write_text(dump(cfg), encoding="utf-8")
    if status == EXIT_SOLVER:
        print(f"mfsmp: optimizer stopped early; see {out / 'summary.txt'}", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
