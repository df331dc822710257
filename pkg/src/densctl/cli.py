"""Command-line entry point.

Commands bind a JSON run configuration to the solver pipeline and
write plot-ready CSV plus JSON summaries into a per-run directory
named by the config hash. Exit codes: 0 success, 1 numerical or
constraint failure, 2 usage or configuration error.

Flag precedence is flag > environment > config file; the recognized
environment variables are DENSCTL_OUT, DENSCTL_SEED, DENSCTL_THREADS
and DENSCTL_QUIET.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, DensctlError
from .expressions import ExpressionError, parse_expression
from .fields import ScalarField, eval_scalar_field, interpolate_values
from .inverse import roundtrip_verify
from .model import validate_spec
from .operators import assemble_generator
from .output import RunWriter
from .pde import (
    eigen_evolution,
    evolve_perturbation,
    expand_in_eigenbasis,
    fit_decay_rate,
)
from .sampling import (
    Ensemble,
    SdeConfig,
    estimate_c_mc,
    histogram_density,
    path_integral_desirability,
    simulate_density_feedback,
    simulate_sde,
    tv_distance,
    uniform_ensemble,
)
from .spectral import (
    controlled_operator,
    eig_generator,
    solve_hjb_principal,
    spectral_gap,
    verify_hjb_residual,
)

_TRUTHY = {"1", "true", "yes", "on"}


def _env_int(name: str) -> int | None:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"environment variable {name}={raw!r} is not an "
                          "integer") from e


class _Run:
    """Resolved options for one command invocation."""

    def __init__(self, args, cfg: RunConfig):
        self.cfg = cfg
        self.spec = cfg.spec
        self.quiet = bool(getattr(args, "quiet", False)) or \
            os.environ.get("DENSCTL_QUIET", "").lower() in _TRUTHY

        out = getattr(args, "out", None) or os.environ.get("DENSCTL_OUT") \
            or cfg.output_dir or "runs"
        self.out_base = out

        seed = getattr(args, "seed", None)
        if seed is None:
            seed = _env_int("DENSCTL_SEED")
        self.seed = int(seed) if seed is not None else cfg.sampling.seed

        threads = getattr(args, "threads", None)
        if threads is None:
            threads = _env_int("DENSCTL_THREADS")
        self.threads = int(threads) if threads is not None \
            else cfg.sampling.threads
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

        k = getattr(args, "k", None)
        self.k = int(k) if k is not None else cfg.solver.k

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def writer(self, command: str) -> RunWriter:
        return RunWriter(self.out_base, command, self.cfg.digest,
                         seed=self.seed, threads=self.threads)

    def sde_config(self, **overrides) -> SdeConfig:
        s = self.cfg.sampling
        kw = dict(dt=s.dt, T=s.T, n_paths=s.n_paths, seed=self.seed,
                  mode=s.mode, threads=self.threads,
                  chunk_paths=s.chunk_paths)
        kw.update(overrides)
        return SdeConfig(**kw)

    def default_k(self) -> int:
        if self.k is not None:
            return self.k
        n = self.spec.grid.size
        return min(32, max(2, n // 4))

    def x0(self) -> tuple[float, ...]:
        if self.cfg.sampling.x0 is not None:
            if len(self.cfg.sampling.x0) != self.spec.grid.dim:
                raise ConfigError("[sampling] x0 dimension does not match grid")
            return self.cfg.sampling.x0
        g = self.spec.grid
        return tuple(0.5 * (lo + hi) for lo, hi in zip(g.lows, g.highs))


def _require_forward(run: _Run) -> None:
    if run.spec.mode != "forward":
        raise ConfigError("this command needs a forward-mode config with a "
                          "[cost] section; this one has a [target]")


def _require_inverse(run: _Run) -> None:
    if run.spec.mode != "inverse":
        raise ConfigError("this command needs an inverse-mode config with a "
                          "[target] section; this one has a [cost]")


def _solve_forward(run: _Run):
    spec = run.spec
    return solve_hjb_principal(spec.diffusion_field(), spec.phi_field(),
                               spec.q_field(), spec.lam)


def _gate_validation(run: _Run) -> None:
    report = validate_spec(run.spec)
    if not report.passed:
        raise DensctlError(
            "constraint checks failed:\n" + "\n".join(report.lines()))


# ---------------------------------------------------------------------------
# commands

def cmd_check(run: _Run) -> int:
    report = validate_spec(run.spec)
    w = run.writer("check")
    w.json("check.json", report.as_dict())
    w.close()
    for line in report.lines():
        run.say(line)
    run.say(f"artifacts in {w.dir}")
    return 0 if report.passed else 1


def cmd_solve(run: _Run) -> int:
    _require_forward(run)
    _gate_validation(run)
    spec = run.spec
    sol = _solve_forward(run)
    residual = verify_hjb_residual(sol, spec.q_field(),
                                   spec.diffusion_field(), spec.phi_field())
    k = run.default_k()
    ctrl = eig_generator(controlled_operator(sol), min(k, spec.grid.size))
    gap = spectral_gap(ctrl) if ctrl.k >= 2 else None

    g = spec.grid
    coords = g.node_coords()
    header = [f"x{i + 1}" for i in range(g.dim)] + ["Psi", "v", "p"] + \
        [f"u{i + 1}" for i in range(g.dim)]
    cols = [coords[:, i] for i in range(g.dim)] + \
        [sol.Psi.values, sol.v.values, sol.p.values] + \
        [sol.u.values[:, i] for i in range(g.dim)]
    w = run.writer("solve")
    w.csv("solution.csv", header, cols)
    w.json("summary.json", {
        "c": sol.c,
        "controlled_gap": gap,
        "hjb_residual_sup": residual,
        "eigenvalues_controlled": ctrl.eigenvalues.tolist(),
        "diagnostics": sol.diagnostics,
    })
    w.close()
    run.say(f"c = {sol.c:.8g}   gap = "
            f"{gap if gap is None else format(gap, '.6g')}   "
            f"residual sup = {residual:.3e}")
    run.say(f"artifacts in {w.dir}")
    return 0


def cmd_spectrum(run: _Run, controlled: bool) -> int:
    spec = run.spec
    g = spec.grid
    k = run.k if run.k is not None else min(32, max(2, g.size // 4))
    if k < 1 or k > g.size:
        raise ConfigError(f"k = {k} outside the valid range 1..{g.size}")
    if controlled:
        _require_forward(run)
        _gate_validation(run)
        op = controlled_operator(_solve_forward(run))
    else:
        op = assemble_generator(spec.diffusion_field(), spec.phi_field())
    s = eig_generator(op, k)

    gap = None
    if k >= 2 and s.eigenvalues[1] < 0.0:
        gap = -float(s.eigenvalues[1])

    coords = g.node_coords()
    w = run.writer("spectrum")
    w.csv("eigenvalues.csv", ["index", "eigenvalue", "residual"],
          [np.arange(k, dtype=float), s.eigenvalues, s.residuals])
    w.csv("modes.csv",
          [f"x{i + 1}" for i in range(g.dim)] + [f"mode{j}" for j in range(k)],
          [coords[:, i] for i in range(g.dim)] + [s.functions[j] for j in range(k)])
    w.json("summary.json", {
        "operator": "controlled" if controlled else "uncontrolled",
        "k": k,
        "eigenvalues": s.eigenvalues.tolist(),
        "spectral_gap": gap,
        "max_residual": float(s.residuals.max()),
    })
    w.close()
    run.say("eigenvalues: " +
            ", ".join(f"{v:.6g}" for v in s.eigenvalues[:min(k, 8)]) +
            (" ..." if k > 8 else ""))
    run.say(f"artifacts in {w.dir}")
    return 0


def cmd_evolve(run: _Run, perturb: str | None, mode_index: int | None,
               dt: float | None, T: float | None) -> int:
    spec = run.spec
    g = spec.grid
    _gate_validation(run)
    if spec.mode == "forward":
        sol = _solve_forward(run)
        Phi = ScalarField(g, sol.phi.values + sol.v.values)
    else:
        t = spec.target_field()
        if t.values.min() <= 0.0:
            raise DensctlError("target density must be positive to evolve")
        mass = float(g.quadrature_weights() @ t.values)
        Phi = ScalarField(g, -np.log(t.values / mass))
    op = assemble_generator(spec.diffusion_field(), Phi)

    k = run.default_k()
    if mode_index is not None:
        k = max(k, mode_index + 1)
    s = eig_generator(op, min(max(k, 2), g.size))
    rate = spectral_gap(s)

    if perturb is not None:
        try:
            expr = parse_expression(perturb)
        except ExpressionError as e:
            raise ConfigError(f"--perturb does not parse: {e}") from e
        pt0 = eval_scalar_field(expr, g)
    else:
        idx = 1 if mode_index is None else mode_index
        if idx >= s.k:
            raise ConfigError(f"--mode {idx} needs k > {idx}")
        pt0 = s.eigenfunction(idx)

    dt = dt if dt is not None else (run.cfg.solver.dt or 0.1 / rate)
    T = T if T is not None else (run.cfg.solver.T or 5.0 / rate)
    traj = evolve_perturbation(op, pt0, dt, T)

    pc = expand_in_eigenbasis(ScalarField(g, traj.densities[0]), s)
    wq = g.quadrature_weights() * op.rho.values
    norm0 = float(np.sqrt(np.sum(wq * traj.densities[0] ** 2)))
    comparison = 0.0
    for t_i, dens in zip(traj.density_times, traj.densities):
        diff = dens - eigen_evolution(pc, float(t_i)).values
        err = float(np.sqrt(np.sum(wq * diff * diff)))
        comparison = max(comparison, err / max(norm0, 1e-300))

    fitted = fit_decay_rate(traj.times, traj.norm_rho, 0.5 / rate, 3.0 / rate)

    w = run.writer("evolve")
    w.csv("trajectory.csv", ["t", "mass", "rho_norm"],
          [traj.times, traj.mass, traj.norm_rho])
    w.csv("densities.csv",
          ["t"] + [f"p{i}" for i in range(g.size)],
          [traj.density_times] +
          [traj.densities[:, i] for i in range(g.size)])
    w.json("summary.json", {
        "fitted_rate": fitted,
        "xi1": -rate,
        "rate_relative_error": abs(fitted + rate) / rate,
        "eigen_comparison_error": comparison,
        "reconstruction_error": pc.reconstruction_error,
        "dt": dt,
        "T": T,
        "projected": traj.projected,
    })
    w.close()
    run.say(f"fitted rate {fitted:.6g} vs xi1 {-rate:.6g} "
            f"(rel err {abs(fitted + rate) / rate:.2e}); "
            f"eigen comparison {comparison:.2e}")
    run.say(f"artifacts in {w.dir}")
    return 0


def _steady_inputs(run: _Run):
    """Control and target fields for the controlled drift modes."""
    if run.spec.mode == "forward":
        sol = _solve_forward(run)
        return sol.u, sol.p
    from .inverse import solve_inverse
    inv = solve_inverse(run.spec)
    return inv.u, inv.target


def cmd_sample_paths(run: _Run) -> int:
    spec = run.spec
    cfg = run.sde_config()
    control = target = None
    if cfg.mode in ("steady", "feedback"):
        _gate_validation(run)
        control, target = _steady_inputs(run)
    batch = simulate_sde(spec, cfg, run.x0(), control=control, target=target,
                         cost_expr=spec.q if spec.mode == "forward" else None)
    g = spec.grid
    w = run.writer("sample-paths")
    w.csv("terminal.csv",
          [f"x{i + 1}" for i in range(g.dim)] + ["cost", "exited", "excluded"],
          [batch.terminal[:, i] for i in range(g.dim)] +
          [batch.cost_integral, batch.exited.astype(float),
           batch.excluded.astype(float)])
    w.json("summary.json", {
        "seed": cfg.seed,
        "mode": cfg.mode,
        "n_paths": batch.n_paths,
        "n_excluded": batch.n_excluded,
        "n_exited": int(batch.exited.sum()),
        "horizon": batch.horizon,
        "dt": cfg.dt,
    })
    w.close()
    run.say(f"{batch.n_paths} paths, {int(batch.exited.sum())} reflected, "
            f"{batch.n_excluded} excluded")
    run.say(f"artifacts in {w.dir}")
    return 0


def _default_queries(run: _Run) -> tuple[tuple[float, ...], ...]:
    g = run.spec.grid
    center = run.x0()
    lo, hi = g.lows[0], g.highs[0]
    span = hi - lo
    xs = np.linspace(lo + 0.25 * span, hi - 0.25 * span, 5)
    return tuple(tuple([x] + list(center[1:])) for x in xs)


def cmd_sample_desirability(run: _Run) -> int:
    _require_forward(run)
    _gate_validation(run)
    spec = run.spec
    sol = _solve_forward(run)
    cfg = run.sde_config(mode="uncontrolled")
    queries = run.cfg.sampling.queries or _default_queries(run)
    pts = np.array([q for q in queries], dtype=float)
    if pts.shape[1] != spec.grid.dim:
        raise ConfigError("[sampling] queries dimension does not match grid")

    est = []
    for qi, y in enumerate(queries):
        est.append(path_integral_desirability(
            spec, spec.q, sol.c, spec.lam, tuple(y), cfg,
            stream_base=qi * cfg.n_paths))
    psi_grid = interpolate_values(spec.grid, sol.Psi.values, pts)

    g = spec.grid
    w = run.writer("sample-desirability")
    w.csv("desirability.csv",
          [f"x{i + 1}" for i in range(g.dim)] +
          ["psi_hat", "stderr", "n_used", "n_excluded", "psi_grid"],
          [pts[:, i] for i in range(g.dim)] +
          [np.array([e.value for e in est]),
           np.array([e.stderr for e in est]),
           np.array([float(e.n_used) for e in est]),
           np.array([float(e.n_excluded) for e in est]),
           psi_grid])
    w.json("summary.json", {
        "c": sol.c,
        "seed": cfg.seed,
        "n_paths": cfg.n_paths,
        "T": cfg.T,
        "dt": cfg.dt,
        "degenerate": [e.degenerate for e in est],
    })
    w.close()
    for y, e in zip(queries, est):
        label = ", ".join(f"{float(v):g}" for v in y)
        run.say(f"psi_hat({label}) = {e.value:.6g} +- {e.stderr:.2g}")
    run.say(f"artifacts in {w.dir}")
    return 0


def cmd_sample_cost(run: _Run) -> int:
    _require_forward(run)
    _gate_validation(run)
    spec = run.spec
    cfg = run.sde_config(mode="uncontrolled")
    x0 = np.tile(np.asarray(run.x0(), dtype=float), (cfg.n_paths, 1))
    y0 = Ensemble(positions=x0, seed=cfg.seed)
    est = estimate_c_mc(spec, spec.q, spec.lam, cfg, y0)
    sol = _solve_forward(run)

    w = run.writer("sample-cost")
    w.csv("cost.csv", ["c_hat", "stderr", "c_grid", "abs_error"],
          [np.array([est.value]), np.array([est.stderr]),
           np.array([sol.c]), np.array([abs(est.value - sol.c)])])
    w.json("summary.json", {
        "c_hat": est.value,
        "stderr": est.stderr,
        "c_grid": sol.c,
        "n_used": est.n_used,
        "n_excluded": est.n_excluded,
        "seed": cfg.seed,
        "T": cfg.T,
        "dt": cfg.dt,
        "degenerate": est.degenerate,
    })
    w.close()
    run.say(f"c_hat = {est.value:.6g} +- {est.stderr:.2g} "
            f"(grid c = {sol.c:.6g})")
    run.say(f"artifacts in {w.dir}")
    return 0


def cmd_sample_feedback(run: _Run) -> int:
    spec = run.spec
    _gate_validation(run)
    g = spec.grid
    if spec.mode == "inverse":
        t = spec.target_field()
        mass = float(g.quadrature_weights() @ t.values)
        target = ScalarField(g, t.values / mass)
    else:
        target = _solve_forward(run).p

    n_particles = run.cfg.sampling.n_particles or run.cfg.sampling.n_paths
    cfg = run.sde_config(mode="feedback", n_paths=n_particles)
    ens0 = uniform_ensemble(g, n_particles, cfg.seed)
    snaps = simulate_density_feedback(spec, target, cfg, ens0)
    final = snaps[-1]
    emp = histogram_density(final, g)
    tv = tv_distance(emp, target)

    w = run.writer("sample-feedback")
    w.csv("ensemble.csv", [f"x{i + 1}" for i in range(g.dim)],
          [final.positions[:, i] for i in range(g.dim)])
    coords = g.node_coords()
    w.csv("density.csv",
          [f"x{i + 1}" for i in range(g.dim)] + ["p_target", "p_empirical"],
          [coords[:, i] for i in range(g.dim)] + [target.values, emp.values])
    w.json("summary.json", {
        "tv_distance": tv,
        "n_particles": n_particles,
        "seed": cfg.seed,
        "T": cfg.T,
        "dt": cfg.dt,
    })
    w.close()
    run.say(f"total variation to target after T = {cfg.T:g}: {tv:.4f}")
    run.say(f"artifacts in {w.dir}")
    return 0


def cmd_inverse(run: _Run) -> int:
    _require_inverse(run)
    _gate_validation(run)
    spec = run.spec
    g = spec.grid
    rt = roundtrip_verify(spec.target_field(), spec)
    inv = rt.inverse

    coords = g.node_coords()
    w = run.writer("inverse")
    w.csv("inverse.csv",
          [f"x{i + 1}" for i in range(g.dim)] +
          ["p_target", "Psi", "q"] +
          [f"u{i + 1}" for i in range(g.dim)] + ["p_recovered"],
          [coords[:, i] for i in range(g.dim)] +
          [inv.target.values, inv.Psi.values, inv.q.values] +
          [inv.u.values[:, i] for i in range(g.dim)] +
          [rt.forward.p.values])
    w.json("roundtrip.json", {
        "density_sup_relative_error": rt.density_error,
        "c_inverse": rt.c_inverse,
        "c_forward": rt.c_forward,
        "c_difference": rt.c_difference,
        "control_sup_error": rt.control_error,
        "controlled_gap": rt.controlled_gap,
        "q_max": float(inv.q.values.max()),
    })
    w.close()
    for line in rt.lines():
        run.say(line)
    run.say(f"artifacts in {w.dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="path to the JSON run configuration")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="base output directory (default: runs)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the sampling seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for sampling")
    common.add_argument("--k", type=int, default=argparse.SUPPRESS,
                        help="number of eigenmodes")
    common.add_argument("--quiet", action="store_true",
                        default=argparse.SUPPRESS,
                        help="suppress progress output")

    p = argparse.ArgumentParser(
        prog="densctl",
        description="stationary density control: solve, verify, sample",
        parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("check", parents=[common],
                   help="run the structural constraint checks")
    sub.add_parser("solve", parents=[common],
                   help="solve the stationary HJB problem")

    ps = sub.add_parser("spectrum", parents=[common],
                        help="eigendecomposition of the generator")
    ps.add_argument("--controlled", action="store_true",
                    help="use the optimally controlled generator")

    pe = sub.add_parser("evolve", parents=[common],
                        help="evolve a density perturbation")
    group = pe.add_mutually_exclusive_group()
    group.add_argument("--perturb", help="perturbation expression")
    group.add_argument("--mode", type=int, dest="mode_index",
                       help="start from eigenmode N (default 1)")
    pe.add_argument("--dt", type=float, help="time step")
    pe.add_argument("--T", type=float, help="horizon")

    pp = sub.add_parser("sample", parents=[common],
                        help="Monte Carlo simulation and estimators")
    pp.add_argument("kind",
                    choices=["paths", "desirability", "cost", "feedback"])

    sub.add_parser("inverse", parents=[common],
                   help="design cost and control from a target density")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    try:
        config_path = getattr(args, "config", None)
        if config_path is None:
            raise ConfigError("--config is required")
        cfg = load_config(config_path)
        run = _Run(args, cfg)

        cmd = args.command
        if cmd == "check":
            return cmd_check(run)
        if cmd == "solve":
            return cmd_solve(run)
        if cmd == "spectrum":
            return cmd_spectrum(run, bool(args.controlled))
        if cmd == "evolve":
            return cmd_evolve(run, args.perturb, args.mode_index,
                              args.dt, args.T)
        if cmd == "sample":
            if args.kind == "paths":
                return cmd_sample_paths(run)
            if args.kind == "desirability":
                return cmd_sample_desirability(run)
            if args.kind == "cost":
                return cmd_sample_cost(run)
            return cmd_sample_feedback(run)
        return cmd_inverse(run)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DensctlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
