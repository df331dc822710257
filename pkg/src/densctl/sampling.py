"""SDE simulation and Monte Carlo estimators.

Every path owns a counter-based random stream keyed by (seed, path
index), so results are bit-identical for any thread count and any
chunking of the path range. Two stream ids at the top of the 64-bit
range are reserved: 2^64 - 1 drives bootstrap resampling and 2^64 - 2
draws initial ensembles, which is why user seeds must stay below
2^64 - 2. Reductions always run in path-index order.

Integration is Euler-Maruyama with reflection at the box boundary
(matching the zero-flux PDE boundary); reflected paths are flagged so
truncation bias is visible. Running costs use the left-endpoint rule,
consistent with the weak order of the integrator.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SamplingError
from .expressions import Expr, evaluate, free_variables, parse_expression
from .fields import ScalarField, VectorField, gradient_values, interpolate_values
from .grid import Grid
from .model import ProblemSpec
from .spectral import HJBSolution

BOOTSTRAP_STREAM = 2**64 - 1
INIT_STREAM = 2**64 - 2
BOOTSTRAP_SAMPLES = 200
FD_STEP = 1e-5

_MODE_ALIASES = {
    "uncontrolled": "uncontrolled",
    "steady": "steady",
    "steady-control": "steady",
    "feedback": "feedback",
    "density-feedback": "feedback",
}
DRIFT_MODES = tuple(_MODE_ALIASES)


@dataclass(frozen=True)
class SdeConfig:
    dt: float
    T: float
    n_paths: int
    seed: int
    mode: str = "uncontrolled"
    threads: int = 1
    chunk_paths: int = 1024
    record: bool = False
    record_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0.0:
            raise SamplingError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise SamplingError(f"T = {self.T} is below one step dt = {self.dt}")
        if self.n_paths < 1:
            raise SamplingError("need at least one path")
        if not 0 <= int(self.seed) < INIT_STREAM:
            raise SamplingError(
                f"seed must lie in [0, 2^64 - 3], got {self.seed}")
        if self.threads < 1 or self.chunk_paths < 1 or self.record_stride < 1:
            raise SamplingError("threads, chunk_paths, record_stride must be >= 1")
        mode = _MODE_ALIASES.get(self.mode)
        if mode is None:
            raise SamplingError(f"unknown drift mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def horizon(self) -> float:
        """Actual integrated time n_steps * dt."""
        return self.n_steps * self.dt


@dataclass(frozen=True)
class Ensemble:
    positions: np.ndarray = field(repr=False)   # (count, dim)
    time: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if not np.isfinite(pos).all():
            raise SamplingError("ensemble positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])


@dataclass(frozen=True)
class TrajectoryBatch:
    terminal: np.ndarray = field(repr=False)        # (P, n)
    cost_integral: np.ndarray = field(repr=False)   # (P,)
    exited: np.ndarray = field(repr=False)          # (P,) reflected at least once
    excluded: np.ndarray = field(repr=False)        # (P,) blew up, do not use
    seed: int = 0
    horizon: float = 0.0
    times: np.ndarray | None = field(repr=False, default=None)
    states: np.ndarray | None = field(repr=False, default=None)  # (P, K, n)

    @property
    def n_paths(self) -> int:
        return int(self.terminal.shape[0])

    @property
    def n_excluded(self) -> int:
        return int(self.excluded.sum())


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_used: int
    n_excluded: int = 0
    n_exited: int = 0
    degenerate: bool = False


# ---------------------------------------------------------------------------
# drift and noise evaluation along paths

def _fd_steps(x: np.ndarray) -> np.ndarray:
    return FD_STEP * np.maximum(1.0, np.abs(x))


def _grad_expr(expr: Expr, x: np.ndarray) -> np.ndarray:
    """Central-difference gradient of a scalar expression at points."""
    P, n = x.shape
    out = np.empty((P, n))
    for k in range(n):
        e = _fd_steps(x[:, k])
        xp = x.copy()
        xp[:, k] += e
        xm = x.copy()
        xm[:, k] -= e
        out[:, k] = (evaluate(expr, xp) - evaluate(expr, xm)) / (2.0 * e)
    return out


class _Dynamics:
    """Per-step drift/noise evaluator for one simulation setup."""

    def __init__(self, spec: ProblemSpec, mode: str,
                 control_values: np.ndarray | None = None,
                 feedback_grad_logp: np.ndarray | None = None):
        self.spec = spec
        self.grid = spec.grid
        self.mode = mode
        self.n = spec.grid.dim
        self.const_diffusion = spec.diffusion_is_constant()
        if self.const_diffusion:
            origin = np.zeros((1, self.n))
            self.Sigma0 = spec.diffusion_at(origin)[0]
            self.noise0 = spec.noise_at(origin)[0]
        self.m = (len(spec.sigma[0]) if spec.sigma is not None else self.n)
        self.control_values = control_values        # (N, n) grid table
        self.feedback_grad_logp = feedback_grad_logp  # (N, n) grid table
        if mode == "steady" and control_values is None:
            raise SamplingError("steady-control mode needs a control field")
        if mode == "feedback" and feedback_grad_logp is None:
            raise SamplingError("density-feedback mode needs a target density")

    def _sigma_at(self, x: np.ndarray) -> np.ndarray:
        if self.const_diffusion:
            return np.broadcast_to(self.Sigma0, (x.shape[0], self.n, self.n))
        return self.spec.diffusion_at(x)

    def _div_sigma(self, x: np.ndarray) -> np.ndarray:
        if self.const_diffusion:
            return np.zeros_like(x)
        out = np.zeros_like(x)
        for k in range(self.n):
            e = _fd_steps(x[:, k])
            xp = x.copy()
            xp[:, k] += e
            xm = x.copy()
            xm[:, k] -= e
            dS = (self.spec.diffusion_at(xp) - self.spec.diffusion_at(xm))
            out += dS[:, :, k] / (2.0 * e)[:, None]
        return out

    def drift(self, x: np.ndarray) -> np.ndarray:
        half_div = 0.5 * self._div_sigma(x)
        sig = self._sigma_at(x)
        if self.mode == "feedback":
            glp = interpolate_values(self.grid, self.feedback_grad_logp, x)
            return half_div + 0.5 * np.einsum("pij,pj->pi", sig, glp)
        gphi = _grad_expr(self.spec.phi, x)
        b = half_div - 0.5 * np.einsum("pij,pj->pi", sig, gphi)
        if self.mode == "steady":
            b = b + interpolate_values(self.grid, self.control_values, x)
        return b

    def noise(self, x: np.ndarray) -> np.ndarray:
        if self.const_diffusion:
            return np.broadcast_to(self.noise0, (x.shape[0], self.n, self.m))
        return self.spec.noise_at(x)


# ---------------------------------------------------------------------------
# path engine

def _run_chunk(dyn: _Dynamics, cfg: SdeConfig, stream_base: int, lo: int,
               x0: np.ndarray, cost_expr: Expr | None, cost_shift: float,
               lam: float, record_steps: list[int],
               out_terminal, out_cost, out_exited, out_excluded, out_states):
    P = x0.shape[0]
    n_steps = cfg.n_steps
    noise = np.empty((P, n_steps, dyn.m))
    for j in range(P):
        key = np.array([cfg.seed, stream_base + lo + j], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        noise[j] = gen.standard_normal((n_steps, dyn.m))

    lows = np.asarray(dyn.grid.lows)
    spans = np.asarray(dyn.grid.highs) - lows
    sqdt = np.sqrt(cfg.dt)
    x = x0.copy()
    cost = np.zeros(P)
    exited = np.zeros(P, dtype=bool)
    excluded = np.zeros(P, dtype=bool)

    rec_iter = iter(record_steps)
    rec_next = next(rec_iter, -1)
    rec_slot = 0
    if rec_next == 0:
        out_states[lo:lo + P, 0] = x
        rec_slot = 1
        rec_next = next(rec_iter, -1)

    for k in range(n_steps):
        if cost_expr is not None:
            cost += (cfg.dt / lam) * (evaluate(cost_expr, x) - cost_shift)
        step = dyn.drift(x) * cfg.dt + np.einsum(
            "pij,pj->pi", dyn.noise(x), noise[:, k, :]) * sqdt
        x_new = x + step
        bad = ~np.isfinite(x_new).all(axis=1)
        if bad.any():
            excluded |= bad
            x_new[bad] = x[bad]
        outside = (x_new < lows) | (x_new > lows + spans)
        if outside.any():
            exited |= outside.any(axis=1)
            # reflective fold with period 2 * span
            y = np.mod(x_new - lows, 2.0 * spans)
            x_new = lows + (spans - np.abs(y - spans))
        x = x_new
        if k + 1 == rec_next:
            out_states[lo:lo + P, rec_slot] = x
            rec_slot += 1
            rec_next = next(rec_iter, -1)

    if cost_expr is not None:
        excluded |= ~np.isfinite(cost)

    out_terminal[lo:lo + P] = x
    out_cost[lo:lo + P] = cost
    out_exited[lo:lo + P] = exited
    out_excluded[lo:lo + P] = excluded


def _resolve_x0(x0, n_paths: int, dim: int) -> np.ndarray:
    if isinstance(x0, Ensemble):
        return x0.positions.copy()
    pt = np.asarray(x0, dtype=float).reshape(-1)
    if pt.shape[0] != dim:
        raise SamplingError(f"start point has dimension {pt.shape[0]}, grid {dim}")
    return np.tile(pt, (n_paths, 1))


def simulate_sde(spec: ProblemSpec, cfg: SdeConfig, x0,
                 hjb: HJBSolution | None = None,
                 control: VectorField | None = None,
                 target: ScalarField | None = None,
                 cost_expr: Expr | str | None = None,
                 cost_shift: float = 0.0,
                 stream_base: int = 0) -> TrajectoryBatch:
    """Integrate an Euler-Maruyama path batch.

    x0 is a single start point or an Ensemble (whose count then
    overrides cfg.n_paths). Steady-control mode takes the control from
    `control` or `hjb`; density-feedback mode takes the target density
    from `target` or `hjb`. The running cost integral of
    (q - shift)/lam is accumulated when cost_expr is given.
    """
    grid = spec.grid
    control_values = None
    grad_logp = None
    if cfg.mode == "steady":
        if control is None and hjb is not None:
            control = hjb.u
        if control is None:
            raise SamplingError("steady-control mode needs `control` or `hjb`")
        control_values = control.values
    elif cfg.mode == "feedback":
        if target is None and hjb is not None:
            target = hjb.p
        if target is None:
            raise SamplingError("density-feedback mode needs `target` or `hjb`")
        if target.values.min() <= 0.0:
            raise SamplingError("feedback target density must be positive")
        grad_logp = gradient_values(grid, np.log(target.values))

    if isinstance(cost_expr, str):
        cost_expr = parse_expression(cost_expr)
    if cost_expr is not None:
        fv = free_variables(cost_expr)
        if fv and max(fv) > grid.dim:
            raise SamplingError("cost expression uses variables beyond the grid")

    dyn = _Dynamics(spec, cfg.mode, control_values, grad_logp)
    x0_arr = _resolve_x0(x0, cfg.n_paths, grid.dim)
    P = x0_arr.shape[0]
    n_steps = cfg.n_steps

    record_steps: list[int] = []
    times = None
    states = None
    if cfg.record:
        record_steps = list(range(0, n_steps + 1, cfg.record_stride))
        if record_steps[-1] != n_steps:
            record_steps.append(n_steps)
        times = cfg.dt * np.asarray(record_steps, dtype=float)
        states = np.empty((P, len(record_steps), grid.dim))

    terminal = np.empty((P, grid.dim))
    cost = np.empty(P)
    exited = np.empty(P, dtype=bool)
    excluded = np.empty(P, dtype=bool)

    chunks = [(a, min(a + cfg.chunk_paths, P))
              for a in range(0, P, cfg.chunk_paths)]

    def work(bounds):
        a, b = bounds
        _run_chunk(dyn, cfg, stream_base, a, x0_arr[a:b], cost_expr,
                   cost_shift, spec.lam, record_steps,
                   terminal, cost, exited, excluded, states)

    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            list(ex.map(work, chunks))
    else:
        for bounds in chunks:
            work(bounds)

    if excluded.all():
        raise SamplingError("every path blew up; check the drift and dt")
    return TrajectoryBatch(
        terminal=terminal, cost_integral=cost, exited=exited,
        excluded=excluded, seed=cfg.seed, horizon=cfg.horizon,
        times=times, states=states)


# ---------------------------------------------------------------------------
# estimators

def _uncontrolled(cfg: SdeConfig) -> SdeConfig:
    return cfg if cfg.mode == "uncontrolled" else replace(cfg, mode="uncontrolled")


def path_integral_desirability(spec: ProblemSpec, q, c: float, lam: float,
                               y, cfg: SdeConfig,
                               stream_base: int = 0) -> Estimate:
    """Monte Carlo desirability at one point.

    Averages exp(-integral (q - c)/lam) over uncontrolled paths started
    at y with terminal weight one; the estimate carries the usual scale
    gauge of the desirability, so compare ratios, not values.
    """
    batch = simulate_sde(spec, _uncontrolled(cfg), y, cost_expr=q,
                         cost_shift=c, stream_base=stream_base)
    keep = ~batch.excluded
    weights = np.exp(-batch.cost_integral[keep])
    n = int(weights.shape[0])
    value = float(weights.mean())
    stderr = float(weights.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    degenerate = stderr > 0.5 * abs(value)
    if degenerate:
        warnings.warn("desirability estimator is degenerate "
                      f"(stderr/mean = {stderr / max(abs(value), 1e-300):.2f})",
                      stacklevel=2)
    return Estimate(value=value, stderr=stderr, n_used=n,
                    n_excluded=batch.n_excluded,
                    n_exited=int(batch.exited.sum()), degenerate=degenerate)


def estimate_c_mc(spec: ProblemSpec, q, lam: float, cfg: SdeConfig,
                  y0) -> Estimate:
    """Monte Carlo average-cost estimate.

    c_hat = -(lam/T) log E exp(-integral q/lam); for T much longer than
    the uncontrolled mixing time the principal mode dominates the
    expectation and the log-rate converges to the optimal average cost.
    The standard error is a bootstrap over paths with a reserved
    resampling stream.
    """
    batch = simulate_sde(spec, _uncontrolled(cfg), y0, cost_expr=q,
                         cost_shift=0.0)
    keep = ~batch.excluded
    weights = np.exp(-batch.cost_integral[keep])
    n = int(weights.shape[0])
    mean = float(weights.mean())
    if mean <= 0.0:
        raise SamplingError("all path weights underflowed; shorten T or "
                            "rescale q")
    T = batch.horizon
    value = float(-(lam / T) * np.log(mean))

    gen = np.random.Generator(np.random.Philox(
        key=np.array([cfg.seed, BOOTSTRAP_STREAM], dtype=np.uint64)))
    idx = gen.integers(0, n, size=(BOOTSTRAP_SAMPLES, n))
    boot_means = weights[idx].mean(axis=1)
    boot_means = np.maximum(boot_means, 1e-300)
    boot = -(lam / T) * np.log(boot_means)
    stderr = float(boot.std(ddof=1))

    degenerate = stderr > 0.5 * max(abs(value), 1e-12)
    if degenerate:
        warnings.warn(f"cost estimator is degenerate (stderr {stderr:.3g} "
                      f"against c_hat {value:.3g})", stacklevel=2)
    return Estimate(value=value, stderr=stderr, n_used=n,
                    n_excluded=batch.n_excluded,
                    n_exited=int(batch.exited.sum()), degenerate=degenerate)


def uniform_ensemble(grid: Grid, count: int, seed: int) -> Ensemble:
    """Uniform draw over the box from the reserved init stream."""
    if count < 1:
        raise SamplingError("ensemble needs at least one particle")
    gen = np.random.Generator(np.random.Philox(
        key=np.array([seed, INIT_STREAM], dtype=np.uint64)))
    u = gen.random((count, grid.dim))
    lows = np.asarray(grid.lows)
    highs = np.asarray(grid.highs)
    return Ensemble(positions=lows + u * (highs - lows), time=0.0, seed=seed)


def simulate_density_feedback(spec: ProblemSpec, p_target: ScalarField,
                              cfg: SdeConfig, ens0: Ensemble | None = None,
                              snapshot_times: list[float] | None = None
                              ) -> list[Ensemble]:
    """Drive an ensemble with the density-feedback drift toward a target.

    The drift div(Sigma)/2 + (Sigma/2) grad(log p_target) needs only the
    target density; grad(log p) is tabulated on the grid once and
    interpolated along paths. Returns ensemble snapshots, initial state
    first, terminal state last.
    """
    if ens0 is None:
        ens0 = uniform_ensemble(spec.grid, cfg.n_paths, cfg.seed)
    cfg = replace(cfg, mode="feedback")

    n_steps = cfg.n_steps
    if snapshot_times:
        steps = sorted({min(max(int(round(t / cfg.dt)), 0), n_steps)
                        for t in snapshot_times} | {0, n_steps})
    else:
        steps = [0, n_steps]

    # reuse the batch engine but record only the requested stamps
    grid = spec.grid
    if p_target.values.min() <= 0.0:
        raise SamplingError("feedback target density must be positive")
    grad_logp = gradient_values(
        grid, np.log(np.maximum(p_target.values, 1e-300)))
    dyn = _Dynamics(spec, "feedback", None, grad_logp)

    P = ens0.count
    terminal = np.empty((P, grid.dim))
    cost = np.empty(P)
    exited = np.empty(P, dtype=bool)
    excluded = np.empty(P, dtype=bool)
    states = np.empty((P, len(steps), grid.dim))

    chunks = [(a, min(a + cfg.chunk_paths, P))
              for a in range(0, P, cfg.chunk_paths)]

    def work(bounds):
        a, b = bounds
        _run_chunk(dyn, cfg, 0, a, ens0.positions[a:b], None, 0.0,
                   spec.lam, steps, terminal, cost, exited, excluded, states)

    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            list(ex.map(work, chunks))
    else:
        for bounds in chunks:
            work(bounds)

    return [Ensemble(positions=states[:, i, :], time=step * cfg.dt,
                     seed=cfg.seed)
            for i, step in enumerate(steps)]


def histogram_density(ens: Ensemble, grid: Grid) -> ScalarField:
    """Empirical density on the node-centered cells of the grid.

    Cell edges are the midpoints between nodes (half cells at the
    boundary), so the result integrates against the trapezoid weights.
    Particles outside the box are dropped and reported; mass then sums
    to the retained fraction.
    """
    if ens.count == 0:
        raise SamplingError("cannot histogram an empty ensemble")
    edges = []
    for k in range(grid.dim):
        x = grid.axis(k)
        e = np.empty(x.shape[0] + 1)
        e[0] = x[0]
        e[-1] = x[-1]
        e[1:-1] = 0.5 * (x[:-1] + x[1:])
        edges.append(e)
    counts, _ = np.histogramdd(ens.positions, bins=edges)
    clipped = ens.count - int(counts.sum())
    if clipped:
        warnings.warn(f"{clipped} of {ens.count} particles fell outside the "
                      "grid and were dropped", stacklevel=2)
    w = grid.quadrature_weights()
    return ScalarField(grid, counts.ravel() / (ens.count * w))


def tv_distance(p: ScalarField, q: ScalarField) -> float:
    """Total variation through the quadrature: (1/2) sum w |p - q|."""
    if p.grid != q.grid:
        raise SamplingError("densities live on different grids")
    w = p.grid.quadrature_weights()
    return float(0.5 * np.sum(w * np.abs(p.values - q.values)))
