"""Crank-Nicolson evolution of densities and density perturbations.

Full densities evolve under the Fokker-Planck operator A, perturbations
p~ = p/p_inf - 1 under the generator G. Both use the same implicit
midpoint stepping; the factorization of (I - dt/2 op) is done once per
call. Mass conservation is inherited from the zero weighted-column-sum
structure of A, not re-imposed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PdeError
from .fields import ScalarField
from .operators import AdjointOperator, GeneratorOperator
from .spectral import Spectrum


@dataclass(frozen=True)
class DensityTrajectory:
    grid: object
    kind: str                                   # "density" | "perturbation"
    times: np.ndarray = field(repr=False)       # every stamp
    mass: np.ndarray = field(repr=False)        # quadrature mass per stamp
    norm_rho: np.ndarray = field(repr=False)    # perturbation norm per stamp
    density_times: np.ndarray = field(repr=False)
    densities: np.ndarray = field(repr=False)   # (n_stored, N)
    min_value: float = 0.0
    renormalized: bool = False
    projected: bool = False

    @property
    def n_steps(self) -> int:
        return int(self.times.shape[0]) - 1

    def final(self) -> ScalarField:
        return ScalarField(self.grid, self.densities[-1])


def _step_count(dt: float, T: float) -> int:
    if dt <= 0.0:
        raise PdeError(f"dt must be positive, got {dt}")
    n = int(round(T / dt))
    if n < 1:
        raise PdeError(f"horizon T = {T} shorter than one step dt = {dt}")
    return n


def _cn_factors(op_matrix: sp.csr_matrix, dt: float):
    n = op_matrix.shape[0]
    eye = sp.identity(n, format="csr")
    forward = (eye + (0.5 * dt) * op_matrix).tocsr()
    backward = (eye - (0.5 * dt) * op_matrix).tocsc()
    return forward, spla.splu(backward)


def evolve_fp(A: AdjointOperator, p0: ScalarField, dt: float, T: float,
              store_every: int | None = None,
              rate_limit: float | None = None) -> DensityTrajectory:
    """Evolve a density under the Fokker-Planck operator.

    rate_limit, when given, is the fastest resolved decay rate |xi_k|;
    dt above 0.5/rate_limit is refused because Crank-Nicolson then
    turns fast modes into slowly damped oscillations and the positivity
    watchdog loses meaning.
    """
    if p0.grid != A.grid:
        raise PdeError("initial density grid does not match operator")
    if rate_limit is not None and dt > 0.5 / rate_limit:
        raise PdeError(
            f"dt = {dt} exceeds 0.5/rate = {0.5 / rate_limit:.3e}")
    n_steps = _step_count(dt, T)
    if store_every is None:
        store_every = max(1, n_steps // 64)

    w = A.weights
    rho = A.rho.values
    p = p0.values.copy()
    if p.min() < -1e-12:
        raise PdeError(f"initial density has negative entries (min {p.min():.3e})")
    mass0 = float(w @ p)
    renormalized = False
    if abs(mass0 - 1.0) > 1e-8:
        warnings.warn(
            f"initial density mass {mass0:.6g} renormalized to 1", stacklevel=2)
        p = p / mass0
        renormalized = True

    forward, lu = _cn_factors(A.matrix, dt)

    times = dt * np.arange(n_steps + 1)
    mass = np.empty(n_steps + 1)
    norm = np.empty(n_steps + 1)
    stored = [p.copy()]
    stored_t = [0.0]

    def record(k, vec):
        mass[k] = w @ vec
        f = vec / rho - 1.0
        norm[k] = np.sqrt(max(np.sum(w * rho * f * f), 0.0))

    record(0, p)
    min_value = float(p.min())
    for k in range(1, n_steps + 1):
        p = lu.solve(forward @ p)
        record(k, p)
        m = float(p.min())
        if m < min_value:
            min_value = m
        if k % store_every == 0 or k == n_steps:
            stored.append(p.copy())
            stored_t.append(times[k])

    if min_value < -1e-10:
        warnings.warn(
            f"density dipped to {min_value:.3e}; reduce dt", stacklevel=2)

    return DensityTrajectory(
        grid=p0.grid, kind="density", times=times, mass=mass, norm_rho=norm,
        density_times=np.array(stored_t), densities=np.array(stored),
        min_value=min_value, renormalized=renormalized)


def project_mass_zero(f: ScalarField, rho: ScalarField) -> ScalarField:
    w = f.grid.quadrature_weights()
    total = float(np.sum(w * rho.values))
    mean = float(np.sum(w * rho.values * f.values)) / total
    return ScalarField(f.grid, f.values - mean)


def evolve_perturbation(G: GeneratorOperator, pt0: ScalarField, dt: float,
                        T: float, store_every: int | None = None) -> DensityTrajectory:
    """Evolve a mass-free density perturbation under the generator."""
    if pt0.grid != G.grid:
        raise PdeError("perturbation grid does not match operator")
    n_steps = _step_count(dt, T)
    if store_every is None:
        store_every = max(1, n_steps // 64)

    w = G.weights
    rho = G.rho.values
    f = pt0.values.copy()
    scale = float(np.sqrt(max(np.sum(w * rho * f * f), 0.0)))
    drift = float(np.sum(w * rho * f))
    projected = False
    if abs(drift) > 1e-8 * max(scale, 1e-30):
        warnings.warn(
            f"perturbation carries mass {drift:.3e}; projecting it out",
            stacklevel=2)
        f = project_mass_zero(pt0, G.rho).values
        projected = True

    forward, lu = _cn_factors(G.matrix, dt)

    times = dt * np.arange(n_steps + 1)
    mass = np.empty(n_steps + 1)
    norm = np.empty(n_steps + 1)
    stored = [f.copy()]
    stored_t = [0.0]

    def record(k, vec):
        mass[k] = np.sum(w * rho * vec)
        norm[k] = np.sqrt(max(np.sum(w * rho * vec * vec), 0.0))

    record(0, f)
    for k in range(1, n_steps + 1):
        f = lu.solve(forward @ f)
        record(k, f)
        if k % store_every == 0 or k == n_steps:
            stored.append(f.copy())
            stored_t.append(times[k])

    return DensityTrajectory(
        grid=pt0.grid, kind="perturbation", times=times, mass=mass,
        norm_rho=norm, density_times=np.array(stored_t),
        densities=np.array(stored), min_value=float(np.min(stored)),
        projected=projected)


@dataclass(frozen=True)
class PerturbationCoefficients:
    coefficients: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    spectrum: Spectrum = field(repr=False)
    reconstruction_error: float = 0.0

    @property
    def mass_coefficient(self) -> float:
        # coefficient on the constant mode; zero for mass-free perturbations
        return float(self.coefficients[0])


def expand_in_eigenbasis(pt0: ScalarField, s: Spectrum) -> PerturbationCoefficients:
    if pt0.grid != s.rho.grid:
        raise PdeError("perturbation grid does not match spectrum")
    w = pt0.grid.quadrature_weights()
    weight = w * s.rho.values
    coeffs = s.functions @ (weight * pt0.values)
    recon = pt0.values - coeffs @ s.functions
    err = float(np.sqrt(max(np.sum(weight * recon * recon), 0.0)))
    return PerturbationCoefficients(
        coefficients=coeffs, eigenvalues=s.eigenvalues.copy(), spectrum=s,
        reconstruction_error=err)


def eigen_evolution(pc: PerturbationCoefficients, t: float) -> ScalarField:
    if t < 0.0:
        raise PdeError(f"time must be nonnegative, got {t}")
    amp = pc.coefficients * np.exp(pc.eigenvalues * t)
    return ScalarField(pc.spectrum.rho.grid, amp @ pc.spectrum.functions)


def fit_decay_rate(times: np.ndarray, norms: np.ndarray,
                   t_min: float, t_max: float) -> float:
    """Least-squares slope of log(norm) over [t_min, t_max].

    Returns the signed rate: negative means decay. Early times are
    excluded by the caller's window to avoid multi-mode transients.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    mask = (times >= t_min) & (times <= t_max) & (norms > 0.0)
    if int(mask.sum()) < 2:
        raise PdeError("fit window contains fewer than two usable stamps")
    slope, _ = np.polyfit(times[mask], np.log(norms[mask]), 1)
    return float(slope)
