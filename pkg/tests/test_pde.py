"""Crank-Nicolson density evolution and modal decay."""

import numpy as np
import pytest

import densctl as dc
from densctl.errors import PdeError

from conftest import assemble, ou_spec


@pytest.fixture(scope="module")
def ou_op():
    return assemble(ou_spec())


@pytest.fixture(scope="module")
def ou_adj(ou_op):
    return dc.adjoint_of(ou_op)


def perturbed_density(op, amp=0.2):
    g = op.grid
    x = g.node_coords()[:, 0]
    w = op.weights
    p = op.rho.values * (1 + amp * np.sin(x))
    p = p / (w @ p)
    return dc.ScalarField(g, p)


class TestStationarity:
    def test_stationary_density_is_fixed_point(self, ou_op, ou_adj):
        traj = dc.evolve_fp(ou_adj, dc.ScalarField(ou_op.grid, ou_op.rho.values),
                            dt=0.01, T=2.0)
        assert np.abs(traj.densities[-1] - ou_op.rho.values).max() <= 1e-10
        assert np.abs(traj.mass - 1.0).max() <= 1e-12


class TestMassAndPositivity:
    def test_mass_conserved_through_transient(self, ou_adj, ou_op):
        traj = dc.evolve_fp(ou_adj, perturbed_density(ou_op), dt=0.005, T=5.0)
        assert np.abs(traj.mass - 1.0).max() <= 1e-11

    def test_negative_initial_density_rejected(self, ou_adj, ou_op):
        g = ou_op.grid
        bad = dc.ScalarField(g, ou_op.rho.values - ou_op.rho.values.max())
        with pytest.raises(PdeError):
            dc.evolve_fp(ou_adj, bad, dt=0.01, T=0.1)

    def test_dt_refused_against_rate_limit(self, ou_adj, ou_op):
        with pytest.raises(PdeError):
            dc.evolve_fp(ou_adj, perturbed_density(ou_op), dt=1.0, T=2.0,
                         rate_limit=8.0)


class TestModalDecay:
    def test_fitted_rate_matches_gap(self, ou_adj, ou_op):
        traj = dc.evolve_fp(ou_adj, perturbed_density(ou_op), dt=0.005, T=2.5,
                            store_every=5)
        rate = dc.fit_decay_rate(traj.times, traj.norm_rho, t_min=0.25, t_max=1.5)
        assert abs(rate + 2.0) / 2.0 <= 0.02

    def test_norm_decays_monotonically(self, ou_adj, ou_op):
        traj = dc.evolve_fp(ou_adj, perturbed_density(ou_op), dt=0.01, T=2.0)
        drops = np.diff(traj.norm_rho)
        assert (drops <= 1e-12).all()

    def test_fit_on_synthetic_exponential(self):
        t = np.linspace(0, 3, 61)
        n = 0.7 * np.exp(-1.37 * t)
        assert abs(dc.fit_decay_rate(t, n, 0.2, 2.8) + 1.37) <= 1e-12


class TestPerturbationEvolution:
    def test_matches_eigen_expansion(self, ou_op):
        # relative perturbation p~ = (p - rho)/rho evolves under G; its
        # trajectory must match the modal sum built from the spectrum
        g = ou_op.grid
        x = g.node_coords()[:, 0]
        pt0 = dc.ScalarField(g, 0.2 * np.sin(x))
        pt0 = dc.project_mass_zero(pt0, ou_op.rho)
        s = dc.eig_generator(ou_op, 12)
        pc = dc.expand_in_eigenbasis(pt0, s)
        traj = dc.evolve_perturbation(ou_op, pt0, dt=0.004, T=2.5, store_every=25)
        worst = 0.0
        base = dc.weighted_norm(pt0, ou_op.rho)
        for t, vals in zip(traj.density_times, traj.densities):
            ref = dc.eigen_evolution(pc, t)
            diff = dc.ScalarField(g, vals - ref.values)
            worst = max(worst, dc.weighted_norm(diff, ou_op.rho) / base)
        assert worst <= 1e-3

    def test_full_equals_conjugated_perturbation(self, ou_op, ou_adj):
        # linearity: full FP from rho(1 + eps f) equals rho (1 + perturbation)
        g = ou_op.grid
        rho = ou_op.rho.values
        p0 = perturbed_density(ou_op)
        pt0 = dc.ScalarField(g, p0.values / rho - 1.0)
        T, dt = 1.0, 0.005
        full = dc.evolve_fp(ou_adj, p0, dt=dt, T=T)
        pert = dc.evolve_perturbation(ou_op, pt0, dt=dt, T=T)
        recon = rho * (1.0 + pert.densities[-1])
        assert np.abs(recon - full.densities[-1]).max() <= 1e-8

    def test_zero_mode_coefficient_vanishes_after_projection(self, ou_op):
        g = ou_op.grid
        x = g.node_coords()[:, 0]
        s = dc.eig_generator(ou_op, 12)
        pt = dc.project_mass_zero(dc.ScalarField(g, 1.0 + 0.3 * np.cos(x)), ou_op.rho)
        pc = dc.expand_in_eigenbasis(pt, s)
        assert abs(pc.coefficients[0]) <= 1e-10
        at0 = dc.eigen_evolution(pc, 0.0)
        # truncation to 12 modes reproduces the smooth input closely
        diff = dc.ScalarField(g, at0.values - pt.values)
        assert dc.weighted_norm(diff, ou_op.rho) <= 1e-3


class TestTrajectoryBookkeeping:
    def test_store_every_grid(self, ou_adj, ou_op):
        traj = dc.evolve_fp(ou_adj, perturbed_density(ou_op), dt=0.01, T=0.5,
                            store_every=10)
        assert traj.kind == "density"
        assert len(traj.density_times) == len(traj.densities)
        assert traj.density_times[0] == 0.0
        np.testing.assert_allclose(np.diff(traj.density_times), 0.1, rtol=1e-12)
        np.testing.assert_allclose(traj.density_times[-1], 0.5, rtol=1e-12)
        assert len(traj.times) == 51
        assert traj.min_value <= traj.densities[-1].min()
