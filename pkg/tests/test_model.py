import numpy as np
import pytest

import densctl as dc
from densctl.errors import ModelError

from conftest import ou_spec


def grid1d(n=101, lo=-6.0, hi=6.0):
    return dc.Grid((lo,), (hi,), (n,))


class TestSpecConstruction:
    def test_forward_spec(self):
        spec = ou_spec(101)
        assert spec.lam == 2.0
        assert spec.grid.size == 101

    def test_sigma_and_Sigma_are_exclusive(self):
        g = grid1d()
        with pytest.raises(ModelError):
            dc.ProblemSpec(grid=g, phi="x1^2", sigma=[["1"]], Sigma=[["1"]], q="0")
        with pytest.raises(ModelError):
            dc.ProblemSpec(grid=g, phi="x1^2", q="0")

    def test_cost_and_target_are_exclusive(self):
        g = grid1d()
        with pytest.raises(ModelError):
            dc.ProblemSpec(
                grid=g, phi="x1^2", sigma=[["1"]], q="0", target="exp(-x1^2)"
            )
        with pytest.raises(ModelError):
            dc.ProblemSpec(grid=g, phi="x1^2", sigma=[["1"]])

    def test_control_weight_is_structural(self):
        g = grid1d()
        with pytest.raises(ModelError):
            dc.ProblemSpec(grid=g, phi="x1^2", sigma=[["1"]], q="0", lam=1.0)

    def test_dimension_mismatch_in_expressions(self):
        g = grid1d()
        with pytest.raises((ModelError, dc.ExpressionError)):
            dc.ProblemSpec(grid=g, phi="x2^2", sigma=[["1"]], q="0")


class TestDerivedQuantities:
    def test_drift_constant_noise(self):
        # Sigma = 2, phi = x^2: drift is -Sigma grad(phi)/2 = -2x
        spec = ou_spec(101)
        b = dc.drift_from_potential(spec.diffusion_field(), spec.phi_field())
        x = spec.grid.node_coords()[:, 0]
        np.testing.assert_allclose(b.values[:, 0], -2 * x, atol=1e-10)

    def test_drift_state_dependent_noise(self):
        # Sigma = 1 + x^2 adds the divergence term x, leaving -x^3
        g = grid1d(201)
        spec = dc.ProblemSpec(grid=g, phi="x1^2", Sigma=[["1 + x1^2"]], q="0")
        b = dc.drift_from_potential(spec.diffusion_field(), spec.phi_field())
        x = g.node_coords()[:, 0]
        np.testing.assert_allclose(b.values[:, 0], -(x**3), atol=1e-9)

    def test_control_weight_inverts_diffusion(self):
        g = dc.Grid((-1.0, -1.0), (1.0, 1.0), (5, 5))
        spec = dc.ProblemSpec(
            grid=g, phi="x1^2 + x2^2", Sigma=[["2", "1"], ["1", "2"]], q="0"
        )
        R = dc.control_cost_from_diffusion(spec.diffusion_field())
        Sigma0 = spec.diffusion_at(np.zeros((1, 2)))[0]
        np.testing.assert_allclose(R.values[0] @ Sigma0 / 2.0, np.eye(2), atol=1e-13)

    def test_noise_factor_from_Sigma(self):
        # only Sigma given: noise_at must return a valid factor
        g = grid1d(11)
        spec = dc.ProblemSpec(grid=g, phi="x1^2", Sigma=[["1 + x1^2"]], q="0")
        pts = g.node_coords()
        sig = spec.noise_at(pts)
        Sig = spec.diffusion_at(pts)
        np.testing.assert_allclose(
            np.einsum("nij,nkj->nik", sig, sig), Sig, atol=1e-12
        )


class TestConfinementProxy:
    def test_quadratic_potential_passes(self):
        g = grid1d(201)
        x = g.node_coords()[:, 0]
        rep = dc.confinement_report(dc.ScalarField(g, x**2))
        assert rep.passed
        assert len(rep.shell_minima) == 5

    def test_flat_potential_fails(self):
        g = grid1d(201)
        rep = dc.confinement_report(dc.ScalarField(g, np.ones(g.size)))
        assert not rep.passed

    def test_too_few_shells(self):
        g = grid1d(7)
        with pytest.raises(ModelError):
            dc.confinement_report(dc.ScalarField(g, np.zeros(7)))


class TestValidation:
    def names(self, rep, status):
        return {f.name for f in rep.findings if f.status == status}

    def test_good_spec_passes(self):
        rep = dc.validate_spec(ou_spec(201))
        assert rep.passed
        assert not self.names(rep, "FAIL")

    def test_spd_violation(self):
        g = grid1d(201)
        spec = dc.ProblemSpec(grid=g, phi="x1^2", Sigma=[["-1"]], q="x1^2")
        rep = dc.validate_spec(spec)
        assert "diffusion-spd" in self.names(rep, "FAIL")
        assert not rep.passed

    def test_asymmetric_diffusion(self):
        g = dc.Grid((-1.0, -1.0), (1.0, 1.0), (9, 9))
        spec = dc.ProblemSpec(
            grid=g, phi="x1^2 + x2^2", Sigma=[["2", "1"], ["0", "2"]], q="0"
        )
        rep = dc.validate_spec(spec)
        assert "diffusion-symmetry" in self.names(rep, "FAIL")

    def test_unbounded_below_cost(self):
        spec = ou_spec(201, q="-x1^2")
        rep = dc.validate_spec(spec)
        assert "cost-bounded-below" in self.names(rep, "FAIL")

    def test_negative_but_bounded_cost_warns(self):
        spec = ou_spec(201, q="-1")
        rep = dc.validate_spec(spec)
        assert "cost-negative" in self.names(rep, "WARN")
        assert "cost-bounded-below" not in self.names(rep, "FAIL")

    def test_flat_potential_confinement_fails(self):
        g = grid1d(201)
        spec = dc.ProblemSpec(grid=g, phi="1", sigma=[["sqrt(2)"]], q="x1^2")
        rep = dc.validate_spec(spec)
        assert "confinement" in self.names(rep, "FAIL")

    def test_sign_changing_target(self):
        g = grid1d(201)
        spec = dc.ProblemSpec(grid=g, phi="x1^2", sigma=[["1"]], target="x1")
        rep = dc.validate_spec(spec)
        assert "target-positive" in self.names(rep, "FAIL")

    def test_report_lines_and_dict(self):
        rep = dc.validate_spec(ou_spec(101))
        assert all(isinstance(l, str) for l in rep.lines())
        d = rep.as_dict()
        assert isinstance(d, dict) and d
