import numpy as np
import pytest
from numpy.polynomial import Polynomial as P

from dynfrac import schemes
from dynfrac.assembly import Loading, TimeFunction
from dynfrac.energy_audit import balance_residual, relative_balance_residual
from dynfrac.material import at2_law, iso_voigt, mode_sensitive_law
from dynfrac.plasticity import (
    PlasticLaw,
    element_update,
    mode_ii_extra_dissipation,
    return_map,
    return_map_residual,
    soft_threshold,
)
from dynfrac.schemes import initial_state
from dynfrac.state import SchemeConfig
from oracles import return_map_magnitude


def dev_tensor(rng, scale=1.0):
    a, b = rng.normal(size=2) * scale
    return np.array([[a, b], [b, -a]])


def fro(t):
    return float(np.sqrt(np.sum(np.asarray(t) ** 2)))


class TestPlasticLaw:
    def test_needs_hardening_or_viscosity(self):
        with pytest.raises(ValueError, match="H > 0 or G_nh > 0"):
            PlasticLaw.constant(0.0, 0.0, 1.0)

    def test_gradient_unsupported(self):
        with pytest.raises(ValueError, match="kappa1"):
            PlasticLaw.constant(1.0, 0.0, 1.0, kappa1=0.1)

    def test_negative_yield(self):
        with pytest.raises(ValueError):
            PlasticLaw(1.0, 0.0, P([0.5, -1.0]))


class TestReturnMap:
    def test_zero_stress(self):
        plaw = PlasticLaw.constant(1.0, 0.5, 0.2)
        out = return_map(np.zeros((2, 2)), np.zeros((2, 2)), plaw, 0.1, 1.0)
        np.testing.assert_array_equal(out, 0.0)

    def test_inside_yield_surface(self, rng):
        plaw = PlasticLaw.constant(1.0, 0.0, 10.0)
        p0 = dev_tensor(rng, 0.1)
        np.testing.assert_array_equal(return_map(dev_tensor(rng), p0, plaw, 0.1, 1.0), p0)

    def test_bisection_oracle(self):
        # |trial| = 2, sigma_y = 1, nearly no hardening: the shear term sets the flow
        plaw = PlasticLaw.constant(1e-8, 0.0, 1.0)
        trial = np.array([[np.sqrt(2.0), 0.0], [0.0, -np.sqrt(2.0)]])
        out = return_map(trial, np.zeros((2, 2)), plaw, 0.1, 1.0, shear=3.0)
        x = return_map_magnitude(2.0, 1.0, 0.5e-8 + 3.0)
        assert fro(out) == pytest.approx(x, rel=1e-12)
        np.testing.assert_allclose(out / fro(out), trial / 2.0, rtol=1e-12)

    def test_zero_yield_is_linear(self, rng):
        plaw = PlasticLaw.constant(2.0, 0.3, 0.0)
        t = dev_tensor(rng)
        a = return_map(t, np.zeros((2, 2)), plaw, 0.1, 1.0)
        b = return_map(3.0 * t, np.zeros((2, 2)), plaw, 0.1, 1.0)
        np.testing.assert_allclose(b, 3.0 * a, rtol=1e-13)

    def test_trace_free_required(self):
        with pytest.raises(ValueError, match="trace-free"):
            return_map(np.eye(2), np.zeros((2, 2)), PlasticLaw.constant(1, 0, 1), 0.1, 1.0)

    def test_damage_dependent_yield(self):
        plaw = PlasticLaw(1.0, 0.0, P([0.0, 2.0]))
        trial = np.array([[1.0, 0.0], [0.0, -1.0]])
        intact = return_map(trial, np.zeros((2, 2)), plaw, 0.1, 1.0)
        broken = return_map(trial, np.zeros((2, 2)), plaw, 0.1, 0.2)
        assert fro(intact) == 0.0 and fro(broken) > 0

    @pytest.mark.parametrize("seed", range(100))
    def test_inclusion_residual(self, seed):
        rng = np.random.default_rng(seed)
        plaw = PlasticLaw.constant(rng.uniform(0, 2), rng.uniform(0, 1) + 1e-3, rng.uniform(0, 1))
        tau = rng.uniform(0.01, 1)
        trial, p0 = dev_tensor(rng, 2.0), dev_tensor(rng, 0.5)
        shear = rng.uniform(0, 3)
        p1 = return_map(trial, p0, plaw, tau, 1.0, shear)
        assert return_map_residual(trial, p0, p1, plaw, tau, 1.0, shear) <= 1e-10
        assert abs(np.trace(p1)) <= 1e-14

    def test_soft_threshold_without_hardening(self):
        with pytest.raises(RuntimeError):
            soft_threshold(np.array([1.0, -1.0, 0.0]), 0.1, 0.0)


class TestElementUpdate:
    def args(self, n=1):
        one = np.ones(n)
        return dict(KC=one, GC=one, KD=0.1 * one, GD=0.1 * one)

    def test_elastic_step(self):
        plaw = PlasticLaw.constant(1.0, 0.0, 10.0)
        e1 = np.array([[1e-3, 0.0, 2e-3]])
        sig, dpi = element_update(e1, np.zeros((1, 3)), np.zeros((1, 3)), **self.args(),
                                  sigma_y=10.0, plaw=plaw, tau=0.1)
        np.testing.assert_array_equal(dpi, 0.0)
        # C e/2 + D e/tau with C = iso(1, 1) and D/tau = iso(1, 1)
        np.testing.assert_allclose(sig, [1.5 * iso_voigt(1.0, 1.0) @ e1[0]], rtol=1e-12)

    def test_opening_mode_no_flow(self):
        plaw = PlasticLaw.constant(1.0, 0.0, 1e-6)
        e1 = np.array([[0.5, 0.5, 0.0]])
        _, dpi = element_update(e1, np.zeros((1, 3)), np.zeros((1, 3)), **self.args(),
                                sigma_y=1e-6, plaw=plaw, tau=0.1)
        np.testing.assert_array_equal(dpi, 0.0)

    def test_tangent_fd(self, rng):
        plaw = PlasticLaw.constant(0.5, 0.2, 0.05)
        e0 = rng.normal(size=(1, 3)) * 0.1
        e1 = e0 + rng.normal(size=(1, 3)) * 0.2
        p0 = np.array([[0.01, -0.01, 0.02]])
        kw = dict(**self.args(), sigma_y=0.05, plaw=plaw, tau=0.1)
        _, dpi, T = element_update(e1, e0, p0, tangent=True, **kw)
        assert np.any(dpi != 0)
        h = 1e-7
        for j in range(3):
            d = np.zeros((1, 3))
            d[0, j] = h
            sp_, _ = element_update(e1 + d, e0, p0, **kw)
            sm_, _ = element_update(e1 - d, e0, p0, **kw)
            np.testing.assert_allclose((sp_ - sm_)[0] / (2 * h), T[0][:, j], rtol=1e-6, atol=1e-8)


class TestPlasticStaggered:
    def test_energy_balance(self, square2):
        m = square2.with_boundary_kinds({"left": "fixed"})
        law = at2_law(1.0, 1.0, 0.05, 0.5, D0_K=0.05, D0_G=0.05)
        plaw = PlasticLaw.constant(0.5, 0.1, 0.05)
        ld = Loading(tractions={"right": [(np.array([0.3, 1.0]), TimeFunction.table([0, 1], [0, 1]))]})
        cfg = SchemeConfig(tau=0.05)
        s0 = initial_state(m, law, plastic=True, plaw=plaw)
        s = s0
        for _ in range(30):
            s = schemes.step(s, m, law, cfg, ld, plaw)
            assert balance_residual(s.ledger, s0.ledger) <= 1e-9
        assert s.ledger.dissipated_plastic > 0 and s.ledger.stored_plastic > 0
        np.testing.assert_allclose(s.pi[:, 0] + s.pi[:, 1], 0.0, atol=0)
        assert relative_balance_residual(s.ledger, s0.ledger) <= 1e-9

    def test_requires_staggered(self, square2):
        law = at2_law(1.0, 1.0, 0.05, 0.5)
        plaw = PlasticLaw.constant(0.5, 0.1, 0.05)
        s = initial_state(square2, law, plastic=True, plaw=plaw)
        with pytest.raises(ValueError, match="staggered"):
            schemes.step(s, square2, law, SchemeConfig(scheme="monolithic"), None, plaw)


class TestModeII:
    @pytest.fixture
    def quad_law(self):
        return mode_sensitive_law(P([1.0]), P([0.0, 0.0, 2.0]), 1.0)

    def test_worked_example(self, quad_law):
        assert mode_ii_extra_dissipation(PlasticLaw.constant(1.0, 0.0, 1.5), quad_law) == pytest.approx(0.75)

    def test_endpoint(self, quad_law):
        assert mode_ii_extra_dissipation(PlasticLaw.constant(1.0, 0.0, 2.0), quad_law) == 0.0

    @pytest.mark.parametrize("sy", [0.9, 2.5])
    def test_tuning_violation(self, quad_law, sy):
        with pytest.raises(ValueError, match="tuning"):
            mode_ii_extra_dissipation(PlasticLaw.constant(1.0, 0.0, sy), quad_law)

    def test_linear_degradation(self):
        law = mode_sensitive_law(P([1.0]), P([0.0, 2.0]), 1.0)
        s_ii = 2.0 * np.sqrt(2.0)
        out = mode_ii_extra_dissipation(PlasticLaw.constant(2.0, 0.0, 2.0), law)
        assert out == pytest.approx(2.0 * (s_ii - 2.0) / 2.0, rel=1e-12)
