import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import Polynomial as P

from dynfrac import assembly as asm
from dynfrac import schemes
from dynfrac.assembly import Loading, TimeFunction
from dynfrac.energy_audit import balance_residual, relative_balance_residual
from dynfrac.material import at2_law, iso_voigt, linear_damage_law, mode_sensitive_law
from dynfrac.mesh import generate_rect_mesh
from dynfrac.schemes import cfl_timestep, incremental_potential, initial_state
from dynfrac.state import SchemeConfig


def run(state, mesh, law, cfg, loading=None, n=10):
    for _ in range(n):
        state = schemes.step(state, mesh, law, cfg, loading)
    return state


def smooth_u(mesh, amp=0.01):
    x, y = mesh.nodes.T
    return amp * np.column_stack([np.sin(np.pi * x) * y, x * y]).ravel()


@pytest.fixture
def frozen_law():
    # moduli independent of alpha and no damage energy: damage never moves
    return mode_sensitive_law(P([1.0]), P([1.0]), 1.0)


@pytest.fixture
def mesh44():
    return generate_rect_mesh(4, 4, 1.0, 1.0, "crossed")


class TestRest:
    @pytest.mark.parametrize("scheme", ["staggered", "monolithic", "explicit"])
    def test_rest_is_fixed_point(self, scheme, mesh8):
        law = at2_law(1.0, 1.0, 0.1, 0.2)
        cfg = SchemeConfig(scheme=scheme, tau=0.01)
        s0 = initial_state(mesh8, law, cfg=cfg)
        s = run(s0, mesh8, law, cfg, n=5)
        np.testing.assert_array_equal(s.u, 0.0)
        np.testing.assert_array_equal(s.v, 0.0)
        np.testing.assert_array_equal(s.alpha, 1.0)
        assert s.t == pytest.approx(0.05) and s.step == 5

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="leapfrog")


class TestStaggered:
    def test_conservative_crank_nicolson(self, mesh44, frozen_law):
        cfg = SchemeConfig(tau=0.05)
        s0 = initial_state(mesh44, frozen_law, u0=smooth_u(mesh44))
        E0 = s0.ledger.energy
        s = s0
        for _ in range(100):
            s = schemes.step_staggered(s, mesh44, frozen_law, cfg)
            assert abs(s.ledger.energy - E0) <= 1e-10 * E0

    def test_input_state_untouched(self, mesh44, frozen_law):
        s0 = initial_state(mesh44, frozen_law, u0=smooth_u(mesh44))
        u0 = s0.u.copy()
        schemes.step_staggered(s0, mesh44, frozen_law, SchemeConfig(tau=0.05))
        np.testing.assert_array_equal(s0.u, u0)

    def test_two_triangle_traction(self, square2):
        m = square2.with_boundary_kinds({"left": "fixed"})
        law = at2_law(1.0, 1.0, 0.05, 0.5, D0_K=0.1, D0_G=0.1)
        ld = Loading(tractions={"right": [(np.array([1.0, 0.3]), TimeFunction.table([0, 1], [0, 2]))]})
        cfg = SchemeConfig(tau=0.05)
        s0 = initial_state(m, law)
        s = s0
        for _ in range(20):
            s = schemes.step_staggered(s, m, law, cfg, ld)
            assert balance_residual(s.ledger, s0.ledger) <= 1e-12
        assert s.alpha.min() < 1.0

    def test_damage_balance_with_viscosity(self, mesh44, rng):
        law = at2_law(1.0, 1.0, 0.02, 0.3, nu_visc=0.05, D0_K=0.05, D0_G=0.05)
        s0 = initial_state(mesh44, law, u0=smooth_u(mesh44, 0.5), alpha0=rng.uniform(0.6, 1.0, mesh44.n_nodes))
        s = run(s0, mesh44, law, SchemeConfig(tau=0.02), n=30)
        assert s.alpha.max() <= 1.0 and s.alpha.min() >= 0.0
        assert relative_balance_residual(s.ledger, s0.ledger) <= 1e-11

    @pytest.mark.parametrize("solver", ["direct", "cg"])
    def test_linear_solvers_agree(self, mesh44, frozen_law, solver):
        cfg = SchemeConfig(tau=0.05, linear_solver=solver)
        ref = run(initial_state(mesh44, frozen_law, u0=smooth_u(mesh44)), mesh44, frozen_law,
                  SchemeConfig(tau=0.05), n=5)
        s = run(initial_state(mesh44, frozen_law, u0=smooth_u(mesh44)), mesh44, frozen_law, cfg, n=5)
        np.testing.assert_allclose(s.u, ref.u, rtol=1e-9, atol=1e-14)


class TestMonolithic:
    @pytest.fixture
    def law(self):
        return linear_damage_law(1.0, 1.0, 0.01, phi=(-0.1, 0.2, -0.1), D0_K=0.1, D0_G=0.1)

    def test_one_iteration_without_drive(self, mesh8, law):
        cfg = SchemeConfig(scheme="monolithic", tau=0.1)
        s = schemes.step_monolithic(initial_state(mesh8, law), mesh8, law, cfg)
        assert s.__dict__["inner_iterations"] == 1

    def test_potential_non_increasing(self, square2, law):
        m = square2.with_boundary_kinds({"left": "fixed"})
        ld = Loading(tractions={"right": [(np.array([1.0, 0.0]), TimeFunction.table([0, 1], [0, 0.6]))]})
        cfg = SchemeConfig(scheme="monolithic", tau=0.05)
        s = initial_state(m, law)
        iterations = 0
        for _ in range(30):
            hist = []
            s = schemes.step_monolithic(s, m, law, cfg, ld, history=hist)
            iterations = max(iterations, s.__dict__["inner_iterations"])
            assert np.all(np.diff(hist) <= 1e-12 * max(1.0, abs(hist[0])))
        assert s.alpha.min() < 1.0 and iterations > 1

    def test_potential_at_old_state(self, mesh44, law):
        s0 = initial_state(mesh44, law, u0=smooth_u(mesh44))
        cfg = SchemeConfig(scheme="monolithic", tau=0.1)
        # at (u_old, alpha_old) with v_old = 0 only stored energy remains
        val = incremental_potential(s0.u, s0.alpha, s0, mesh44, law, cfg)
        assert val == pytest.approx(s0.ledger.stored_elastic + s0.ledger.stored_damage, rel=1e-13)

    def test_potential_inadmissible(self, mesh44, law):
        s0 = initial_state(mesh44, law, alpha0=np.full(mesh44.n_nodes, 0.5))
        cfg = SchemeConfig(scheme="monolithic", tau=0.1)
        healed = np.full(mesh44.n_nodes, 0.6)
        assert incremental_potential(s0.u, healed, s0, mesh44, law, cfg) == np.inf
        assert incremental_potential(s0.u, -s0.alpha, s0, mesh44, law, cfg) == np.inf

    def test_iteration_cap(self, square2):
        law = linear_damage_law(1.0, 1.0, 1e-6, phi=(-0.1, 0.2, -0.1))
        m = square2.with_boundary_kinds({"left": "fixed"})
        ld = Loading(tractions={"right": [(np.array([5.0, 0.0]), TimeFunction.constant(1.0))]})
        cfg = SchemeConfig(scheme="monolithic", tau=0.05, max_inner_iters=1)
        with pytest.raises(RuntimeError, match="residual"):
            schemes.step_monolithic(initial_state(m, law), m, law, cfg, ld)


class TestExplicit:
    def test_requires_proto_stress(self, mesh8, frozen_law):
        s = initial_state(mesh8, frozen_law)
        with pytest.raises(ValueError, match="proto-stress"):
            schemes.step_explicit(s, mesh8, frozen_law, SchemeConfig(scheme="explicit"))

    def test_rejects_viscosity(self, mesh8):
        law = at2_law(1, 1, 1, 0.1, D0_K=0.1, D0_G=0.1)
        cfg = SchemeConfig(scheme="explicit")
        with pytest.raises(ValueError, match="viscosity"):
            schemes.step_explicit(initial_state(mesh8, law, cfg=cfg), mesh8, law, cfg)

    def test_proto_stress_tracks_strain(self, mesh44, frozen_law, rng):
        cfg = SchemeConfig(scheme="explicit", tau=0.2 * cfl_timestep(mesh44, frozen_law))
        s = initial_state(mesh44, frozen_law, u0=smooth_u(mesh44), v0=0.01 * rng.normal(size=2 * mesh44.n_nodes), cfg=cfg)
        s = run(s, mesh44, frozen_law, cfg, n=20)
        expected = asm.element_strains(mesh44, s.u) @ iso_voigt(1.0, 1.0).T
        np.testing.assert_allclose(s.varsigma, expected, atol=1e-13)

    def test_mixed_quantity_conserved(self, mesh44, frozen_law):
        tau = 0.5 * cfl_timestep(mesh44, frozen_law)
        cfg = SchemeConfig(scheme="explicit", tau=tau)
        K = asm.assemble_stiffness(mesh44, np.ones(mesh44.n_nodes), frozen_law)
        mL = np.repeat(asm.node_weights(mesh44), 2)

        def mixed(s):
            return 0.5 * s.v @ (mL * s.v) + 0.5 * s.u @ (K @ (s.u + tau * s.v))

        s = initial_state(mesh44, frozen_law, u0=smooth_u(mesh44), cfg=cfg)
        Q0 = mixed(s)
        for _ in range(300):
            s = schemes.step_explicit(s, mesh44, frozen_law, cfg)
        assert mixed(s) == pytest.approx(Q0, rel=1e-9)

    def test_matches_leapfrog(self, mesh44, frozen_law):
        tau = 0.5 * cfl_timestep(mesh44, frozen_law)
        cfg = SchemeConfig(scheme="explicit", tau=tau)
        s = initial_state(mesh44, frozen_law, u0=smooth_u(mesh44), cfg=cfg)
        u_prev, u = s.u, s.u + tau * s.v
        s = schemes.step_explicit(s, mesh44, frozen_law, cfg)
        for _ in range(50):
            s = schemes.step_explicit(s, mesh44, frozen_law, cfg)
            u_prev, u = u, schemes.leapfrog_step(u_prev, u, mesh44, frozen_law, tau)
            np.testing.assert_allclose(s.u, u, atol=1e-13)


def leapfrog_limit(mesh, law):
    K = asm.assemble_stiffness(mesh, np.ones(mesh.n_nodes), law)
    d = 1.0 / np.sqrt(np.repeat(law.rho * asm.node_weights(mesh), 2))
    A = sp.diags(d) @ K @ sp.diags(d)
    lam = spla.eigsh(A, k=1, which="LA", return_eigenvectors=False)[0]
    return 2.0 / np.sqrt(lam)


class TestCFL:
    def test_halving_h(self, frozen_law):
        a = cfl_timestep(generate_rect_mesh(4, 4, 1, 1), frozen_law)
        b = cfl_timestep(generate_rect_mesh(8, 8, 1, 1), frozen_law)
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_density_scaling(self, mesh8):
        a = cfl_timestep(mesh8, at2_law(1, 1, 1, 0.1, rho=1.0))
        b = cfl_timestep(mesh8, at2_law(1, 1, 1, 0.1, rho=4.0))
        assert b == pytest.approx(2 * a, rel=1e-12)

    @pytest.mark.parametrize("pattern", ["diagonal", "crossed"])
    @pytest.mark.parametrize("n", [6, 12])
    def test_fraction_of_exact_limit(self, pattern, n):
        law = at2_law(1.3, 0.7, 1.0, 0.1)
        m = generate_rect_mesh(n, n, 1.0, 1.0, pattern)
        ratio = cfl_timestep(m, law) / leapfrog_limit(m, law)
        assert 0.5 <= ratio <= 1.0
