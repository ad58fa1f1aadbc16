"""Time-stepping schemes.

All three schemes advance ``(u, v, alpha)`` over one step of length ``tau``
and extend the energy ledger.

staggered
    Crank-Nicolson mechanics with ``C(alpha^{k-1})`` and ``D(alpha^{k-1})``,
    ``u^k - u^{k-1} = tau (v^k + v^{k-1}) / 2``, followed by the damage
    step with difference quotients of ``C`` and ``phi`` against
    ``alpha^{k-1}`` and the midpoint gradient term.  The discrete energy
    balance holds to round-off.
monolithic
    Critical point of the incremental potential (``C(alpha^k) e(u^k)``,
    viscosity at ``alpha^{k-1}``) found by alternating minimisation.
explicit
    Velocity/proto-stress leapfrog with lumped mass, requiring
    ``C(alpha) = g(alpha) C1``.

Constrained displacement components (sliding or fixed boundaries) keep
their previous value and have zero velocity.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from . import damage_vi
from .energy_audit import EnergyLedger, energy_breakdown
from .material import (
    MaterialLaw,
    energy_density_voigt,
    invariant_functions,
    iso_voigt,
    strain_invariants,
    stress_voigt,
    tangent_voigt,
)
from .state import SchemeConfig, SimState

__all__ = [
    "SchemeConfig",
    "SimState",
    "initial_state",
    "step",
    "step_staggered",
    "step_monolithic",
    "step_explicit",
    "incremental_potential",
    "cfl_timestep",
    "leapfrog_step",
]


# --------------------------------------------------------------------------
# helpers


def solve_spd(A: sp.spmatrix, rhs: np.ndarray, free: np.ndarray, cfg: SchemeConfig) -> np.ndarray:
    """Solve ``A x = rhs`` on the ``free`` dofs, zero elsewhere."""
    x = np.zeros(rhs.size)
    if free.size == 0:
        return x
    Aff = sp.csr_matrix(A)[free][:, free]
    bf = rhs[free]
    if cfg.linear_solver == "direct":
        x[free] = spla.splu(Aff.tocsc()).solve(bf)
        return x
    d = Aff.diagonal()
    Minv = sp.diags(1.0 / d)
    bnorm = np.linalg.norm(bf)
    if bnorm == 0.0:
        return x
    xf, info = spla.cg(Aff, bf, rtol=cfg.lin_tol, atol=0.0, M=Minv, maxiter=20 * free.size)
    res = np.linalg.norm(Aff @ xf - bf) / bnorm
    if info != 0 or res > 10 * cfg.lin_tol:
        raise RuntimeError(f"CG did not converge: relative residual {res:.3e}")
    x[free] = xf
    return x


def _loads(mesh, loading, t0, t1):
    if loading is None:
        return np.zeros(2 * mesh.n_nodes)
    return loading.vector(mesh, t0, t1)


def _finish(state: SimState, new: SimState, mesh, law, cfg, plaw=None, *,
            visc=0.0, work=0.0, dmg=0.0, plast=0.0) -> SimState:
    led = state.ledger
    new.ledger = EnergyLedger(
        dissipated_viscous=led.dissipated_viscous + visc,
        dissipated_damage=led.dissipated_damage + dmg,
        dissipated_plastic=led.dissipated_plastic + plast,
        external_work=led.external_work + work,
    )
    new.ledger = energy_breakdown(new, mesh, law, plaw, cfg.mass_lumped, cfg.alpha_quadrature)
    return new


def initial_state(mesh, law: MaterialLaw, u0=None, v0=None, alpha0=None, *, t0=0.0,
                  plastic: bool = False, proto_stress: bool = False,
                  cfg: SchemeConfig | None = None, plaw=None) -> SimState:
    """Initial state with its energy ledger.

    ``proto_stress`` initialises ``varsigma0 = C1 e(u0)`` for the explicit
    scheme (automatic when ``cfg.scheme == "explicit"``).
    """
    n = mesh.n_nodes
    u0 = np.zeros(2 * n) if u0 is None else np.asarray(u0, dtype=float).copy()
    v0 = np.zeros(2 * n) if v0 is None else np.asarray(v0, dtype=float).copy()
    alpha0 = np.ones(n) if alpha0 is None else np.asarray(alpha0, dtype=float).copy()
    cfg = cfg or SchemeConfig()
    v0[mesh.constrained_dofs] = 0.0
    pi = np.zeros((mesh.n_elements, 3)) if plastic else None
    varsigma = None
    if proto_stress or cfg.scheme == "explicit":
        _, K1, G1 = law.proportional_degradation()
        varsigma = asm.element_strains(mesh, u0) @ iso_voigt(K1, G1).T
    state = SimState(t0, u0, v0, alpha0, pi, varsigma, EnergyLedger(), 0)
    state.ledger = energy_breakdown(state, mesh, law, plaw, cfg.mass_lumped, cfg.alpha_quadrature)
    return state


def step(state, mesh, law, cfg: SchemeConfig, loading=None, plaw=None) -> SimState:
    """Dispatch on ``cfg.scheme`` (and plasticity)."""
    if plaw is not None:
        from .plasticity import step_staggered_plastic

        if cfg.scheme != "staggered":
            raise ValueError("plasticity is implemented for the staggered scheme only")
        return step_staggered_plastic(state, mesh, law, plaw, cfg, loading)
    if cfg.scheme == "staggered":
        return step_staggered(state, mesh, law, cfg, loading)
    if cfg.scheme == "monolithic":
        return step_monolithic(state, mesh, law, cfg, loading)
    return step_explicit(state, mesh, law, cfg, loading)


# --------------------------------------------------------------------------
# discrete-gradient stress for the non-quadratic law


def _secant_scalar(f, df, x1, x0):
    """``(f(x1) - f(x0)) / (x1 - x0)``, midpoint derivative when close."""
    dx = x1 - x0
    close = np.abs(dx) <= 1e-7 * (1.0 + np.abs(x1) + np.abs(x0))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (f(x1) - f(x0)) / np.where(close, 1.0, dx)
    return np.where(close, df(0.5 * (x1 + x0)), q)


def discrete_gradient_stress(e1, e0, alpha, law: MaterialLaw):
    """Per-element stress ``S`` with ``S . (e1 - e0) = W(e1) - W(e0)``.

    ``W`` is the elastic energy density at fixed damage (Voigt arrays).
    For quadratic laws this is ``C(alpha) (e1 + e0) / 2``.
    """
    t1, s1, ds1 = strain_invariants(e1)
    t0, s0, ds0 = strain_invariants(e0)
    fa = lambda t: invariant_functions(t, np.zeros_like(t), law)[0]
    fc = lambda t: invariant_functions(t, np.zeros_like(t), law)[2]
    fb = lambda s: invariant_functions(np.zeros_like(s), s, law)[1]
    dfa = lambda t: invariant_functions(t, np.zeros_like(t), law, 1)[0]
    dfc = lambda t: invariant_functions(t, np.zeros_like(t), law, 1)[2]
    dfb = lambda s: invariant_functions(np.zeros_like(s), s, law, 1)[1]
    K = law.K_fun(alpha)
    G = law.G_fun(alpha)
    sph = K * _secant_scalar(fa, dfa, t1, t0) + law.K1 * _secant_scalar(fc, dfc, t1, t0)
    dev = G * _secant_scalar(fb, dfb, s1, s0)
    return sph[:, None] * np.array([1.0, 1.0, 0.0]) + dev[:, None] * 0.5 * (ds1 + ds0)


def _dg_internal_force(mesh, e1, e0, alpha, law, evaluation):
    ap, w = asm.alpha_points(mesh, alpha, evaluation)
    S = sum(w[q] * discrete_gradient_stress(e1, e0, ap[:, q], law) for q in range(len(w)))
    return asm.internal_force(mesh, S)


def _tangent_operator(mesh, e, alpha, law, evaluation):
    ap, w = asm.alpha_points(mesh, alpha, evaluation)
    T = sum(w[q] * tangent_voigt(e, ap[:, q], law) for q in range(len(w)))
    # keep the Newton matrix positive definite
    vals, vecs = np.linalg.eigh(T)
    T = np.einsum("eij,ej,ekj->eik", vecs, np.maximum(vals, 0.0), vecs)
    return asm.assemble_voigt_operator(mesh, T)


# --------------------------------------------------------------------------
# staggered


def _mechanics_cn(state, mesh, law, cfg, F):
    """Crank-Nicolson displacement increment at frozen ``alpha^{k-1}``."""
    tau = cfg.tau
    M = asm.assemble_mass(mesh, law.rho, cfg.mass_lumped)
    KD = asm.assemble_viscosity(mesh, state.alpha, law, cfg.alpha_quadrature)
    free = mesh.free_dofs
    base = 2.0 / tau**2 * M + KD / tau
    const = F + 2.0 / tau * (M @ state.v)
    if law.is_quadratic:
        KC = asm.assemble_stiffness(mesh, state.alpha, law, cfg.alpha_quadrature)
        du = solve_spd(base + 0.5 * KC, const - KC @ state.u, free, cfg)
        return du, KD
    e0 = asm.element_strains(mesh, state.u)
    du = np.zeros_like(state.u)
    scale = max(np.linalg.norm(const[free]), np.linalg.norm(_dg_internal_force(mesh, e0, e0, state.alpha, law, cfg.alpha_quadrature)[free]), 1e-300)
    res_norm = np.inf
    for _ in range(cfg.max_inner_iters):
        e1 = asm.element_strains(mesh, state.u + du)
        R = base @ du + _dg_internal_force(mesh, e1, e0, state.alpha, law, cfg.alpha_quadrature) - const
        res_norm = np.linalg.norm(R[free]) / scale
        if res_norm <= cfg.newton_tol:
            return du, KD
        J = base + 0.5 * _tangent_operator(mesh, 0.5 * (e1 + e0), state.alpha, law, cfg.alpha_quadrature)
        du = du - solve_spd(J, R, free, cfg)
    raise RuntimeError(f"mechanical Newton iteration did not converge: residual {res_norm:.3e}")


def step_staggered(state: SimState, mesh, law: MaterialLaw, cfg: SchemeConfig,
                   loading=None) -> SimState:
    """One step of the staggered scheme (mechanics, then damage).

    Returns a new state; ``state`` is not modified.
    """
    tau = cfg.tau
    F = _loads(mesh, loading, state.t, state.t + tau)
    du, KD = _mechanics_cn(state, mesh, law, cfg, F)
    u = state.u + du
    v = 2.0 * du / tau - state.v
    v[mesh.constrained_dofs] = 0.0
    sol = damage_vi.solve_damage(state, u, mesh, law, cfg, "staggered")
    alpha = sol.alpha_new
    new = SimState(state.t + tau, u, v, alpha, None, None, state.ledger, state.step + 1)
    return _finish(
        state, new, mesh, law, cfg,
        visc=float(du @ (KD @ du)) / tau,
        work=float(F @ du),
        dmg=damage_vi.damage_dissipation(mesh, law, alpha, state.alpha, tau, sol.multiplier),
    )


# --------------------------------------------------------------------------
# monolithic


def incremental_potential(u_trial, alpha_trial, state: SimState, mesh, law: MaterialLaw,
                          cfg: SchemeConfig, loading=None) -> float:
    """Per-step potential whose critical points define the monolithic step.

    ``rho |(u - u_old)/tau - v_old|^2`` (inertia) + stored energy at
    ``(u, alpha)`` + ``tau zeta((alpha - alpha_old)/tau)`` +
    ``1/(2 tau) D(alpha_old) e(u - u_old):e(u - u_old)`` minus the work of
    the averaged loads on ``u - u_old``.  Returns ``inf`` outside the
    admissible set.
    """
    u = np.asarray(u_trial, dtype=float)
    a = np.asarray(alpha_trial, dtype=float)
    tau = cfg.tau
    if np.any(a < 0) or np.any(a > 1):
        return np.inf
    if law.regime == "unidirectional" and np.any(a > state.alpha):
        return np.inf
    cd = mesh.constrained_dofs
    if cd.size and np.any(u[cd] != state.u[cd]):
        return np.inf
    du = u - state.u
    M = asm.assemble_mass(mesh, law.rho, cfg.mass_lumped)
    w = du / tau - state.v
    inertia = float(w @ (M @ w))
    KD = asm.assemble_viscosity(mesh, state.alpha, law, cfg.alpha_quadrature)
    visc = 0.5 / tau * float(du @ (KD @ du))
    trial = SimState(state.t, u, np.zeros_like(u), a, state.pi, None, EnergyLedger())
    en = energy_breakdown(trial, mesh, law, None, cfg.mass_lumped, cfg.alpha_quadrature)
    m = asm.node_weights(mesh)
    da = a - state.alpha
    diss = float(m @ (law.gc_zeta * np.abs(da) + law.nu_visc * da**2 / tau))
    F = _loads(mesh, loading, state.t, state.t + tau)
    return inertia + en.stored_elastic + en.stored_damage + diss + visc - float(F @ du)


def _u_subproblem(state, mesh, law, cfg, alpha, F, M, KD, du0):
    """Minimise the potential in ``u`` at fixed ``alpha``; returns ``du``."""
    tau = cfg.tau
    free = mesh.free_dofs
    base = 2.0 / tau**2 * M + KD / tau
    const = F + 2.0 / tau * (M @ state.v)
    if law.is_quadratic:
        KC = asm.assemble_stiffness(mesh, alpha, law, cfg.alpha_quadrature)
        return solve_spd(base + KC, const - KC @ state.u, free, cfg)
    du = du0.copy()

    def energy(d):
        e = asm.element_strains(mesh, state.u + d)
        ap, w = asm.alpha_points(mesh, alpha, cfg.alpha_quadrature)
        W = sum(w[q] * energy_density_voigt(e, ap[:, q], law) for q in range(len(w)))
        return 0.5 * d @ (base @ d) + float(mesh.areas @ W) - const @ d

    def grad(d):
        e = asm.element_strains(mesh, state.u + d)
        ap, w = asm.alpha_points(mesh, alpha, cfg.alpha_quadrature)
        S = sum(w[q] * stress_voigt(e, ap[:, q], law) for q in range(len(w)))
        g = base @ d + asm.internal_force(mesh, S) - const
        g[mesh.constrained_dofs] = 0.0
        return g

    scale = max(np.linalg.norm(const[free]), 1e-300)
    f = energy(du)
    gnorm = np.inf
    for _ in range(cfg.max_inner_iters):
        g = grad(du)
        gnorm_new = np.linalg.norm(g[free])
        if gnorm_new <= cfg.newton_tol * scale:
            break
        if gnorm_new >= 0.5 * gnorm and gnorm_new <= 1e-6 * scale:
            # stagnation at the level where energy differences are round-off
            break
        gnorm = gnorm_new
        e = asm.element_strains(mesh, state.u + du)
        J = base + _tangent_operator(mesh, e, alpha, law, cfg.alpha_quadrature)
        d = -solve_spd(J, g, free, cfg)
        s = 1.0
        while s > 1e-10:
            fs = energy(du + s * d)
            if fs <= f + 1e-4 * s * float(g @ d):
                break
            s *= 0.5
        else:
            break
        du, f = du + s * d, fs
    return du


def _u_residual(state, mesh, law, cfg, alpha, du, F, M, KD):
    tau = cfg.tau
    base = 2.0 / tau**2 * M + KD / tau
    const = F + 2.0 / tau * (M @ state.v)
    e = asm.element_strains(mesh, state.u + du)
    ap, w = asm.alpha_points(mesh, alpha, cfg.alpha_quadrature)
    S = sum(w[q] * stress_voigt(e, ap[:, q], law) for q in range(len(w)))
    fint = asm.internal_force(mesh, S)
    free = mesh.free_dofs
    g = (base @ du + fint - const)[free]
    scale = max(np.linalg.norm(const[free]), np.linalg.norm(fint[free]), np.linalg.norm((base @ du)[free]))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(g) / scale)


def step_monolithic(state: SimState, mesh, law: MaterialLaw, cfg: SchemeConfig,
                    loading=None, history: list | None = None) -> SimState:
    """One monolithic step by alternating minimisation.

    Parameters
    ----------
    history : list, optional
        If given, receives the potential value after every half-step
        (starting with the value at the previous state).

    Raises
    ------
    RuntimeError
        When ``cfg.max_inner_iters`` is exceeded; the message carries the
        last combined residual.
    """
    tau = cfg.tau
    F = _loads(mesh, loading, state.t, state.t + tau)
    M = asm.assemble_mass(mesh, law.rho, cfg.mass_lumped)
    KD = asm.assemble_viscosity(mesh, state.alpha, law, cfg.alpha_quadrature)
    alpha = state.alpha.copy()
    du = np.zeros_like(state.u)
    if history is not None:
        history.append(incremental_potential(state.u, alpha, state, mesh, law, cfg, loading))
    res = np.inf
    for it in range(1, cfg.max_inner_iters + 1):
        du = _u_subproblem(state, mesh, law, cfg, alpha, F, M, KD, du)
        if history is not None:
            history.append(incremental_potential(state.u + du, alpha, state, mesh, law, cfg, loading))
        sol = damage_vi.solve_damage(state, state.u + du, mesh, law, cfg, "monolithic")
        change = float(np.max(np.abs(sol.alpha_new - alpha))) if alpha.size else 0.0
        alpha = sol.alpha_new
        if history is not None:
            history.append(incremental_potential(state.u + du, alpha, state, mesh, law, cfg, loading))
        res = max(_u_residual(state, mesh, law, cfg, alpha, du, F, M, KD), sol.residual)
        if res <= cfg.newton_tol or change == 0.0:
            break
    else:
        raise RuntimeError(f"monolithic inner loop did not converge: residual {res:.3e}")
    u = state.u + du
    v = 2.0 * du / tau - state.v
    v[mesh.constrained_dofs] = 0.0
    new = SimState(state.t + tau, u, v, alpha, None, None, state.ledger, state.step + 1)
    new.__dict__["inner_iterations"] = it
    m = asm.node_weights(mesh)
    da = alpha - state.alpha
    dmg = float(m @ (law.gc_zeta * np.abs(da) + 2.0 * law.nu_visc * da**2 / tau))
    dmg += float(sol.multiplier @ da)
    return _finish(state, new, mesh, law, cfg, visc=float(du @ (KD @ du)) / tau,
                   work=float(F @ du), dmg=dmg)


# --------------------------------------------------------------------------
# explicit


def step_explicit(state: SimState, mesh, law: MaterialLaw, cfg: SchemeConfig,
                  loading=None) -> SimState:
    """Velocity/proto-stress step with lumped mass.

    1. ``varsigma^k = varsigma^{k-1} + tau C1 e(v^{k-1})`` (and
       ``u^k = u^{k-1} + tau v^{k-1}``, so ``varsigma^k = C1 e(u^k)``);
    2. damage with drive ``1/2 g*(alpha^k, alpha^{k-1}) C1^{-1} varsigma:varsigma``;
    3. ``M_L (v^k - v^{k-1}) / tau = F^k - div-form of g(alpha^k) varsigma^k``.

    Tractions enter through the averaged load vector ``F^k``.
    """
    if state.varsigma is None:
        raise ValueError("explicit scheme needs the proto-stress; initialise varsigma0 = C1 e(u0)")
    if np.any(law.D0 != 0) or law.chi != 0:
        raise ValueError("the explicit scheme has no Kelvin-Voigt viscosity; set D0 = 0 and chi = 0")
    tau = cfg.tau
    g, K1, G1 = law.proportional_degradation()
    C1 = iso_voigt(K1, G1)
    u = state.u + tau * state.v
    varsigma = state.varsigma + asm.element_strains(mesh, state.v) @ C1.T * tau
    mid = SimState(state.t, u, state.v, state.alpha, None, varsigma, state.ledger, state.step)
    sol = damage_vi.solve_damage(mid, None, mesh, law, cfg, "explicit")
    alpha = sol.alpha_new
    ap, w = asm.alpha_points(mesh, alpha, cfg.alpha_quadrature)
    sigma = (g(ap) @ w)[:, None] * varsigma
    F = _loads(mesh, loading, state.t, state.t + tau)
    mL = np.repeat(law.rho * asm.node_weights(mesh), 2)
    v = state.v + tau * (F - asm.internal_force(mesh, sigma)) / mL
    v[mesh.constrained_dofs] = 0.0
    new = SimState(state.t + tau, u, v, alpha, None, varsigma, state.ledger, state.step + 1)
    return _finish(
        state, new, mesh, law, cfg,
        work=0.5 * tau * float(F @ (state.v + v)),
        dmg=damage_vi.damage_dissipation(mesh, law, alpha, state.alpha, tau, sol.multiplier),
    )


# --------------------------------------------------------------------------
# stability bound and reference integrator

# h = CFL_H_FACTOR * (minimal inradius); calibrated so that the bound lies
# between 1/2 and 1 times the exact leapfrog limit 2/omega_max on
# structured meshes (see tests/test_schemes.py::TestCFL).
CFL_H_FACTOR = 2.0


def cfl_timestep(mesh, law: MaterialLaw) -> float:
    """CFL bound ``h_min / c_P`` for the explicit scheme.

    ``h_min`` is twice the smallest element inradius and ``c_P =
    sqrt((K(1) + G(1)) / rho)`` the undamaged P-wave speed (2-D moduli).
    """
    h = CFL_H_FACTOR * float(mesh.inradii.min())
    return h / law.p_wave_speed()


def leapfrog_step(u_prev, u, mesh, law: MaterialLaw, tau: float, F=None):
    """Displacement leapfrog ``M_L (u+ - 2u + u-)/tau^2 + K u = F`` at
    ``alpha = 1``; reference integrator for frozen-damage tests."""
    K = asm.assemble_stiffness(mesh, np.ones(mesh.n_nodes), law)
    mL = np.repeat(law.rho * asm.node_weights(mesh), 2)
    rhs = -(K @ u) if F is None else F - K @ u
    out = 2.0 * u - u_prev + tau**2 * rhs / mL
    out[mesh.constrained_dofs] = u[mesh.constrained_dofs]
    return out
