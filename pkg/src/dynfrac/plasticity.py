"""Damage coupled with deviatoric plasticity (Jeffreys-type rheology).

Plastic strain ``pi`` is trace-free and piecewise constant; it is stored as
tensor components ``[p11, p22, p12]`` with Frobenius norm
``sqrt(p11^2 + p22^2 + 2 p12^2)``.  The elastic strain is ``e(u) - pi`` and
the flow rule per time step reads

    sigma_yld(alpha^{k-1}) Dir(dpi) + H pi^{k-1/2} + G_nh dpi / tau  in  dev sigma,

where ``sigma`` is the Kelvin-Voigt stress ``D(alpha^{k-1}) (de - dpi)/tau
+ C(alpha^{k-1}) (e - pi)^{k-1/2}``.  With isotropic ``C`` and ``D`` the
inclusion is solved in closed form by a soft threshold of the trial
deviatoric stress.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from . import assembly as asm
from . import damage_vi
from .energy_audit import pi_norm2, pi_voigt
from .material import MaterialLaw, effective_fracture_stress, iso_voigt
from .schemes import _finish, _loads, solve_spd
from .state import SchemeConfig, SimState

# Voigt engineering strain -> deviatoric tensor components
DEV_OF_VOIGT = np.array([[0.5, -0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, 0.5]])
NORM_W = np.array([1.0, 1.0, 2.0])


@dataclass(frozen=True, eq=False)
class PlasticLaw:
    """Plasticity parameters.

    Parameters
    ----------
    H : float
        Hardening modulus (Pa).
    G_nh : float
        Norton-Hoff viscosity (Pa s).
    sigma_yld_fun : Polynomial
        Yield stress as a function of ``alpha`` (Pa).
    kappa1 : float
        Plastic-gradient coefficient; only 0 is supported.
    kappa2 : float or None
        Damage-gradient coefficient, informational (the material law
        carries the value actually used).
    """

    H: float
    G_nh: float = 0.0
    sigma_yld_fun: Polynomial = field(default_factory=lambda: Polynomial([0.0]))
    kappa1: float = 0.0
    kappa2: float | None = None

    def __post_init__(self):
        f = self.sigma_yld_fun
        if not isinstance(f, Polynomial):
            f = Polynomial(np.atleast_1d(np.asarray(f, dtype=float)))
            object.__setattr__(self, "sigma_yld_fun", f)
        errors = []
        if self.H < 0 or self.G_nh < 0:
            errors.append("H and G_nh must be non-negative")
        if not (self.H > 0 or self.G_nh > 0):
            errors.append("H > 0 or G_nh > 0 is required")
        if np.min(f(np.linspace(0, 1, 101))) < 0:
            errors.append("sigma_yld must be non-negative on [0, 1]")
        if self.kappa1 != 0:
            errors.append("kappa1 > 0 is not supported (plastic strain is element-wise constant)")
        if errors:
            raise ValueError("invalid plastic law: " + "; ".join(errors))

    @classmethod
    def constant(cls, H, G_nh, sigma_yld, **kw) -> "PlasticLaw":
        return cls(H, G_nh, Polynomial([float(sigma_yld)]), **kw)

    def sigma_yld(self, alpha):
        return self.sigma_yld_fun(alpha)


def _dev_norm(p):
    return np.sqrt(np.maximum(pi_norm2(p), 0.0))


def _to_comps(t):
    t = np.asarray(t, dtype=float)
    return np.stack([t[..., 0, 0], t[..., 1, 1], 0.5 * (t[..., 0, 1] + t[..., 1, 0])], axis=-1)


def _to_tensor(c):
    out = np.empty(c.shape[:-1] + (2, 2))
    out[..., 0, 0] = c[..., 0]
    out[..., 1, 1] = c[..., 1]
    out[..., 0, 1] = out[..., 1, 0] = c[..., 2]
    return out


def soft_threshold(r, sigma_y, a):
    """``dpi = max(|r| - sigma_y, 0) / a * r / |r|`` on component arrays."""
    nr = _dev_norm(r)
    over = np.maximum(nr - sigma_y, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(over > 0, over / (a * np.where(nr > 0, nr, 1.0)), 0.0)
    if np.any((over > 0) & ~(a > 0)):
        raise RuntimeError("return map has no solution: zero hardening and viscosity")
    return fac[..., None] * r


def return_map(trial_dev_stress, pi_old, plaw: PlasticLaw, tau: float, alpha_old,
               shear: float = 0.0):
    """Plastic strain after one step of the discrete flow rule.

    Parameters
    ----------
    trial_dev_stress : array (..., 2, 2)
        Deviatoric stress evaluated with ``dpi = 0``.
    pi_old : array (..., 2, 2)
    plaw : PlasticLaw
    tau : float
    alpha_old : float or array
        Damage at the previous level (sets the yield stress).
    shear : float or array
        Coefficient of ``-dpi`` in the deviatoric stress, ``2 G_D / tau +
        G_C`` for Kelvin-Voigt moduli ``G_D`` (viscous) and ``G_C``
        (elastic).

    Returns
    -------
    ndarray (..., 2, 2)
        ``pi^k``.
    """
    trial = _to_comps(trial_dev_stress)
    if np.any(np.abs(trial[..., 0] + trial[..., 1]) > 1e-12 * max(1.0, float(np.abs(trial).max()))):
        raise ValueError("trial stress must be trace-free")
    p0 = _to_comps(pi_old)
    a = 0.5 * plaw.H + plaw.G_nh / tau + np.asarray(shear, dtype=float)
    r = trial - plaw.H * p0
    dpi = soft_threshold(r, plaw.sigma_yld(alpha_old), a)
    return _to_tensor(p0 + dpi)


def return_map_residual(trial_dev_stress, pi_old, pi_new, plaw: PlasticLaw, tau, alpha_old,
                        shear=0.0):
    """Distance of ``pi_new`` from satisfying the discrete inclusion."""
    trial = _to_comps(trial_dev_stress)
    p0 = _to_comps(pi_old)
    p1 = _to_comps(pi_new)
    d = p1 - p0
    rest = trial - plaw.H * 0.5 * (p0 + p1) - (plaw.G_nh / tau + np.asarray(shear)) * d
    nd = _dev_norm(d)
    sy = plaw.sigma_yld(alpha_old)
    with np.errstate(invalid="ignore", divide="ignore"):
        active = rest - sy * d / np.where(nd > 0, nd, 1.0)[..., None]
    res = np.where(nd > 0, _dev_norm(active), np.maximum(_dev_norm(rest) - sy, 0.0))
    return res


def isotropic_moduli(D):
    """``(K, G)`` of a Voigt tensor, raising if it is not isotropic."""
    K = 0.5 * (D[0, 0] + D[0, 1])
    G = D[2, 2]
    if not np.allclose(D, iso_voigt(K, G), rtol=1e-12, atol=1e-14 * max(1.0, np.abs(D).max())):
        raise ValueError("plasticity requires an isotropic viscosity tensor D0")
    return K, G


def element_update(eps_new, eps_old, pi_old, KC, GC, KD, GD, sigma_y, plaw: PlasticLaw,
                   tau: float, tangent: bool = False):
    """Stress, plastic increment and (optionally) tangent per element.

    All strain-like inputs are engineering Voigt ``(M, 3)``; ``pi_old`` is in
    tensor components.  Moduli are per-element arrays.
    """
    de = eps_new - eps_old
    emid = eps_old + 0.5 * de
    p0v = pi_voigt(pi_old)
    s = 2.0 * GD / tau + GC
    a = 0.5 * plaw.H + plaw.G_nh / tau + s
    r = 2.0 * GD[:, None] / tau * (de @ DEV_OF_VOIGT.T) + 2.0 * GC[:, None] * (
        emid @ DEV_OF_VOIGT.T - pi_old
    ) - plaw.H * pi_old
    dpi = soft_threshold(r, sigma_y, a)
    dpv = pi_voigt(dpi)
    Dm = iso_voigt(KD, GD)
    Cm = iso_voigt(KC, GC)
    sig = np.einsum("eij,ej->ei", Dm, de - dpv) / tau + np.einsum(
        "eij,ej->ei", Cm, emid - p0v - 0.5 * dpv
    )
    if not tangent:
        return sig, dpi
    T = Dm / tau + 0.5 * Cm
    nr = _dev_norm(r)
    active = nr > sigma_y
    if np.any(active):
        idx = np.flatnonzero(active)
        n = r[idx] / nr[idx, None]
        q = (sigma_y if np.ndim(sigma_y) == 0 else sigma_y[idx]) / nr[idx]
        Tr = (1.0 - q)[:, None, None] * np.eye(3) + q[:, None, None] * (
            n[:, :, None] * (n * NORM_W)[:, None, :]
        )
        Tr = Tr / a[idx, None, None]
        T[idx] -= (s[idx] ** 2)[:, None, None] * np.einsum("eij,jk->eik", Tr, DEV_OF_VOIGT)
    return sig, dpi, T


def _moduli(mesh, alpha, law, cfg):
    KC, GC = asm.element_moduli(mesh, alpha, law, cfg.alpha_quadrature)
    KD0, GD0 = isotropic_moduli(law.D0)
    return KC, GC, KD0 + law.chi * KC, GD0 + law.chi * GC


def step_staggered_plastic(state: SimState, mesh, law: MaterialLaw, plaw: PlasticLaw,
                           cfg: SchemeConfig, loading=None) -> SimState:
    """Staggered step with plasticity.

    ``(u, v, pi)`` are advanced together (Newton on ``u`` with the return map
    condensed element by element) at ``alpha^{k-1}``; damage follows with the
    elastic strain ``e(u^k) - pi^k`` as driving strain.
    """
    if not law.is_quadratic:
        raise ValueError("plasticity is implemented for quadratic elastic laws")
    if state.pi is None:
        raise ValueError("state carries no plastic strain")
    tau = cfg.tau
    F = _loads(mesh, loading, state.t, state.t + tau)
    M = asm.assemble_mass(mesh, law.rho, cfg.mass_lumped)
    KC, GC, KD, GD = _moduli(mesh, state.alpha, law, cfg)
    sy = plaw.sigma_yld(asm.alpha_points(mesh, state.alpha, cfg.alpha_quadrature)[0].mean(axis=1))
    eps_old = asm.element_strains(mesh, state.u)
    free = mesh.free_dofs
    inertia = 2.0 / tau**2 * M
    const = F + 2.0 / tau * (M @ state.v)
    du = np.zeros_like(state.u)
    res = np.inf
    for _ in range(cfg.max_inner_iters):
        eps = asm.element_strains(mesh, state.u + du)
        sig, dpi, T = element_update(eps, eps_old, state.pi, KC, GC, KD, GD, sy, plaw, tau, True)
        fint = asm.internal_force(mesh, sig)
        R = inertia @ du + fint - const
        scale = max(np.linalg.norm(const[free]), np.linalg.norm(fint[free]), 1e-300)
        res = np.linalg.norm(R[free]) / scale
        if res <= cfg.newton_tol:
            break
        J = inertia + asm.assemble_voigt_operator(mesh, T)
        du = du - solve_spd(J, R, free, cfg)
    else:
        raise RuntimeError(f"plastic Newton iteration did not converge: residual {res:.3e}")
    u = state.u + du
    v = 2.0 * du / tau - state.v
    v[mesh.constrained_dofs] = 0.0
    pi = state.pi + dpi
    pi[:, 1] = -pi[:, 0]  # exact trace-free storage
    strains_el = asm.element_strains(mesh, u) - pi_voigt(pi)
    sol = damage_vi.solve_damage(state, u, mesh, law, cfg, "staggered", strains=strains_el)
    de_el = (eps - eps_old) - pi_voigt(dpi)
    Dm = iso_voigt(KD, GD)
    visc = float(np.sum(mesh.areas * np.einsum("ei,eij,ej->e", de_el, Dm, de_el))) / tau
    ndpi = _dev_norm(dpi)
    plast = float(np.sum(mesh.areas * (sy * ndpi + plaw.G_nh * ndpi**2 / tau)))
    new = SimState(state.t + tau, u, v, sol.alpha_new, pi, None, state.ledger, state.step + 1)
    return _finish(
        state, new, mesh, law, cfg, plaw,
        visc=visc, work=float(F @ du), plast=plast,
        dmg=damage_vi.damage_dissipation(mesh, law, sol.alpha_new, state.alpha, tau, sol.multiplier),
    )


def mode_ii_extra_dissipation(plaw: PlasticLaw, law: MaterialLaw, alpha0: float = 1.0) -> float:
    """Extra energy dissipated plastically before shear rupture.

    ``sigma_yld (sigma_II - sigma_yld) / H`` with ``sigma_II`` the Mode II
    effective fracture stress of ``law`` (``2 sqrt(G gc)`` for ``G(alpha) =
    alpha G``), valid for ``sigma_II / 2 < sigma_yld <= sigma_II``.
    """
    s_ii = effective_fracture_stress("II", alpha0, law)
    sy = float(plaw.sigma_yld(alpha0))
    if not (0.5 * s_ii < sy <= s_ii * (1 + 1e-12)):
        raise ValueError(
            f"tuning inequality violated: need {0.5 * s_ii:.6g} < sigma_yld <= {s_ii:.6g}, got {sy:.6g}"
        )
    if not plaw.H > 0:
        raise ValueError("H must be positive")
    return max(sy * (s_ii - sy) / plaw.H, 0.0)
