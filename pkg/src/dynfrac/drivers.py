"""Homogeneous (0-d) material-point drivers.

These integrate the same discrete flow rules as the field schemes for a
single spatially constant state, without inertia and without the gradient
term.  They serve as oracles for damage onset and for the energy dissipated
by plastic shear rupture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .damage_vi import DamageObjective, PolyTerm, minimize_damage
from .material import MaterialLaw, invariant_functions, iso_voigt, strain_invariants
from .plasticity import PlasticLaw, _dev_norm, element_update, isotropic_moduli


def _alpha_step(law: MaterialLaw, strain, alpha_old: float, tau: float) -> float:
    """Secant damage update of one material point (unit volume)."""
    t, s, _ = strain_invariants(np.atleast_2d(strain))
    a, b, _ = invariant_functions(t, s, law)
    S = sp.identity(1, format="csr")
    old = np.array([alpha_old])
    terms = [
        PolyTerm(S, law.K_fun, a, old),
        PolyTerm(S, law.G_fun, b, old),
        PolyTerm(S, law.phi_fun, -np.ones(1), old),
    ]
    terms = [tm for tm in terms if tm.degree >= 1]
    H = sp.csr_matrix([[2.0 * law.nu_visc / tau]])
    c = np.array([2.0 * law.nu_visc / tau * alpha_old + law.gc_zeta])
    upper = old.copy() if law.regime == "unidirectional" else np.ones(1)
    obj = DamageObjective(H, c, np.zeros(1), upper, np.zeros(1, dtype=bool), terms, None, 1e-14)
    return float(minimize_damage(obj, old).alpha_new[0])


def shear_onset_sweep(law: MaterialLaw, rate: float, tau: float, alpha0: float = 1.0,
                      max_stress: float | None = None, drop: float = 1e-8) -> float:
    """Deviatoric stress magnitude at which damage first grows.

    A pure-shear stress ``|dev sigma| = rate * t`` is applied
    quasi-statically: at each step the strain follows from the stress at
    ``alpha^{k-1}`` and damage is then updated.  Returns the stress of the
    first step with ``alpha^k < alpha^{k-1} - drop``.
    """
    if max_stress is None:
        max_stress = 10.0 * np.sqrt(4.0 * law.gc * max(law.G1, 1e-300) + 1.0)
    alpha = alpha0
    n_steps = int(np.ceil(max_stress / (rate * tau)))
    for k in range(1, n_steps + 1):
        S = rate * k * tau
        G = float(law.G_fun(alpha))
        if G <= 0:
            raise RuntimeError("shear modulus vanished before onset")
        # |dev e| = S / (2 G); shear strain direction e12 only
        e12 = S / (2.0 * G) / np.sqrt(2.0)
        strain = np.array([0.0, 0.0, 2.0 * e12])
        new = _alpha_step(law, strain, alpha, tau)
        if new < alpha - drop:
            return S
        alpha = new
    raise RuntimeError("no damage onset within the stress range")


@dataclass
class RuptureRecord:
    """Cumulative dissipation of a 0-d shear rupture (J/m^3)."""

    plastic: float
    damage: float
    viscous: float
    pi_final: float
    steps: int

    @property
    def total(self) -> float:
        return self.plastic + self.damage + self.viscous


def plastic_shear_rupture(law: MaterialLaw, plaw: PlasticLaw, rate: float, tau: float,
                          alpha_end: float = 0.0, max_strain: float | None = None) -> RuptureRecord:
    """Strain-controlled pure shear until the point is fully damaged.

    The shear strain ``e12 = rate * t`` is prescribed.  Each step applies
    the plastic return map at ``alpha^{k-1}`` and then the damage update
    driven by the elastic strain, as in the staggered field scheme.
    """
    KD0, GD0 = isotropic_moduli(law.D0)
    alpha = 1.0
    pi = np.zeros((1, 3))
    eps_old = np.zeros((1, 3))
    rec = RuptureRecord(0.0, 0.0, 0.0, 0.0, 0)
    if max_strain is None:
        max_strain = 100.0 * np.sqrt(max(law.gc, 1e-300) / max(law.G1, 1e-300)) + 1.0
    n_steps = int(np.ceil(max_strain / (rate * tau)))
    for k in range(1, n_steps + 1):
        eps = np.array([[0.0, 0.0, 2.0 * rate * k * tau]])
        KC = np.array([float(law.K_fun(alpha))])
        GC = np.array([float(law.G_fun(alpha))])
        KD = KD0 + law.chi * KC
        GD = GD0 + law.chi * GC
        sy = float(plaw.sigma_yld(alpha))
        _, dpi = element_update(eps, eps_old, pi, KC, GC, KD, GD, sy, plaw, tau)
        ndpi = float(_dev_norm(dpi)[0])
        rec.plastic += sy * ndpi + plaw.G_nh * ndpi**2 / tau
        de_el = (eps - eps_old)[0] - np.array([dpi[0, 0], dpi[0, 1], 2 * dpi[0, 2]])
        rec.viscous += float(de_el @ iso_voigt(KD[0], GD[0]) @ de_el) / tau
        pi = pi + dpi
        e_el = eps[0] - np.array([pi[0, 0], pi[0, 1], 2 * pi[0, 2]])
        new = _alpha_step(law, e_el, alpha, tau)
        da = new - alpha
        rec.damage += law.gc_zeta * abs(da) + 2.0 * law.nu_visc * da**2 / tau
        alpha = new
        eps_old = eps
        rec.steps = k
        if alpha <= alpha_end:
            rec.pi_final = float(_dev_norm(pi)[0])
            return rec
    raise RuntimeError("point did not rupture within the strain range")
