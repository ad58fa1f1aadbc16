"""Constitutive laws: stored energy, stress, damage drive, dissipation.

Strains are symmetric 2x2 tensors at the public API.  Internally the
assembly routines work with engineering Voigt vectors ``[e11, e22, 2 e12]``
and stress vectors ``[s11, s22, s12]``, so that ``s . e`` is the tensor
contraction.  The isotropic tensor with bulk modulus ``K`` and shear
modulus ``G`` (2-D moduli, ``d = 2``) then reads

    C = [[K+G, K-G, 0], [K-G, K+G, 0], [0, 0, G]],

which gives ``1/2 C e:e = K/2 (tr e)^2 + G |dev e|^2``.

Every law is written in the common form

    phi(e, alpha) = K(alpha) a(e) + G(alpha) b(e) + K(1) c(e) - phi_d(alpha)

with scalar invariants ``a``, ``b``, ``c``:

* quadratic laws: ``a = (tr e)^2 / 2``, ``b = |dev e|^2``, ``c = 0``;
* mode-sensitive law: ``a = (tr e)_+^2 / (2 sqrt(1 + eps (tr e)^2))``,
  ``b = s / sqrt(1 + eps s)`` with ``s = |dev e|^2``, ``c = (tr e)_-^2 / 2``.

``K``, ``G`` and ``phi_d`` are polynomials in ``alpha`` so that derivatives
and difference quotients are exact.  ``alpha = 1`` is the undamaged state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

LAW_KINDS = ("linear-damage", "mode-sensitive", "at2-phasefield", "at1-phasefield")
REGIMES = ("unidirectional", "healing")
DIM = 2
ALPHA_TOL = 1e-9

ONES = np.array([1.0, 1.0, 0.0])
# Hessian of |dev e|^2 in engineering Voigt components
DEV_HESS = np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def iso_voigt(K, G):
    """Isotropic 2-D tensor(s) in Voigt form.

    ``K`` and ``G`` may be arrays; the result has shape ``K.shape + (3, 3)``.
    """
    K = np.asarray(K, dtype=float)
    G = np.asarray(G, dtype=float)
    out = np.zeros(np.broadcast(K, G).shape + (3, 3))
    out[..., 0, 0] = out[..., 1, 1] = K + G
    out[..., 0, 1] = out[..., 1, 0] = K - G
    out[..., 2, 2] = G
    return out


def tensor_to_voigt(e):
    e = np.asarray(e, dtype=float)
    return np.stack([e[..., 0, 0], e[..., 1, 1], e[..., 0, 1] + e[..., 1, 0]], axis=-1)


def stress_to_tensor(s):
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape[:-1] + (2, 2))
    out[..., 0, 0] = s[..., 0]
    out[..., 1, 1] = s[..., 1]
    out[..., 0, 1] = out[..., 1, 0] = s[..., 2]
    return out


def voigt_to_tensor(ev):
    """Engineering Voigt strain to 2x2 tensor."""
    ev = np.asarray(ev, dtype=float)
    out = np.empty(ev.shape[:-1] + (2, 2))
    out[..., 0, 0] = ev[..., 0]
    out[..., 1, 1] = ev[..., 1]
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * ev[..., 2]
    return out


# --------------------------------------------------------------------------
# polynomial helpers


def as_poly(p) -> Polynomial:
    if isinstance(p, Polynomial):
        return Polynomial(p.coef)
    return Polynomial(np.atleast_1d(np.asarray(p, dtype=float)))


def poly_secant(p: Polynomial, a, b):
    """Exact difference quotient ``(p(a) - p(b)) / (a - b)``.

    Uses ``(a^n - b^n)/(a - b) = sum_j a^j b^(n-1-j)``, so no division is
    performed and ``a == b`` returns ``p'(a)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = p.coef
    out = np.zeros(np.broadcast(a, b).shape)
    for n in range(1, len(c)):
        if c[n] == 0.0:
            continue
        s = np.zeros_like(out)
        for j in range(n):
            s = s + a**j * b ** (n - 1 - j)
        out = out + c[n] * s
    return out


def poly_secant_antideriv(p: Polynomial, a, b, order: int = 0):
    """Antiderivative in ``a`` of :func:`poly_secant` and its derivatives.

    Returns ``P(a; b)`` (``order=0``), ``dP/da = secant(a, b)`` (1) or
    ``d2P/da2`` (2), with ``P = sum_n c_n sum_j a^(j+1) b^(n-1-j) / (j+1)``.
    For degree <= 2 this is ``c1 a + c2 (a^2/2 + a b)``.
    """
    if order == 1:
        return poly_secant(p, a, b)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = p.coef
    out = np.zeros(np.broadcast(a, b).shape)
    for n in range(1, len(c)):
        if c[n] == 0.0:
            continue
        for j in range(n):
            if order == 0:
                out = out + c[n] * a ** (j + 1) * b ** (n - 1 - j) / (j + 1)
            elif j >= 1:
                out = out + c[n] * j * a ** (j - 1) * b ** (n - 1 - j)
    return out


# --------------------------------------------------------------------------
# law object


@dataclass(frozen=True, eq=False)
class MaterialLaw:
    """Material parameters and constitutive functions (SI units).

    Parameters
    ----------
    rho : float
        Mass density (kg/m^3).
    law_kind : str
        One of ``linear-damage``, ``mode-sensitive``, ``at2-phasefield``,
        ``at1-phasefield``.
    K_fun, G_fun : Polynomial
        Bulk and shear moduli as functions of ``alpha`` (Pa).
    phi_fun : Polynomial
        Damage energy ``phi(alpha)``; it enters the stored energy with a
        minus sign (J/m^3).
    gc : float
        Fracture toughness (J/m^2).  For the phase-field presets it sits in
        the stored energy and the rate potential carries no ``gc`` term.
    kappa : float
        Damage-gradient coefficient.
    eps_reg : float
        Regularisation of the mode-sensitive law.
    eps_pf, eps0 : float or None
        Phase-field width and reference length.
    p_grad : float
        Gradient exponent ``p >= 2``.
    nu_visc : float
        Damage-rate viscosity (Pa s).
    D0 : ndarray (3, 3)
        Residual viscosity in Voigt form (Pa s).
    chi : float
        Relaxation time in ``D(alpha) = D0 + chi C(alpha)`` (s).
    regime : {"unidirectional", "healing"}
    """

    rho: float
    law_kind: str
    K_fun: Polynomial
    G_fun: Polynomial
    phi_fun: Polynomial = field(default_factory=lambda: Polynomial([0.0]))
    gc: float = 0.0
    kappa: float = 1.0
    eps_reg: float = 0.0
    eps_pf: float | None = None
    eps0: float | None = None
    p_grad: float = 2.0
    nu_visc: float = 0.0
    D0: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    chi: float = 0.0
    regime: str = "unidirectional"

    def __post_init__(self):
        for name in ("K_fun", "G_fun", "phi_fun"):
            object.__setattr__(self, name, as_poly(getattr(self, name)))
        D0 = np.array(self.D0, dtype=float).reshape(3, 3)
        D0.setflags(write=False)
        object.__setattr__(self, "D0", D0)
        errors = []
        if self.law_kind not in LAW_KINDS:
            errors.append(f"law_kind must be one of {LAW_KINDS}, got {self.law_kind!r}")
        if self.regime not in REGIMES:
            errors.append(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not self.rho > 0:
            errors.append("rho must be positive")
        if not self.gc >= 0:
            errors.append("gc must be non-negative")
        if not self.kappa > 0:
            errors.append("kappa must be positive")
        if not self.p_grad >= 2:
            errors.append("p_grad must be >= 2")
        if not self.nu_visc >= 0:
            errors.append("nu_visc must be non-negative")
        if not self.chi >= 0:
            errors.append("chi must be non-negative")
        if self.eps_reg < 0:
            errors.append("eps_reg must be non-negative")
        grid = np.linspace(0.0, 1.0, 201)
        for name in ("K_fun", "G_fun"):
            f = getattr(self, name)
            vals, slope = f(grid), f.deriv()(grid)
            scale = max(1.0, float(np.abs(vals).max()))
            if vals.min() < -1e-12 * scale:
                errors.append(f"{name} must be non-negative on [0, 1]")
            if slope.min() < -1e-12 * scale:
                errors.append(f"{name} must be non-decreasing on [0, 1]")
        if not np.allclose(D0, D0.T, rtol=0, atol=1e-12 * max(1.0, np.abs(D0).max())):
            errors.append("D0 must be symmetric")
        elif np.any(D0 != 0) and np.linalg.eigvalsh(D0).min() <= 0:
            # D0 = 0 is the inviscid case used by the explicit scheme
            errors.append("D0 must be positive definite (or identically zero)")
        if self.law_kind == "mode-sensitive" and self.regime == "healing" and self.eps_reg <= 0:
            errors.append("eps_reg > 0 is required for the mode-sensitive law with healing")
        if self.regime == "healing" and self.gc_zeta > 0:
            errors.append("healing regime requires a rate potential without the gc term")
        if errors:
            raise ValueError("invalid material law: " + "; ".join(errors))

    # ---------------------------------------------------------------- helpers
    @property
    def is_phasefield(self) -> bool:
        return self.law_kind in ("at2-phasefield", "at1-phasefield")

    @property
    def is_quadratic(self) -> bool:
        """True when the energy is quadratic in the strain."""
        return self.law_kind != "mode-sensitive"

    @property
    def gc_zeta(self) -> float:
        """Toughness carried by the rate potential ``zeta``."""
        return 0.0 if self.is_phasefield else float(self.gc)

    @property
    def K1(self) -> float:
        return float(self.K_fun(1.0))

    @property
    def G1(self) -> float:
        return float(self.G_fun(1.0))

    def C(self, alpha):
        return iso_voigt(self.K_fun(alpha), self.G_fun(alpha))

    def C_prime(self, alpha):
        return iso_voigt(self.K_fun.deriv()(alpha), self.G_fun.deriv()(alpha))

    def D(self, alpha):
        return self.D0 + self.chi * self.C(alpha)

    def p_wave_speed(self) -> float:
        """Undamaged P-wave speed ``sqrt((K(1) + G(1)) / rho)``."""
        return float(np.sqrt((self.K1 + self.G1) / self.rho))

    def proportional_degradation(self):
        """Return ``(g, K_ref, G_ref)`` with ``K = g K_ref`` and ``G = g G_ref``.

        Needed by the velocity/proto-stress scheme, where ``C(alpha) =
        g(alpha) C1``.  ``g`` is normalised so that ``g(1) = 1`` unless the
        preset defines its own reference tensor.
        """
        if hasattr(self, "_degradation"):
            return self._degradation
        K, G = self.K_fun, self.G_fun
        k1, g1 = self.K1, self.G1
        if k1 <= 0 or g1 <= 0:
            raise ValueError("proportional degradation requires K(1), G(1) > 0")
        gK, gG = K / k1, G / g1
        n = max(len(gK.coef), len(gG.coef))
        cK = np.pad(gK.coef, (0, n - len(gK.coef)))
        cG = np.pad(gG.coef, (0, n - len(gG.coef)))
        if not np.allclose(cK, cG, rtol=1e-12, atol=1e-14):
            raise ValueError("C(alpha) is not of the form g(alpha) C1")
        return Polynomial(cK), k1, g1


def _with_degradation(law: MaterialLaw, g: Polynomial, K_ref: float, G_ref: float) -> MaterialLaw:
    object.__setattr__(law, "_degradation", (g, float(K_ref), float(G_ref)))
    return law


# --------------------------------------------------------------------------
# presets


def _common(kw):
    D0 = kw.pop("D0", None)
    if D0 is None:
        D0 = iso_voigt(kw.pop("D0_K", 0.0), kw.pop("D0_G", 0.0))
    else:
        kw.pop("D0_K", None)
        kw.pop("D0_G", None)
    kw["D0"] = D0
    return kw


def at2_law(K1, G1, gc, eps_pf, eps0=None, rho=1.0, **kw) -> MaterialLaw:
    """Ambrosio-Tortorelli (AT2) phase-field law.

    ``C(alpha) = (eta + alpha^2) C1`` with ``eta = (eps_pf / eps0)^2`` (0 if
    ``eps0`` is None), stored damage energy ``gc (1 - alpha)^2 / (2 eps_pf)``
    and ``kappa = eps_pf gc``.  Extra keywords: ``nu_visc``, ``chi``,
    ``D0`` or ``D0_K``/``D0_G``, ``regime``, ``p_grad``, ``kappa``.
    """
    if not eps_pf > 0:
        raise ValueError("eps_pf must be positive")
    eta = 0.0 if eps0 is None else (eps_pf / eps0) ** 2
    g = Polynomial([eta, 0.0, 1.0])
    kw = _common(kw)
    kw.setdefault("kappa", eps_pf * gc)
    # phi(alpha) = -gc (1 - alpha)^2 / (2 eps)
    phi = -gc / (2.0 * eps_pf) * Polynomial([1.0, -2.0, 1.0])
    law = MaterialLaw(rho=rho, law_kind="at2-phasefield", K_fun=K1 * g, G_fun=G1 * g,
                      phi_fun=phi, gc=gc, eps_pf=eps_pf, eps0=eps0, **kw)
    return _with_degradation(law, g, K1, G1)


def at1_law(K1, G1, gc, eps_pf, eps0=None, rho=1.0, **kw) -> MaterialLaw:
    """AT1 phase-field law.

    Same degradation as :func:`at2_law`; the stored damage energy is linear,
    ``3 gc (1 - alpha) / (8 eps_pf)``, written with ``1 - alpha`` so that
    damaging still means decreasing ``alpha``; ``kappa = 3 gc eps_pf / 4``.
    """
    if not eps_pf > 0:
        raise ValueError("eps_pf must be positive")
    eta = 0.0 if eps0 is None else (eps_pf / eps0) ** 2
    g = Polynomial([eta, 0.0, 1.0])
    kw = _common(kw)
    kw.setdefault("kappa", 0.75 * gc * eps_pf)
    phi = -3.0 * gc / (8.0 * eps_pf) * Polynomial([1.0, -1.0])
    law = MaterialLaw(rho=rho, law_kind="at1-phasefield", K_fun=K1 * g, G_fun=G1 * g,
                      phi_fun=phi, gc=gc, eps_pf=eps_pf, eps0=eps0, **kw)
    return _with_degradation(law, g, K1, G1)


def linear_damage_law(K0, G0, gc, rho=1.0, residual=0.0, phi=(0.0,), **kw) -> MaterialLaw:
    """Quadratic law with ``C(alpha) = (residual + alpha) C1``."""
    g = Polynomial([residual, 1.0])
    kw = _common(kw)
    law = MaterialLaw(rho=rho, law_kind="linear-damage", K_fun=K0 * g, G_fun=G0 * g,
                      phi_fun=as_poly(phi), gc=gc, **kw)
    return _with_degradation(law, g, K0, G0)


def mode_sensitive_law(K_fun, G_fun, gc, eps_reg=0.0, rho=1.0, phi=(0.0,), **kw) -> MaterialLaw:
    """Mode-sensitive law; compression acts through ``K(1)`` only."""
    kw = _common(kw)
    return MaterialLaw(rho=rho, law_kind="mode-sensitive", K_fun=as_poly(K_fun),
                       G_fun=as_poly(G_fun), phi_fun=as_poly(phi), gc=gc,
                       eps_reg=eps_reg, **kw)


# --------------------------------------------------------------------------
# invariants and their derivatives (vectorised over Voigt arrays)


def strain_invariants(ev):
    """Trace, ``|dev e|^2`` and ``d|dev e|^2 / de`` of Voigt strains."""
    ev = np.asarray(ev, dtype=float)
    t = ev[..., 0] + ev[..., 1]
    diff = ev[..., 0] - ev[..., 1]
    s = 0.5 * diff**2 + 0.5 * ev[..., 2] ** 2
    ds = np.stack([diff, -diff, ev[..., 2]], axis=-1)
    return t, s, ds


def invariant_functions(t, s, law: MaterialLaw, order: int = 0):
    """Values (``order=0``), first (1) or second (2) derivatives of a, b, c.

    ``a`` and ``c`` are differentiated in the trace ``t``, ``b`` in
    ``s = |dev e|^2``.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if law.is_quadratic:
        if order == 0:
            return 0.5 * t**2, s.copy(), np.zeros_like(t)
        if order == 1:
            return t.copy(), np.ones_like(s), np.zeros_like(t)
        return np.ones_like(t), np.zeros_like(s), np.zeros_like(t)
    eps = law.eps_reg
    tp = np.maximum(t, 0.0)
    tm = np.minimum(t, 0.0)
    qt = 1.0 + eps * t**2
    qs = 1.0 + eps * s
    if order == 0:
        return 0.5 * tp**2 / np.sqrt(qt), s / np.sqrt(qs), 0.5 * tm**2
    if order == 1:
        da = tp / np.sqrt(qt) - 0.5 * eps * tp**2 * t / qt**1.5
        db = 1.0 / np.sqrt(qs) - 0.5 * eps * s / qs**1.5
        return da, db, tm
    pos = (t > 0).astype(float)
    d2a = pos * (qt**-0.5 - 2.5 * eps * t**2 * qt**-1.5 + 1.5 * eps**2 * t**4 * qt**-2.5)
    d2b = -eps * qs**-1.5 + 0.75 * eps**2 * s * qs**-2.5
    return d2a, d2b, (t < 0).astype(float)


def energy_density_voigt(ev, alpha, law: MaterialLaw):
    """Elastic part ``K a + G b + K(1) c`` (no ``phi_d``) at Voigt strains."""
    t, s, _ = strain_invariants(ev)
    a, b, c = invariant_functions(t, s, law)
    return law.K_fun(alpha) * a + law.G_fun(alpha) * b + law.K1 * c


def stress_voigt(ev, alpha, law: MaterialLaw):
    """Stress vector ``[s11, s22, s12]`` at Voigt strains."""
    t, s, ds = strain_invariants(ev)
    da, db, dc = invariant_functions(t, s, law, order=1)
    K = law.K_fun(alpha)
    G = law.G_fun(alpha)
    sph = (K * da + law.K1 * dc)[..., None] * ONES
    return sph + (G * db)[..., None] * ds


def tangent_voigt(ev, alpha, law: MaterialLaw):
    """Consistent tangent ``d stress / d strain`` in Voigt form."""
    t, s, ds = strain_invariants(ev)
    _, db, _ = invariant_functions(t, s, law, order=1)
    d2a, d2b, d2c = invariant_functions(t, s, law, order=2)
    K = np.asarray(law.K_fun(alpha))
    G = np.asarray(law.G_fun(alpha))
    vol = (K * d2a + law.K1 * d2c)[..., None, None] * np.outer(ONES, ONES)
    dev = (G * db)[..., None, None] * DEV_HESS + (G * d2b)[..., None, None] * (
        ds[..., :, None] * ds[..., None, :]
    )
    return vol + dev


def _check_alpha(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < -ALPHA_TOL) or np.any(alpha > 1.0 + ALPHA_TOL):
        raise ValueError("alpha outside [0, 1]")
    return alpha


# --------------------------------------------------------------------------
# public pointwise API (2x2 tensors)


@dataclass(frozen=True)
class StrainSplit:
    """Spherical tension/compression and deviatoric parts of a strain."""

    sph_plus: np.ndarray
    sph_minus: np.ndarray
    dev: np.ndarray


def strain_decompose(e) -> StrainSplit:
    """Split ``e = (tr e)_+/d I + (tr e)_-/d I + dev e`` with ``d = 2``."""
    e = np.asarray(e, dtype=float)
    if not np.allclose(e, np.swapaxes(e, -1, -2), rtol=0, atol=1e-14 * max(1.0, np.abs(e).max())):
        raise ValueError("strain must be symmetric")
    tr = np.trace(e, axis1=-2, axis2=-1)
    eye = np.eye(DIM)
    sph_p = (np.maximum(tr, 0.0) / DIM)[..., None, None] * eye
    sph_m = (np.minimum(tr, 0.0) / DIM)[..., None, None] * eye
    dev = e - (tr / DIM)[..., None, None] * eye
    return StrainSplit(sph_p, sph_m, dev)


def stored_energy(e, alpha, law: MaterialLaw):
    """Stored energy density (J/m^3), gradient term excluded.

    For the AT2 preset this is ``1/2 (eta + alpha^2) C1 e:e + gc (1 -
    alpha)^2 / (2 eps)``.
    """
    alpha = _check_alpha(alpha)
    ev = tensor_to_voigt(e)
    return energy_density_voigt(ev, alpha, law) - law.phi_fun(alpha)


def stress(e, alpha, law: MaterialLaw):
    """``d phi / d e`` as a symmetric 2x2 tensor (Pa)."""
    alpha = _check_alpha(alpha)
    return stress_to_tensor(stress_voigt(tensor_to_voigt(e), alpha, law))


def driving_force(e, alpha, law: MaterialLaw):
    """``d phi / d alpha = K'(alpha) a + G'(alpha) b - phi_d'(alpha)``."""
    alpha = _check_alpha(alpha)
    t, s, _ = strain_invariants(tensor_to_voigt(e))
    a, b, _ = invariant_functions(t, s, law)
    return law.K_fun.deriv()(alpha) * a + law.G_fun.deriv()(alpha) * b - law.phi_fun.deriv()(alpha)


def secant_C(alpha_new, alpha_old, law: MaterialLaw):
    """Voigt tensor ``C*`` with ``C*(a - b) = C(a) - C(b)``; ``C'(a)`` if equal."""
    return iso_voigt(poly_secant(law.K_fun, alpha_new, alpha_old),
                     poly_secant(law.G_fun, alpha_new, alpha_old))


def secant_phi(alpha_new, alpha_old, law: MaterialLaw):
    """Difference quotient of ``phi_d``."""
    return poly_secant(law.phi_fun, alpha_new, alpha_old)


def effective_fracture_stress(mode: str, alpha0: float, law: MaterialLaw) -> float:
    """Stress at which a homogeneous state starts to damage.

    Mode II (shear): ``G(a0) sqrt(4 gc / G'(a0))``.
    Mode I (opening): ``K(a0) sqrt(2 d gc / K'(a0))`` with ``d = 2``.
    """
    if mode == "II":
        f = law.G_fun
        factor = 4.0
    elif mode == "I":
        f = law.K_fun
        factor = 2.0 * DIM
    else:
        raise ValueError(f"mode must be 'I' or 'II', got {mode!r}")
    slope = float(f.deriv()(alpha0))
    if slope <= 0.0:
        raise ValueError("no damage drive in this mode")
    return float(f(alpha0)) * np.sqrt(factor * law.gc / slope)


def zeta(alpha_dot, law: MaterialLaw):
    """Rate potential ``-gc alpha_dot + nu alpha_dot^2`` (``+inf`` if forbidden)."""
    ad = np.asarray(alpha_dot, dtype=float)
    val = law.gc_zeta * np.abs(ad) + law.nu_visc * ad**2
    if law.regime == "unidirectional":
        val = np.where(ad > 1e-12, np.inf, val)
    return val


def dissipation_rate(alpha_dot, law: MaterialLaw):
    """``alpha_dot * d zeta(alpha_dot) = gc |alpha_dot| + 2 nu alpha_dot^2``."""
    ad = np.asarray(alpha_dot, dtype=float)
    if law.regime == "unidirectional" and np.any(ad > 1e-12):
        raise ValueError("damage rate must be non-positive in the unidirectional regime")
    return law.gc_zeta * np.abs(ad) + 2.0 * law.nu_visc * ad**2
