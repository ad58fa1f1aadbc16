"""Per-step damage problem: box-constrained convex minimisation.

The damage update of every scheme minimises

    J(alpha) = 1/2 alpha^T H alpha - c^T alpha + sum_terms w_p P(S alpha)_p

over ``lower <= alpha <= upper``.  ``H`` collects the gradient and damage
viscosity contributions, the polynomial terms carry the degradation of the
elastic energy and the damage energy ``phi``.  When every polynomial is at
most quadratic the problem is a QP and is solved once; otherwise sequential
QP with a backtracking line search is used.

The QP solver is a projected Newton method: nodes sitting on a bound with
the gradient pushing outward are frozen, the remaining ones take an exact
Newton step (sparse LU), and the step is projected back onto the box with an
Armijo backtracking.  Once the active set is identified the free-set solve
is exact, so the KKT residual drops to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from .material import (
    MaterialLaw,
    invariant_functions,
    iso_voigt,
    poly_secant_antideriv,
    strain_invariants,
)


@dataclass
class DamageSubproblem:
    """``min 1/2 x^T Q x - b^T x`` subject to ``lower <= x <= upper``.

    ``box_upper`` flags nodes whose upper bound is the physical bound
    ``alpha <= 1`` (as opposed to the no-healing bound ``alpha <= alpha_old``);
    only those contribute to the reported multiplier.
    """

    Q: sp.csr_matrix
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    tol: float = 1e-12
    box_upper: np.ndarray | None = None
    x0: np.ndarray | None = None
    max_iter: int = 500

    def __post_init__(self):
        self.Q = sp.csr_matrix(self.Q)
        n = self.Q.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(n)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.box_upper is None:
            self.box_upper = np.ones(n, dtype=bool)

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.Q @ x) - self.b @ x)


@dataclass
class DamageSolution:
    """Minimiser, bound multiplier ``r_c`` and solver diagnostics.

    ``multiplier`` follows the normal-cone sign convention: ``<= 0`` where
    ``alpha = 0`` is active, ``>= 0`` where ``alpha = 1`` is active, zero on
    free nodes and on nodes held only by the no-healing bound.
    """

    alpha_new: np.ndarray
    multiplier: np.ndarray
    iterations: int
    residual: float


def _scaling(diag):
    pos = diag[diag > 0]
    fallback = pos.mean() if pos.size else 1.0
    return np.where(diag > 0, diag, fallback)


def kkt_residual(x, g, lower, upper, scale) -> float:
    """``|x - P(x - g/scale)|_inf`` (zero exactly at a KKT point)."""
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(x - np.clip(x - g / scale, lower, upper))))


def _multiplier(x, g, prob: DamageSubproblem):
    r = np.zeros_like(x)
    at_low = x <= prob.lower
    at_up = (x >= prob.upper) & prob.box_upper & ~at_low
    r[at_low] = -g[at_low]
    r[at_up] = -g[at_up]
    # enforce the sign convention against round-off noise
    r[at_low] = np.minimum(r[at_low], 0.0)
    r[at_up] = np.maximum(r[at_up], 0.0)
    return r


def _free_solve(Q, free, rhs):
    Qff = Q[free][:, free].tocsc()
    try:
        return spla.splu(Qff).solve(rhs)
    except RuntimeError:
        d = Qff.diagonal()
        shift = 1e-12 * (np.abs(d).max() if d.size else 1.0) + 1e-300
        return spla.splu((Qff + shift * sp.identity(Qff.shape[0], format="csc")).tocsc()).solve(rhs)


def solve_box_qp(problem: DamageSubproblem) -> DamageSolution:
    """Projected Newton method for the box-constrained QP.

    Returns
    -------
    DamageSolution

    Raises
    ------
    RuntimeError
        If the KKT residual does not reach ``problem.tol`` within
        ``problem.max_iter`` iterations.
    """
    Q, b, lo, up = problem.Q, problem.b, problem.lower, problem.upper
    n = b.size
    x = np.clip(problem.x0 if problem.x0 is not None else np.clip(np.zeros(n), lo, up), lo, up)
    x = np.asarray(x, dtype=float).copy()
    scale = _scaling(Q.diagonal())
    fixed = up <= lo
    res = np.inf
    for it in range(problem.max_iter + 1):
        g = Q @ x - b
        res = kkt_residual(x, g, lo, up, scale)
        if res <= problem.tol:
            return DamageSolution(x, _multiplier(x, g, problem), it, res)
        if it == problem.max_iter:
            break
        eps = min(1e-3, res)
        binding = fixed | ((x <= lo + eps) & (g > 0)) | ((x >= up - eps) & (g < 0))
        binding |= (x <= lo) & (g >= 0)
        binding |= (x >= up) & (g <= 0)
        free = np.flatnonzero(~binding)
        d = np.zeros(n)
        if free.size:
            d[free] = _free_solve(Q, free, -g[free])
        bnd = np.flatnonzero(binding & ~fixed)
        d[bnd] = -g[bnd] / scale[bnd]
        accepted = False
        for direction in (d, -g / scale):
            s = 1.0
            for _ in range(60):
                xs = np.clip(x + s * direction, lo, up)
                dx = xs - x
                # exact decrease of the quadratic, free of cancellation
                slope = float(g @ dx)
                df = slope + 0.5 * float(dx @ (Q @ dx))
                if df <= 1e-4 * slope and np.any(dx != 0):
                    accepted = True
                    break
                s *= 0.5
            if accepted:
                break
        if not accepted:
            # no representable decrease left: x is optimal to round-off
            return DamageSolution(x, _multiplier(x, g, problem), it, res)
        x = xs
    raise RuntimeError(f"box QP did not converge: KKT residual {res:.3e} after {problem.max_iter} iterations")


# --------------------------------------------------------------------------
# general objective and sequential QP


@dataclass
class PolyTerm:
    """``sum_p weight_p P(alpha_p)`` with ``alpha_p = (S alpha)_p``.

    ``P`` is the polynomial itself when ``anchor`` is None, otherwise the
    antiderivative of its difference quotient against ``anchor`` (see
    :func:`dynfrac.material.poly_secant_antideriv`).
    """

    S: sp.csr_matrix
    poly: object
    weight: np.ndarray
    anchor: np.ndarray | None = None

    def _eval(self, a, order):
        if self.anchor is None:
            p = self.poly if order == 0 else self.poly.deriv(order)
            return p(a)
        return poly_secant_antideriv(self.poly, a, self.anchor, order)

    def value(self, x):
        return float(self.weight @ self._eval(self.S @ x, 0))

    def gradient(self, x):
        return self.S.T @ (self.weight * self._eval(self.S @ x, 1))

    def curvature(self, x):
        return self.weight * self._eval(self.S @ x, 2)

    @property
    def degree(self) -> int:
        return self.poly.degree()


@dataclass
class DamageObjective:
    """Smooth convex-in-practice damage functional on a box.

    Attributes
    ----------
    H, c : quadratic and linear parts.
    terms : list of PolyTerm.
    pgrad : (mesh, kappa, p) or None
        Adds ``int kappa/p |grad alpha|^p`` (``p > 2``).
    """

    H: sp.csr_matrix
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    box_upper: np.ndarray
    terms: list = field(default_factory=list)
    pgrad: tuple | None = None
    tol: float = 1e-12

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower) or np.any(x > self.upper):
            return np.inf
        v = 0.5 * x @ (self.H @ x) - self.c @ x + sum(t.value(x) for t in self.terms)
        if self.pgrad is not None:
            mesh, kappa, p = self.pgrad
            v += asm.gradient_energy(mesh, x, kappa, p)
        return float(v)

    def gradient(self, x) -> np.ndarray:
        g = self.H @ x - self.c
        for t in self.terms:
            g = g + t.gradient(x)
        if self.pgrad is not None:
            mesh, kappa, p = self.pgrad
            g = g + asm.assemble_damage_gradient(mesh, x, kappa, p).residual
        return g

    def hessian(self, x, clip: bool = True) -> sp.csr_matrix:
        Hm = self.H
        for t in self.terms:
            w = t.curvature(x)
            if clip:
                w = np.maximum(w, 0.0)
            Hm = Hm + t.S.T @ sp.diags(w) @ t.S
        if self.pgrad is not None:
            mesh, kappa, p = self.pgrad
            Hm = Hm + asm.assemble_damage_gradient(mesh, x, kappa, p).operator
        return sp.csr_matrix(Hm)

    @property
    def is_quadratic(self) -> bool:
        if self.pgrad is not None or any(t.degree > 2 for t in self.terms):
            return False
        zero = np.zeros(self.c.size)
        return all(np.all(t.curvature(zero) >= 0) for t in self.terms)

    def quadratic_model(self, x) -> DamageSubproblem:
        """Second-order model at ``x`` (exact for a quadratic objective)."""
        Q = self.hessian(x)
        b = Q @ x - self.gradient(x)
        return DamageSubproblem(Q, b, self.lower, self.upper, tol=self.tol,
                                box_upper=self.box_upper, x0=np.clip(x, self.lower, self.upper))


def minimize_damage(obj: DamageObjective, x0, max_iter: int = 100) -> DamageSolution:
    """Minimise a :class:`DamageObjective` by SQP with backtracking.

    A quadratic objective is solved by a single QP.
    """
    x = np.clip(np.asarray(x0, dtype=float), obj.lower, obj.upper)
    if obj.is_quadratic:
        return solve_box_qp(obj.quadratic_model(x))
    f = obj.value(x)
    res = np.inf
    for it in range(1, max_iter + 1):
        model = obj.quadratic_model(x)
        sol = solve_box_qp(model)
        d = sol.alpha_new - x
        g = obj.gradient(x)
        slope = float(g @ d)
        s = 1.0
        while True:
            xs = np.clip(x + s * d, obj.lower, obj.upper)
            fs = obj.value(xs)
            if fs <= f + 1e-4 * s * slope or s < 1e-12:
                break
            s *= 0.5
        step = float(np.max(np.abs(xs - x))) if x.size else 0.0
        x, f = xs, fs
        g = obj.gradient(x)
        scale = _scaling(model.Q.diagonal())
        res = kkt_residual(x, g, obj.lower, obj.upper, scale)
        if res <= obj.tol or step <= 1e-15:
            prob = replace(model, b=model.Q @ x - g)
            return DamageSolution(x, _multiplier(x, g, prob), it, res)
    raise RuntimeError(f"damage SQP did not converge: KKT residual {res:.3e}")


# --------------------------------------------------------------------------
# scheme-specific construction


def elastic_invariants(strains, law: MaterialLaw):
    """``a(e)``, ``b(e)`` per element for the driving strains ``(M, 3)``."""
    t, s, _ = strain_invariants(strains)
    a, b, _ = invariant_functions(t, s, law)
    return a, b


def damage_objective(mesh, law: MaterialLaw, alpha_old, strains, tau: float, form: str,
                     evaluation: str = "element-mean", tol: float = 1e-12,
                     grad_weights: np.ndarray | None = None) -> DamageObjective:
    """Damage functional of one time step.

    Parameters
    ----------
    strains : ndarray (M, 3)
        Strain driving damage: ``e(u^k)`` (staggered), ``e(u^k) - pi^k``
        (with plasticity), ``C1^{-1} varsigma^k`` (explicit) or ``e(u)`` at
        the current monolithic iterate.
    form : {"secant", "plain"}
        ``secant`` uses difference quotients against ``alpha_old`` and the
        midpoint gradient term; ``plain`` uses the functions themselves.
    grad_weights : ndarray (M,), optional
        Frozen per-element gradient coefficients for ``p > 2`` in secant
        form (see :func:`solve_damage`).
    """
    alpha_old = np.clip(np.asarray(alpha_old, dtype=float), 0.0, 1.0)
    n = mesh.n_nodes
    m = asm.node_weights(mesh)
    a_e, b_e = elastic_invariants(strains, law)
    P, w = asm.alpha_point_map(mesh, evaluation)
    pw = (mesh.areas[:, None] * w[None, :]).ravel()
    nq = len(w)
    a_p = np.repeat(a_e, nq)
    b_p = np.repeat(b_e, nq)
    anchor_p = P @ alpha_old if form == "secant" else None
    anchor_n = alpha_old if form == "secant" else None
    eye = sp.identity(n, format="csr")
    terms = [
        PolyTerm(P, law.K_fun, pw * a_p, anchor_p),
        PolyTerm(P, law.G_fun, pw * b_p, anchor_p),
        PolyTerm(eye, law.phi_fun, -m, anchor_n),
    ]
    terms = [t for t in terms if t.degree >= 1 and np.any(t.weight != 0)]

    H = sp.csr_matrix((n, n))
    c = np.zeros(n)
    pgrad = None
    L = asm.scalar_laplacian(mesh)
    if form == "secant":
        if law.p_grad == 2:
            Lw = 0.5 * law.kappa * L
        else:
            if grad_weights is None:
                raise ValueError("p > 2 in secant form needs frozen gradient weights")
            Lw = weighted_laplacian(mesh, grad_weights)
        H = H + Lw
        c = c - Lw @ alpha_old
    elif form == "plain":
        if law.p_grad == 2:
            H = H + law.kappa * L
        else:
            pgrad = (mesh, law.kappa, law.p_grad)
    else:
        raise ValueError(f"unknown form {form!r}")
    if law.nu_visc > 0:
        H = H + sp.diags(2.0 * law.nu_visc / tau * m)
        c = c + 2.0 * law.nu_visc / tau * m * alpha_old
    c = c + law.gc_zeta * m
    lower = np.zeros(n)
    if law.regime == "unidirectional":
        upper = alpha_old.copy()
        box_upper = np.zeros(n, dtype=bool)
    else:
        upper = np.ones(n)
        box_upper = np.ones(n, dtype=bool)
    return DamageObjective(sp.csr_matrix(H), c, lower, upper, box_upper, terms, pgrad, tol)


def weighted_laplacian(mesh, weights) -> sp.csr_matrix:
    """``sum_e w_e A_e grad N_i . grad N_j``."""
    g = mesh.shape_gradients
    ke = np.einsum("eik,ejk->eij", g, g) * (mesh.areas * weights)[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)


def gradient_secant_weights(mesh, alpha_new, alpha_old, kappa, p):
    """Per-element ``f*(s_new, s_old)`` for ``f(s) = kappa/p s^(p/2)``.

    With these weights ``2 f* grad alpha_mid . grad (alpha_new - alpha_old)``
    equals the change of ``kappa/p |grad alpha|^p`` exactly.
    """
    s1 = np.einsum("ek,ek->e", *(2 * [asm.element_gradients(mesh, alpha_new)]))
    s0 = np.einsum("ek,ek->e", *(2 * [asm.element_gradients(mesh, alpha_old)]))
    q = p / 2.0
    f = lambda s: kappa / p * s**q
    ds = s1 - s0
    small = np.abs(ds) <= 1e-12 * np.maximum(np.maximum(s0, s1), 1e-300)
    sm = 0.5 * (s0 + s1)
    deriv = kappa / p * q * np.where(sm > 0, sm, 0.0) ** (q - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sec = np.where(small, deriv, (f(s1) - f(s0)) / np.where(small, 1.0, ds))
    return sec


def build_subproblem(state, u_new, mesh, law: MaterialLaw, cfg, scheme_kind: str,
                     strains=None) -> DamageSubproblem:
    """Quadratic model of the scheme's damage step around ``alpha^{k-1}``.

    For laws whose moduli and ``phi`` are at most quadratic in ``alpha`` (and
    ``p = 2``) the model is the exact problem.  ``strains`` overrides the
    driving strain (used with plasticity).
    """
    obj = step_objective(state, u_new, mesh, law, cfg, scheme_kind, strains)
    return obj.quadratic_model(np.clip(state.alpha, 0.0, 1.0))


def step_objective(state, u_new, mesh, law, cfg, scheme_kind, strains=None, grad_weights=None):
    if strains is None:
        if scheme_kind in ("staggered", "monolithic"):
            if u_new is None:
                raise ValueError(f"{scheme_kind} damage step needs the new displacement")
            strains = asm.element_strains(mesh, u_new)
        elif scheme_kind == "explicit":
            if state.varsigma is None:
                raise ValueError("explicit damage step needs the proto-stress")
            strains = proto_strain(state.varsigma, law)
        else:
            raise ValueError(f"unknown scheme kind {scheme_kind!r}")
    form = "plain" if scheme_kind == "monolithic" else "secant"
    if form == "secant" and law.p_grad != 2 and grad_weights is None:
        grad_weights = gradient_secant_weights(mesh, state.alpha, state.alpha, law.kappa, law.p_grad)
    return damage_objective(mesh, law, state.alpha, strains, cfg.tau, form,
                            cfg.alpha_quadrature, cfg.qp_tol, grad_weights)


def proto_strain(varsigma, law: MaterialLaw):
    """``C1^{-1} varsigma`` per element."""
    _, K1, G1 = law.proportional_degradation()
    return np.linalg.solve(iso_voigt(K1, G1), np.asarray(varsigma).T).T


def solve_damage(state, u_new, mesh, law, cfg, scheme_kind, strains=None) -> DamageSolution:
    """Solve the damage step, including the ``p > 2`` secant fixed point."""
    alpha_old = np.clip(state.alpha, 0.0, 1.0)
    if scheme_kind == "monolithic" or law.p_grad == 2:
        obj = step_objective(state, u_new, mesh, law, cfg, scheme_kind, strains)
        return minimize_damage(obj, alpha_old, cfg.max_inner_iters)
    # outer damped fixed point on the gradient secant weights
    x = alpha_old.copy()
    for it in range(1, cfg.max_inner_iters + 1):
        w = gradient_secant_weights(mesh, x, alpha_old, law.kappa, law.p_grad)
        obj = step_objective(state, u_new, mesh, law, cfg, scheme_kind, strains, grad_weights=w)
        sol = minimize_damage(obj, x, cfg.max_inner_iters)
        change = float(np.max(np.abs(sol.alpha_new - x)))
        if change <= 1e-10:
            return sol
        x = 0.5 * (x + sol.alpha_new)
    raise RuntimeError(f"gradient secant fixed point did not converge (change {change:.3e})")


def damage_dissipation(mesh, law: MaterialLaw, alpha_new, alpha_old, tau, multiplier) -> float:
    """Energy dissipated by the damage step, ``tau * alpha_dot d zeta + r_c . dalpha``."""
    m = asm.node_weights(mesh)
    da = np.asarray(alpha_new) - np.asarray(alpha_old)
    zeta_part = float(m @ (law.gc_zeta * np.abs(da) + 2.0 * law.nu_visc * da**2 / tau))
    return zeta_part + float(np.asarray(multiplier) @ da)
