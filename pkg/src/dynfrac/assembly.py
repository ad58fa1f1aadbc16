"""Sparse P1 operators and load vectors.

Displacement-like fields are interleaved, ``[u0x, u0y, u1x, u1y, ...]``;
damage is one value per node.  Element strains are engineering Voigt
vectors (see :mod:`dynfrac.material`).

Damage enters ``C(alpha)`` and ``D(alpha)`` through per-element quadrature
points of the P1 interpolant: ``element-mean`` uses the centroid value,
``nodal-midpoint`` the three edge midpoints (exact for quadratic
degradation).  Terms that depend on ``alpha`` alone (``phi``, the rate
potential) use the lumped nodal rule with weights ``area/3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial

from .material import MaterialLaw, iso_voigt
from .mesh import Mesh2D

EVALUATIONS = ("element-mean", "nodal-midpoint")


# --------------------------------------------------------------------------
# element kinematics


def strain_matrices(mesh: Mesh2D) -> np.ndarray:
    """Per-element ``B`` with ``e = B u_e``; shape ``(M, 3, 6)``."""
    cached = mesh.__dict__.get("_B")
    if cached is not None:
        return cached
    g = mesh.shape_gradients
    B = np.zeros((mesh.n_elements, 3, 6))
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = g[:, :, 1]
    B[:, 2, 1::2] = g[:, :, 0]
    B.setflags(write=False)
    mesh.__dict__["_B"] = B
    return B


def element_dofs(mesh: Mesh2D) -> np.ndarray:
    t = mesh.triangles
    d = np.empty((mesh.n_elements, 6), dtype=np.int64)
    d[:, 0::2] = 2 * t
    d[:, 1::2] = 2 * t + 1
    return d


def element_strains(mesh: Mesh2D, u: np.ndarray) -> np.ndarray:
    """Voigt strains of the displacement field ``u``, shape ``(M, 3)``."""
    ue = np.asarray(u, dtype=float)[element_dofs(mesh)]
    return np.einsum("eij,ej->ei", strain_matrices(mesh), ue)


def internal_force(mesh: Mesh2D, sigma: np.ndarray) -> np.ndarray:
    """``sum_e A_e B_e^T sigma_e`` for element stresses ``(M, 3)``."""
    fe = np.einsum("eij,ei->ej", strain_matrices(mesh), sigma) * mesh.areas[:, None]
    out = np.zeros(2 * mesh.n_nodes)
    np.add.at(out, element_dofs(mesh), fe)
    return out


def alpha_points(mesh: Mesh2D, alpha: np.ndarray, evaluation: str = "element-mean"):
    """Damage at the element quadrature points.

    Returns
    -------
    values : ndarray, shape (M, nq)
    weights : ndarray, shape (nq,)
        Summing to one.
    """
    P, w = alpha_point_map(mesh, evaluation)
    return (P @ np.asarray(alpha, dtype=float)).reshape(mesh.n_elements, -1), w


def alpha_point_map(mesh: Mesh2D, evaluation: str = "element-mean"):
    """Sparse map nodal alpha -> quadrature-point alpha, and point weights."""
    if evaluation not in EVALUATIONS:
        raise ValueError(f"evaluation must be one of {EVALUATIONS}, got {evaluation!r}")
    key = "_P_" + evaluation
    if key in mesh.__dict__:
        return mesh.__dict__[key]
    M = mesh.n_elements
    tri = mesh.triangles
    if evaluation == "element-mean":
        rows = np.repeat(np.arange(M), 3)
        vals = np.full(3 * M, 1.0 / 3.0)
        P = sp.csr_matrix((vals, (rows, tri.ravel())), shape=(M, mesh.n_nodes))
        w = np.array([1.0])
    else:
        pairs = [(0, 1), (1, 2), (2, 0)]
        rows = np.concatenate([3 * np.arange(M) + q for q in range(3) for _ in range(2)])
        cols = np.concatenate([tri[:, k] for pair in pairs for k in pair])
        vals = np.full(6 * M, 0.5)
        P = sp.csr_matrix((vals, (rows, cols)), shape=(3 * M, mesh.n_nodes))
        w = np.full(3, 1.0 / 3.0)
    mesh.__dict__[key] = (P, w)
    return P, w


def element_moduli(mesh: Mesh2D, alpha, law: MaterialLaw, evaluation="element-mean"):
    """Quadrature-averaged ``K(alpha)``, ``G(alpha)`` per element."""
    a, w = alpha_points(mesh, alpha, evaluation)
    return law.K_fun(a) @ w, law.G_fun(a) @ w


def node_weights(mesh: Mesh2D) -> np.ndarray:
    """Lumped P1 weights: a third of the area of every adjacent element."""
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles, np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1))
    return out


# --------------------------------------------------------------------------
# bilinear forms


def _vector_pattern(mesh: Mesh2D):
    d = element_dofs(mesh)
    return np.repeat(d, 6, axis=1).ravel(), np.tile(d, (1, 6)).ravel()


def assemble_voigt_operator(mesh: Mesh2D, Ce: np.ndarray) -> sp.csr_matrix:
    """``sum_e A_e B_e^T C_e B_e`` for element tensors ``Ce`` ``(M, 3, 3)``."""
    B = strain_matrices(mesh)
    ke = np.einsum("eki,ekl,elj->eij", B, Ce, B) * mesh.areas[:, None, None]
    rows, cols = _vector_pattern(mesh)
    n = 2 * mesh.n_nodes
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))


def assemble_mass(mesh: Mesh2D, rho: float, lumped: bool = False) -> sp.csr_matrix:
    """P1 mass matrix for a vector field; total mass ``rho * area``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    n = mesh.n_nodes
    if lumped:
        m = rho * node_weights(mesh)
        return sp.diags(np.repeat(m, 2)).tocsr()
    loc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = rho * mesh.areas[:, None, None] * loc
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    Ms = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    return sp.kron(Ms, sp.identity(2), format="csr")


def assemble_stiffness(mesh: Mesh2D, alpha, law: MaterialLaw,
                       evaluation: str = "element-mean") -> sp.csr_matrix:
    """Stiffness of ``C(alpha)`` (quadratic laws; tangent at 0 otherwise)."""
    K, G = element_moduli(mesh, alpha, law, evaluation)
    return assemble_voigt_operator(mesh, iso_voigt(K, G))


def element_viscosity(mesh: Mesh2D, alpha, law: MaterialLaw, evaluation="element-mean"):
    K, G = element_moduli(mesh, alpha, law, evaluation)
    return law.D0[None, :, :] + law.chi * iso_voigt(K, G)


def assemble_viscosity(mesh: Mesh2D, alpha, law: MaterialLaw,
                       evaluation: str = "element-mean") -> sp.csr_matrix:
    """Operator of ``D(alpha) = D0 + chi C(alpha)``."""
    return assemble_voigt_operator(mesh, element_viscosity(mesh, alpha, law, evaluation))


def scalar_laplacian(mesh: Mesh2D) -> sp.csr_matrix:
    """``int grad a . grad b`` on P1 (unit coefficient)."""
    if "_lap" in mesh.__dict__:
        return mesh.__dict__["_lap"]
    g = mesh.shape_gradients
    ke = np.einsum("eik,ejk->eij", g, g) * mesh.areas[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    L = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    mesh.__dict__["_lap"] = L
    return L


def element_gradients(mesh: Mesh2D, alpha) -> np.ndarray:
    """Constant gradient of a P1 scalar field per element, ``(M, 2)``."""
    return np.einsum("eik,ei->ek", mesh.shape_gradients, np.asarray(alpha, dtype=float)[mesh.triangles])


@dataclass
class GradientTerm:
    """Discrete ``int kappa/p |grad alpha|^p`` at a given ``alpha``.

    Attributes
    ----------
    operator : sparse matrix
        ``kappa * Laplacian`` for ``p = 2``; for ``p > 2`` the Hessian of the
        energy at ``alpha`` (linearised operator).
    energy : float
    residual : ndarray
        Gradient of the energy with respect to nodal ``alpha``.
    """

    operator: sp.csr_matrix
    energy: float
    residual: np.ndarray


def assemble_damage_gradient(mesh: Mesh2D, alpha, kappa: float, p_grad: float = 2.0) -> GradientTerm:
    """Gradient-energy term, its residual and (linearised) operator."""
    if not p_grad >= 2:
        raise ValueError("p_grad must be >= 2")
    alpha = np.asarray(alpha, dtype=float)
    if p_grad == 2:
        L = kappa * scalar_laplacian(mesh)
        r = L @ alpha
        return GradientTerm(L, 0.5 * float(alpha @ r), r)
    g = element_gradients(mesh, alpha)
    A = mesh.areas
    n2 = np.einsum("ek,ek->e", g, g)
    nrm = np.sqrt(n2)
    energy = float(np.sum(kappa / p_grad * nrm**p_grad * A))
    flux = (kappa * nrm ** (p_grad - 2))[:, None] * g
    G = mesh.shape_gradients
    re = np.einsum("eik,ek->ei", G, flux) * A[:, None]
    r = np.zeros(mesh.n_nodes)
    np.add.at(r, mesh.triangles, re)
    # Hessian: kappa |g|^(p-2) (I + (p-2) n n^T)
    with np.errstate(divide="ignore", invalid="ignore"):
        nhat = np.where(nrm[:, None] > 0, g / nrm[:, None], 0.0)
    Dm = (kappa * nrm ** (p_grad - 2))[:, None, None] * (
        np.eye(2)[None] + (p_grad - 2) * nhat[:, :, None] * nhat[:, None, :]
    )
    ke = np.einsum("eik,ekl,ejl->eij", G, Dm, G) * A[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    H = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    return GradientTerm(H, energy, r)


def gradient_energy(mesh: Mesh2D, alpha, kappa: float, p_grad: float = 2.0) -> float:
    g = element_gradients(mesh, alpha)
    nrm = np.sqrt(np.einsum("ek,ek->e", g, g))
    return float(np.sum(kappa / p_grad * nrm**p_grad * mesh.areas))


# --------------------------------------------------------------------------
# loads


@dataclass(frozen=True)
class TimeFunction:
    """Piecewise polynomial in time, constant beyond its end pieces.

    Parameters
    ----------
    breaks : sequence of float
        Increasing breakpoints ``t_0 < ... < t_n``.
    pieces : sequence of Polynomial
        ``n`` polynomials in absolute time, one per interval.  Outside
        ``[t_0, t_n]`` the function is held at its end values.  With a
        single break and one piece the polynomial is used everywhere.
    """

    breaks: tuple
    pieces: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breaks)
        pcs = tuple(Polynomial(np.atleast_1d(p.coef if isinstance(p, Polynomial) else p)) for p in self.pieces)
        if len(b) == 1 and len(pcs) == 1:
            pass
        elif len(pcs) != len(b) - 1 or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError("time table needs increasing breaks and one piece per interval")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "pieces", pcs)

    @classmethod
    def constant(cls, value: float) -> "TimeFunction":
        return cls((0.0,), (Polynomial([float(value)]),))

    @classmethod
    def polynomial(cls, coef) -> "TimeFunction":
        return cls((0.0,), (Polynomial(coef),))

    @classmethod
    def table(cls, times, values) -> "TimeFunction":
        """Piecewise-linear interpolation of ``(time, value)`` pairs."""
        times = [float(t) for t in times]
        values = [float(v) for v in values]
        if len(times) == 1:
            return cls.constant(values[0])
        pieces = []
        for (t0, v0), (t1, v1) in zip(zip(times, values), zip(times[1:], values[1:])):
            slope = (v1 - v0) / (t1 - t0)
            pieces.append(Polynomial([v0 - slope * t0, slope]))
        return cls(tuple(times), tuple(pieces))

    @property
    def _global(self) -> bool:
        return len(self.breaks) == 1

    def _segments(self):
        """(lo, hi, polynomial) covering the real line."""
        if self._global:
            return [(-np.inf, np.inf, self.pieces[0])]
        b, p = self.breaks, self.pieces
        segs = [(-np.inf, b[0], Polynomial([p[0](b[0])]))]
        segs += [(b[i], b[i + 1], p[i]) for i in range(len(p))]
        segs.append((b[-1], np.inf, Polynomial([p[-1](b[-1])])))
        return segs

    def __call__(self, t):
        t = float(t)
        for lo, hi, poly in self._segments():
            if lo <= t <= hi:
                return float(poly(t))
        raise AssertionError("unreachable")

    def integral(self, t0: float, t1: float) -> float:
        total = 0.0
        for lo, hi, poly in self._segments():
            a, b = max(lo, t0), min(hi, t1)
            if b > a:
                P = poly.integ()
                total += float(P(b) - P(a))
        return total

    def average(self, t0: float, t1: float) -> float:
        """Exact mean value on ``[t0, t1]``."""
        if not t1 > t0:
            raise ValueError("average needs t1 > t0")
        return self.integral(t0, t1) / (t1 - t0)


@dataclass
class Loading:
    """Bulk force density and boundary tractions.

    ``bulk`` and every traction are ``(vector, TimeFunction)`` pairs meaning
    ``vector * f(t)``; ``tractions`` maps tag names to lists of such pairs.
    """

    bulk: list = field(default_factory=list)
    tractions: dict = field(default_factory=dict)

    def vector(self, mesh: Mesh2D, t0: float, t1: float) -> np.ndarray:
        return assemble_loads(mesh, self.bulk, self.tractions, t0, t1)

    @property
    def is_zero(self) -> bool:
        return not self.bulk and not any(self.tractions.values())


def _as_terms(x):
    if x is None:
        return []
    if isinstance(x, tuple) and len(x) == 2 and isinstance(x[1], TimeFunction):
        return [x]
    return list(x)


def assemble_loads(mesh: Mesh2D, f, g, t0: float, t1: float) -> np.ndarray:
    """Time-averaged load vector on ``[t0, t1]``.

    Parameters
    ----------
    f : (vector, TimeFunction) or list of them or None
        Uniform bulk force density (N/m^3), one-point quadrature per element.
    g : dict
        Tag name to ``(vector, TimeFunction)`` (or a list), traction in Pa,
        trapezoid rule on edges.
    """
    if not t1 > t0:
        raise ValueError("assemble_loads needs t1 > t0")
    out = np.zeros(2 * mesh.n_nodes)
    for vec, tf in _as_terms(f):
        c = np.asarray(vec, dtype=float) * tf.average(t0, t1)
        share = np.repeat(mesh.areas / 3.0, 3)
        nodes = mesh.triangles.ravel()
        np.add.at(out, 2 * nodes, share * c[0])
        np.add.at(out, 2 * nodes + 1, share * c[1])
    for tag, terms in (g or {}).items():
        if tag not in mesh.tags:
            raise KeyError(f"unknown boundary tag {tag!r}")
        idx = mesh.tag_edges(tag)
        edges = mesh.boundary_edges[idx]
        half = 0.5 * mesh.edge_lengths[idx]
        for vec, tf in _as_terms(terms):
            c = np.asarray(vec, dtype=float) * tf.average(t0, t1)
            for col in (0, 1):
                np.add.at(out, 2 * edges[:, col], half * c[0])
                np.add.at(out, 2 * edges[:, col] + 1, half * c[1])
    return out
