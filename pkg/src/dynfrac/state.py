"""Simulation state and scheme settings."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .energy_audit import EnergyLedger

SCHEMES = ("monolithic", "staggered", "explicit")


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping settings.

    Parameters
    ----------
    scheme : {"monolithic", "staggered", "explicit"}
    tau : float
        Time step (s).
    newton_tol : float
        Relative residual for nonlinear mechanical solves and the monolithic
        alternating minimisation.
    qp_tol : float
        KKT tolerance of the damage problem (scaled, in units of alpha).
    max_inner_iters : int
    cfl_safety : float
        Fraction of the CFL bound recommended for the explicit scheme.
    lumped : bool
        Lumped mass for the implicit schemes (the explicit scheme always
        lumps).
    alpha_quadrature : {"element-mean", "nodal-midpoint"}
    linear_solver : {"direct", "cg"}
        Sparse LU, or Jacobi-preconditioned conjugate gradients to relative
        residual ``lin_tol``.
    """

    scheme: str = "staggered"
    tau: float = 1e-3
    newton_tol: float = 1e-12
    qp_tol: float = 1e-12
    max_inner_iters: int = 200
    cfl_safety: float = 0.5
    lumped: bool = False
    alpha_quadrature: str = "element-mean"
    linear_solver: str = "direct"
    lin_tol: float = 1e-12

    def __post_init__(self):
        errors = []
        if self.scheme not in SCHEMES:
            errors.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.tau > 0:
            errors.append("tau must be positive")
        for name in ("newton_tol", "qp_tol", "lin_tol"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive")
        if int(self.max_inner_iters) < 1:
            errors.append("max_inner_iters must be >= 1")
        if not 0 < self.cfl_safety <= 1:
            errors.append("cfl_safety must lie in (0, 1]")
        if self.alpha_quadrature not in ("element-mean", "nodal-midpoint"):
            errors.append(f"unknown alpha_quadrature {self.alpha_quadrature!r}")
        if self.linear_solver not in ("direct", "cg"):
            errors.append(f"unknown linear_solver {self.linear_solver!r}")
        if errors:
            raise ValueError("invalid scheme config: " + "; ".join(errors))

    @property
    def mass_lumped(self) -> bool:
        return self.lumped or self.scheme == "explicit"

    def with_(self, **kw) -> "SchemeConfig":
        return replace(self, **kw)


@dataclass
class SimState:
    """Fields at one time level.

    ``u`` and ``v`` are interleaved nodal vectors of length ``2N``, ``alpha``
    has length ``N``.  ``pi`` holds per-element plastic strain tensors as
    ``[p11, p22, p12]`` (trace-free), ``varsigma`` per-element proto-stress
    vectors ``[s11, s22, s12]``.
    """

    t: float
    u: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    pi: np.ndarray | None = None
    varsigma: np.ndarray | None = None
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    step: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.u.shape != self.v.shape or self.u.size != 2 * self.alpha.size:
            raise ValueError("u, v need 2 components per alpha node")
        if np.any(self.alpha < -1e-9) or np.any(self.alpha > 1 + 1e-9):
            raise ValueError("alpha outside [0, 1]")
        if self.pi is not None:
            self.pi = np.asarray(self.pi, dtype=float).reshape(-1, 3)
            tr = self.pi[:, 0] + self.pi[:, 1]
            if np.any(np.abs(tr) > 1e-12 * max(1.0, float(np.abs(self.pi).max()))):
                raise ValueError("plastic strain must be trace-free")
        if self.varsigma is not None:
            self.varsigma = np.asarray(self.varsigma, dtype=float).reshape(-1, 3)

    def copy(self) -> "SimState":
        return SimState(
            self.t,
            self.u.copy(),
            self.v.copy(),
            self.alpha.copy(),
            None if self.pi is None else self.pi.copy(),
            None if self.varsigma is None else self.varsigma.copy(),
            replace(self.ledger),
            self.step,
        )
