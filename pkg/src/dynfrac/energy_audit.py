"""Energy bookkeeping and the discrete balance check.

A ledger holds the energies at one time level together with cumulative
dissipations and external work since the start of the run.  The balance

    E(t_k) + D(t_k) = E(t_0) + W(t_k)

holds to round-off for the staggered scheme when every quadrature matches
the one used by the scheme; :func:`energy_breakdown` therefore evaluates
``C(alpha)`` with the same per-element rule as the assembly and ``phi`` with
the lumped nodal rule.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

CSV_COLUMNS = (
    "t",
    "kinetic",
    "stored_elastic",
    "stored_damage",
    "stored_plastic",
    "diss_viscous",
    "diss_damage",
    "diss_plastic",
    "ext_work",
    "residual",
)


@dataclass
class EnergyLedger:
    """Energies (J) at a time level plus cumulative dissipation and work."""

    kinetic: float = 0.0
    stored_elastic: float = 0.0
    stored_damage: float = 0.0
    stored_plastic: float = 0.0
    dissipated_viscous: float = 0.0
    dissipated_damage: float = 0.0
    dissipated_plastic: float = 0.0
    external_work: float = 0.0

    @property
    def energy(self) -> float:
        return self.kinetic + self.stored_elastic + self.stored_damage + self.stored_plastic

    @property
    def dissipated(self) -> float:
        return self.dissipated_viscous + self.dissipated_damage + self.dissipated_plastic

    def as_dict(self) -> dict:
        return asdict(self)

    def with_energies(self, other: "EnergyLedger") -> "EnergyLedger":
        """Energies of ``other`` combined with the cumulative terms of ``self``."""
        return EnergyLedger(
            other.kinetic, other.stored_elastic, other.stored_damage, other.stored_plastic,
            self.dissipated_viscous, self.dissipated_damage, self.dissipated_plastic,
            self.external_work,
        )


def energy_breakdown(state, mesh, law, plaw=None, lumped: bool = False,
                     evaluation: str = "element-mean") -> EnergyLedger:
    """Energies of ``state``; cumulative entries are copied from its ledger.

    Parameters
    ----------
    state : SimState
    mesh : Mesh2D
    law : MaterialLaw
    plaw : PlasticLaw, optional
        Needed for the hardening energy when ``state.pi`` is set.
    lumped : bool
        Mass matrix used for the kinetic energy (match the scheme).
    evaluation : str
        Quadrature of ``alpha`` inside elements (match the scheme).
    """
    from . import assembly as asm
    from .material import invariant_functions, strain_invariants

    M = asm.assemble_mass(mesh, law.rho, lumped)
    kinetic = 0.5 * float(state.v @ (M @ state.v))

    strains = asm.element_strains(mesh, state.u)
    if state.pi is not None:
        strains = strains - pi_voigt(state.pi)
    t, s, _ = strain_invariants(strains)
    a, b, c = invariant_functions(t, s, law)
    ap, w = asm.alpha_points(mesh, state.alpha, evaluation)
    Kq = law.K_fun(ap) @ w
    Gq = law.G_fun(ap) @ w
    stored_el = float(np.sum(mesh.areas * (Kq * a + Gq * b + law.K1 * c)))

    m = asm.node_weights(mesh)
    stored_dmg = -float(m @ law.phi_fun(state.alpha))
    stored_dmg += asm.gradient_energy(mesh, state.alpha, law.kappa, law.p_grad)

    stored_pl = 0.0
    if state.pi is not None and plaw is not None:
        stored_pl = float(np.sum(mesh.areas * 0.5 * plaw.H * pi_norm2(state.pi)))

    led = state.ledger if state.ledger is not None else EnergyLedger()
    return EnergyLedger(kinetic, stored_el, stored_dmg, stored_pl, led.dissipated_viscous,
                        led.dissipated_damage, led.dissipated_plastic, led.external_work)


def pi_voigt(pi):
    """Tensor components ``[p11, p22, p12]`` to engineering Voigt."""
    pi = np.asarray(pi, dtype=float)
    return np.stack([pi[..., 0], pi[..., 1], 2.0 * pi[..., 2]], axis=-1)


def pi_norm2(pi):
    pi = np.asarray(pi, dtype=float)
    return pi[..., 0] ** 2 + pi[..., 1] ** 2 + 2.0 * pi[..., 2] ** 2


def balance_residual(ledger_t: EnergyLedger, ledger_0: EnergyLedger,
                     work_and_dissipation_integrals=None) -> float:
    """``|LHS - RHS| / max(1, |RHS|)`` of the energy balance.

    ``LHS = E(t) + D(t)``, ``RHS = E(0) + W(t)``.  Cumulative dissipation and
    work are taken from the ledgers (differences ``t`` minus ``0``) unless
    ``work_and_dissipation_integrals = (W, D)`` is given explicitly.
    """
    if work_and_dissipation_integrals is None:
        W = ledger_t.external_work - ledger_0.external_work
        D = ledger_t.dissipated - ledger_0.dissipated
    else:
        W, D = work_and_dissipation_integrals
    for name in ("dissipated_viscous", "dissipated_damage", "dissipated_plastic"):
        if getattr(ledger_t, name) < getattr(ledger_0, name) - 1e-12 * max(1.0, abs(getattr(ledger_0, name))):
            raise ValueError("ledgers from different runs: cumulative dissipation decreased")
    lhs = ledger_t.energy + D
    rhs = ledger_0.energy + W
    return abs(lhs - rhs) / max(1.0, abs(rhs))


def relative_balance_residual(ledger_t: EnergyLedger, ledger_0: EnergyLedger) -> float:
    """Balance defect relative to the largest term involved (scale-free)."""
    W = ledger_t.external_work - ledger_0.external_work
    D = ledger_t.dissipated - ledger_0.dissipated
    lhs = ledger_t.energy + D
    rhs = ledger_0.energy + W
    terms = [abs(getattr(ledger_t, f.name)) for f in fields(EnergyLedger)]
    terms += [abs(getattr(ledger_0, f.name)) for f in fields(EnergyLedger)]
    scale = max(terms)
    return 0.0 if scale == 0 else abs(lhs - rhs) / scale


def ledger_row(t: float, ledger: EnergyLedger, ledger_0: EnergyLedger) -> dict:
    return {
        "t": t,
        "kinetic": ledger.kinetic,
        "stored_elastic": ledger.stored_elastic,
        "stored_damage": ledger.stored_damage,
        "stored_plastic": ledger.stored_plastic,
        "diss_viscous": ledger.dissipated_viscous,
        "diss_damage": ledger.dissipated_damage,
        "diss_plastic": ledger.dissipated_plastic,
        "ext_work": ledger.external_work,
        "residual": balance_residual(ledger, ledger_0),
    }


class EnergyLog:
    """Writer for the energy CSV (one row per time level)."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)
        self.ledger_0 = None

    def write(self, t: float, ledger: EnergyLedger) -> float:
        if self.ledger_0 is None:
            self.ledger_0 = ledger
        row = ledger_row(t, ledger, self.ledger_0)
        self._w.writerow([format(row[c], ".17g") for c in CSV_COLUMNS])
        self._fh.flush()
        return row["residual"]

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_energy_csv(path) -> list:
    """Parse an energy CSV; raises ValueError on any malformed content."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        try:
            vals = [float(x) for x in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise ValueError(f"{path}:{lineno}: non-finite value")
        out.append(dict(zip(CSV_COLUMNS, vals)))
    if not out:
        raise ValueError(f"{path}: no data rows")
    return out


def check_energy_csv(path, threshold: float = 1e-8) -> float:
    """Recompute the balance residual of every row; return the maximum.

    Raises
    ------
    ValueError
        Malformed file, or a residual above ``threshold``.
    """
    rows = read_energy_csv(path)
    first = rows[0]

    def ledger(r):
        return EnergyLedger(r["kinetic"], r["stored_elastic"], r["stored_damage"],
                            r["stored_plastic"], r["diss_viscous"], r["diss_damage"],
                            r["diss_plastic"], r["ext_work"])

    l0 = ledger(first)
    worst = 0.0
    for r in rows:
        res = balance_residual(ledger(r), l0)
        worst = max(worst, res)
    if worst > threshold:
        raise ValueError(f"energy balance residual {worst:.3e} exceeds {threshold:.1e}")
    return worst
