"""Built-in verification scenarios.

``fig1``: tension rupture of a vertically stretched rectangle.  The run is
judged by properties rather than by a reference crack path:

* rupture: ``min alpha < 0.05`` somewhere;
* the damaged set ``{alpha < 0.5}`` is one connected band whose bounding
  box is at most ``6 eps`` high and spans at least 90% of the width;
* kinetic energy after rupture is nonzero (a wave is emitted);
* ``alpha`` stays in ``[0, 1]`` and, in the unidirectional regime, never
  increases at any node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

BOUND_TOL = 1e-9


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ScenarioReport:
    checks: list = field(default_factory=list)
    rupture_time: float | None = None
    # min alpha, max alpha and largest nodal increase over the whole run
    alpha_stats: tuple | None = None

    def add(self, name, passed, detail):
        self.checks.append(Check(name, bool(passed), detail))

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def lines(self) -> list:
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]


def node_graph(mesh, mask) -> sp.csr_matrix:
    """Adjacency of the nodes in ``mask`` along triangle edges."""
    T = mesh.triangles
    i = np.concatenate([T[:, 0], T[:, 1], T[:, 2]])
    j = np.concatenate([T[:, 1], T[:, 2], T[:, 0]])
    keep = mask[i] & mask[j]
    n = mesh.n_nodes
    A = sp.coo_matrix((np.ones(keep.sum()), (i[keep], j[keep])), shape=(n, n)).tocsr()
    return A + A.T


def band_properties(mesh, alpha, threshold=0.5):
    """``(n_components, height, width_fraction)`` of ``{alpha < threshold}``."""
    mask = np.asarray(alpha) < threshold
    if not mask.any():
        return 0, 0.0, 0.0
    ncomp, labels = connected_components(node_graph(mesh, mask)[mask][:, mask], directed=False)
    xy = mesh.nodes[mask]
    width = np.ptp(mesh.nodes[:, 0])
    return ncomp, float(np.ptp(xy[:, 1])), float(np.ptp(xy[:, 0]) / width)


def evaluate_fig1(cfg, out_dir=None) -> ScenarioReport:
    """Run the tension-rupture configuration and assert its properties."""
    from ..io_cli import run

    built = cfg.build()
    mesh, law, _, _, _, state0 = built
    rep = ScenarioReport()
    eps = law.eps_pf
    # grid spacing: the longest boundary edge of a structured mesh
    h = float(mesh.edge_lengths.max())
    bounds = {"lo": float(state0.alpha.min()), "hi": float(state0.alpha.max()), "incr": 0.0}
    prev = [state0.alpha.copy()]

    def watch(state):
        a = state.alpha
        bounds["lo"] = min(bounds["lo"], float(a.min()))
        bounds["hi"] = max(bounds["hi"], float(a.max()))
        bounds["incr"] = max(bounds["incr"], float((a - prev[0]).max()))
        prev[0] = a.copy()
        if rep.rupture_time is None and a.min() < 0.05:
            rep.rupture_time = state.t

    result = run(cfg, out_dir, built=built, callback=watch)
    final = result.state
    rep.alpha_stats = (bounds["lo"], bounds["hi"], bounds["incr"])

    Lx, Ly = np.ptp(mesh.nodes[:, 0]), np.ptp(mesh.nodes[:, 1])
    rep.add("geometry", Ly > Lx, f"Lx = {Lx:g}, Ly = {Ly:g}")
    rep.add("resolution", h <= eps / 2 * (1 + 1e-12), f"h = {h:.4g}, eps/2 = {eps / 2:.4g}")
    amin = float(final.alpha.min())
    rep.add("rupture", amin < 0.05, f"min alpha = {amin:.3e} (< 0.05)"
            + ("" if rep.rupture_time is None else f", first at t = {rep.rupture_time:.4g}"))
    ncomp, height, frac = band_properties(mesh, final.alpha)
    rep.add("band connected", ncomp == 1, f"{ncomp} component(s) of alpha < 0.5")
    rep.add("band height", 0 < height <= 6 * eps, f"{height:.4g} (<= 6 eps = {6 * eps:.4g})")
    rep.add("band span", frac >= 0.9, f"{100 * frac:.1f}% of the width (>= 90%)")
    ke = final.ledger.kinetic
    rep.add("kinetic energy", rep.rupture_time is not None and ke > 0, f"{ke:.3e} after rupture")
    rep.add("alpha bounds", bounds["lo"] >= -BOUND_TOL and bounds["hi"] <= 1 + BOUND_TOL,
            f"[{bounds['lo']:.3e}, {bounds['hi']:.12g}]")
    if law.regime == "unidirectional":
        rep.add("alpha monotone", bounds["incr"] <= 0.0, f"max nodal increase {bounds['incr']:.3e}")
    return rep
