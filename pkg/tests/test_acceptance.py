"""End-to-end acceptance criteria.

Every test records one ``PASS``/``FAIL`` line in ``ACCEPTANCE_LINES`` before
asserting; the lines are printed in the terminal summary.  Long runs are
module-scoped fixtures so that criterion 3 can inspect their damage
trajectories without repeating them.
"""

import time

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.polynomial import Polynomial as P

from conftest import ACCEPTANCE_LINES, all_laws
from dynfrac import (
    Loading,
    PlasticLaw,
    SchemeConfig,
    TimeFunction,
    at2_law,
    generate_rect_mesh,
    initial_state,
    linear_damage_law,
    mode_sensitive_law,
    step,
)
from dynfrac.damage_vi import DamageSubproblem, solve_box_qp
from dynfrac.drivers import plastic_shear_rupture, shear_onset_sweep
from dynfrac.energy_audit import relative_balance_residual
from dynfrac.io_cli import fig1_config_path, parse_config
from dynfrac.material import driving_force, effective_fracture_stress, secant_C, secant_phi, stored_energy, stress
from dynfrac.plasticity import return_map, return_map_residual
from dynfrac.scenarios import evaluate_fig1
from dynfrac.schemes import cfl_timestep, step_monolithic
from oracles import central_difference, fd_stress, grid_box_qp

pytestmark = pytest.mark.acceptance


def record(n, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES[f"{n:02d}"] = line
    print(line)
    return passed


class AlphaTrace:
    """Running min/max of alpha and the largest nodal increase."""

    def __init__(self, alpha0):
        self.lo = float(alpha0.min())
        self.hi = float(alpha0.max())
        self.incr = 0.0
        self.prev = alpha0.copy()

    def update(self, alpha):
        self.lo = min(self.lo, float(alpha.min()))
        self.hi = max(self.hi, float(alpha.max()))
        self.incr = max(self.incr, float((alpha - self.prev).max()))
        self.prev = alpha.copy()


def constant_law():
    """Moduli independent of alpha, no damage energy: damage stays frozen."""
    return mode_sensitive_law(P([1.0]), P([1.0]), 1.0)


# --------------------------------------------------------------------------
# shared runs


@pytest.fixture(scope="module")
def energy_identity_run():
    law = at2_law(1.0, 1.0, 1e-2, 0.1, D0_K=0.01, D0_G=0.01)
    mesh = generate_rect_mesh(32, 32, 1.0, 1.0, "crossed").with_boundary_kinds(
        {"left": "fixed", "right": "traction"})
    load = Loading(tractions={"right": [(np.array([1.0, 0.2]), TimeFunction.table([0, 0.5], [0, 0.3]))]})
    cfg = SchemeConfig(tau=0.01, newton_tol=1e-12, qp_tol=1e-12)
    s = initial_state(mesh, law, cfg=cfg)
    led0 = s.ledger
    trace = AlphaTrace(s.alpha)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(200):
        s = step(s, mesh, law, cfg, load)
        trace.update(s.alpha)
        worst = max(worst, relative_balance_residual(s.ledger, led0))
    return dict(worst=worst, runtime=time.perf_counter() - start, trace=trace, final=s)


@pytest.fixture(scope="module")
def fig1_report(tmp_path_factory):
    cfg = parse_config(fig1_config_path())
    return cfg, evaluate_fig1(cfg, tmp_path_factory.mktemp("fig1"))


def affine_problem():
    """Eight-triangle homogeneous tension with an affine-in-alpha law."""
    h = 0.2
    law = linear_damage_law(1.0, 1.0, 0.01, rho=0.01, phi=(-h / 2, h, -h / 2), D0_K=0.2, D0_G=0.2)
    mesh = generate_rect_mesh(2, 2, 1.0, 1.0).with_boundary_kinds(
        {"left": "normal-sliding", "bottom": "normal-sliding", "right": "traction"})
    load = Loading(tractions={"right": [(np.array([1.0, 0.0]), TimeFunction.table([0, 2], [0, 0.3]))]})
    return law, mesh, load


@pytest.fixture(scope="module")
def affine_runs():
    law, mesh, load = affine_problem()
    out = {}
    for scheme in ("staggered", "monolithic"):
        cfg = SchemeConfig(scheme=scheme, tau=0.05)
        s = initial_state(mesh, law, cfg=cfg)
        trace = AlphaTrace(s.alpha)
        for _ in range(300):
            s = step(s, mesh, law, cfg, load)
            trace.update(s.alpha)
        out[scheme] = (s, trace)
    return out


@pytest.fixture(scope="module")
def opening_plastic_run():
    # nearly quasi-static biaxial tension: the strain stays spherical
    law = at2_law(1.0, 1.0, 0.01, 0.5, D0_K=0.05, D0_G=0.05, rho=1e-4)
    plaw = PlasticLaw.constant(0.5, 0.0, 0.05)
    mesh = generate_rect_mesh(2, 2, 1.0, 1.0).with_boundary_kinds(
        {"left": "normal-sliding", "bottom": "normal-sliding"})
    tf = TimeFunction.table([0, 2], [0, 0.2])
    load = Loading(tractions={"right": [(np.array([1.0, 0.0]), tf)], "top": [(np.array([0.0, 1.0]), tf)]})
    cfg = SchemeConfig(tau=0.05)
    s = initial_state(mesh, law, plastic=True, plaw=plaw)
    trace = AlphaTrace(s.alpha)
    for _ in range(40):
        s = step(s, mesh, law, cfg, load, plaw)
        trace.update(s.alpha)
    return s, trace


# --------------------------------------------------------------------------
# criteria


def test_criterion_01_staggered_energy_identity(energy_identity_run):
    r = energy_identity_run
    ok = r["worst"] <= 1e-10 and r["runtime"] <= 60.0 and r["final"].alpha.min() < 0.5
    detail = (f"max relative residual {r['worst']:.2e} (<= 1e-10), runtime {r['runtime']:.1f} s (<= 60), "
              f"min alpha {r['final'].alpha.min():.2e}")
    assert record(1, ok, detail), detail


def test_criterion_02_crank_nicolson_conservation():
    law = constant_law()
    mesh = generate_rect_mesh(8, 8, 1.0, 1.0, "crossed")
    x, y = mesh.nodes.T
    u0 = 0.01 * np.column_stack([np.sin(np.pi * x) * y, x * y]).ravel()
    cfg = SchemeConfig(tau=0.05)
    s = initial_state(mesh, law, u0=u0, cfg=cfg)
    E0 = s.ledger.energy
    drift = 0.0
    for _ in range(1000):
        s = step(s, mesh, law, cfg)
        drift = max(drift, abs(s.ledger.energy / E0 - 1.0))
    ok = drift <= 1e-9 and s.ledger.kinetic > 0
    assert record(2, ok, f"energy drift {drift:.2e} over 1000 steps (<= 1e-9)"), drift


def test_criterion_03_constraints(energy_identity_run, fig1_report, affine_runs, opening_plastic_run):
    traces = {
        "energy-identity": energy_identity_run["trace"],
        "affine-staggered": affine_runs["staggered"][1],
        "affine-monolithic": affine_runs["monolithic"][1],
        "opening-plastic": opening_plastic_run[1],
    }
    lo = min(t.lo for t in traces.values())
    hi = max(t.hi for t in traces.values())
    incr = max(t.incr for t in traces.values())
    f_lo, f_hi, f_incr = fig1_report[1].alpha_stats
    lo, hi, incr = min(lo, f_lo), max(hi, f_hi), max(incr, f_incr)
    ok = lo >= -1e-9 and hi <= 1 + 1e-9 and incr <= 0.0
    detail = f"{len(traces) + 1} runs: alpha in [{lo:.2e}, {hi:.12g}], max nodal increase {incr:.1e}"
    assert record(3, ok, detail), detail


def test_criterion_04_gradient_checks(rng):
    worst = 0.0
    for law in all_laws().values():
        for _ in range(100):
            a = rng.normal(scale=0.3, size=(2, 2))
            e = 0.5 * (a + a.T)
            al = rng.uniform(0.02, 0.98)
            h = 1e-6 * max(1.0, np.abs(e).max())
            fd = fd_stress(lambda x: stored_energy(x, al, law), e, h)
            worst = max(worst, np.linalg.norm(fd - stress(e, al, law)) / max(np.linalg.norm(fd), 1e-8))
            fa = central_difference(lambda x: stored_energy(e, float(x), law), np.array(al), 1e-6)
            df = driving_force(e, al, law)
            worst = max(worst, abs(fa - df) / max(abs(df), 1e-8))
    ok = worst <= 1e-6
    assert record(4, ok, f"4 laws x 100 samples, max relative FD error {worst:.2e} (<= 1e-6)"), worst


def test_criterion_05_secant_exactness(rng):
    worst = 0.0
    for law in all_laws().values():
        for a, b in rng.uniform(size=(100, 2)):
            worst = max(worst, np.abs(secant_C(a, b, law) * (a - b) - (law.C(a) - law.C(b))).max())
            worst = max(worst, abs(secant_phi(a, b, law) * (a - b) - (law.phi_fun(a) - law.phi_fun(b))))
    ok = worst <= 1e-13
    assert record(5, ok, f"max absolute secant defect {worst:.2e} (<= 1e-13)"), worst


def test_criterion_06_damage_onset():
    errs, visc = [], []
    for G1, gc in [(1.0, 1e-2), (3.0, 0.5)]:
        inviscid = mode_sensitive_law(P([2.0]), P([0.0, 0.0, G1]), gc)
        viscous = mode_sensitive_law(P([2.0]), P([0.0, 0.0, G1]), gc, nu_visc=1e-4)
        S = effective_fracture_stress("II", 1.0, inviscid)
        on0 = shear_onset_sweep(inviscid, 1e-3 * S, 1.0)
        on1 = shear_onset_sweep(viscous, 1e-3 * S, 1.0)
        errs.append(abs(on1 / S - 1))
        visc.append(abs(on1 / on0 - 1))
    ok = max(errs) <= 0.02 and max(visc) < 0.005
    detail = f"max onset error {max(errs):.2e} (<= 2%), viscous shift {max(visc):.1e} (< 0.5%)"
    assert record(6, ok, detail), detail


def pulse_energy_ratio(factor, n_steps=1000):
    law = constant_law()
    mesh = generate_rect_mesh(16, 16, 1.0, 1.0, "crossed")
    x, y = mesh.nodes.T
    w = 4.0 / 16
    bump = 1e-3 * np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / (2 * w * w))
    cfg = SchemeConfig(scheme="explicit", tau=factor * cfl_timestep(mesh, law))
    s = initial_state(mesh, law, u0=np.column_stack([bump, 0 * bump]).ravel(), cfg=cfg)
    E0 = s.ledger.energy
    peak = 1.0
    for k in range(n_steps):
        s = step(s, mesh, law, cfg)
        peak = max(peak, s.ledger.energy / E0)
        if not np.isfinite(peak) or peak >= 1e3:
            break
    return peak, k + 1


def test_criterion_07_cfl_pair():
    stable, _ = pulse_energy_ratio(0.5)
    unstable, steps = pulse_energy_ratio(4.0)
    ok = stable <= 1.05 and unstable >= 10.0
    detail = f"0.5 x CFL peak E/E0 = {stable:.3f} (<= 1.05); 4 x CFL reaches {unstable:.3g} in {steps} steps (>= 10)"
    assert record(7, ok, detail), detail


def test_criterion_08_wave_speed():
    law = constant_law()
    c = law.p_wave_speed()
    nx, Lx = 200, 10.0
    h = Lx / nx
    mesh = generate_rect_mesh(nx, 4, Lx, 0.2).with_boundary_kinds(
        {"top": "normal-sliding", "bottom": "normal-sliding"})
    x, y = mesh.nodes.T
    w, x0 = 4 * h, 2.0
    g = 1e-3 * np.exp(-(x - x0) ** 2 / (2 * w * w))
    # right-going pulse: v = -c du/dx
    u0 = np.column_stack([g, 0 * x]).ravel()
    v0 = np.column_stack([c * (x - x0) / (w * w) * g, 0 * x]).ravel()
    cfg = SchemeConfig(scheme="explicit", tau=0.5 * cfl_timestep(mesh, law))
    s = initial_state(mesh, law, u0=u0, v0=v0, cfg=cfg)
    line = np.flatnonzero(np.isclose(y, 0.1))
    line = line[np.argsort(x[line])]
    ts, xs = [], []
    while s.t < 5.0:
        s = step(s, mesh, law, cfg)
        ux = s.u[2 * line]
        i = int(np.argmax(ux))
        a, b, cc = ux[i - 1], ux[i], ux[i + 1]
        ts.append(s.t)
        xs.append(x[line[i]] + 0.5 * (a - cc) / (a - 2 * b + cc) * h)
    speed = np.polyfit(ts, xs, 1)[0]
    err = abs(speed / c - 1)
    ok = err <= 0.05
    assert record(8, ok, f"measured {speed:.4f} vs sqrt((K+G)/rho) = {c:.4f}, error {100 * err:.2f}% (<= 5%)"), err


def test_criterion_09_fig1_scenario(fig1_report):
    cfg, rep = fig1_report
    eps = cfg.material["eps_pf"]
    h = cfg.mesh["Lx"] / cfg.mesh["nx"]
    ok = rep.passed and np.isclose(eps, 4 * h)
    failed = [ln for ln in rep.lines() if ln.startswith("FAIL")]
    detail = (f"eps = {eps:g} = 4h, rupture at t = {rep.rupture_time:.4g}, "
              + ("all properties hold" if not failed else "; ".join(failed)))
    for line in rep.lines():
        print("   ", line)
    assert record(9, ok, detail), "\n".join(rep.lines())


def test_criterion_10_plasticity(rng, opening_plastic_run):
    worst_rm = 0.0
    for _ in range(100):
        plaw = PlasticLaw.constant(rng.uniform(0, 2), rng.uniform(0, 1) + 1e-3, rng.uniform(0, 1))
        tau, shear = rng.uniform(0.01, 1), rng.uniform(0, 3)
        a, b = rng.normal(size=2) * 2
        trial = np.array([[a, b], [b, -a]])
        c, d = rng.normal(size=2) * 0.5
        p0 = np.array([[c, d], [d, -c]])
        p1 = return_map(trial, p0, plaw, tau, 1.0, shear)
        worst_rm = max(worst_rm, float(return_map_residual(trial, p0, p1, plaw, tau, 1.0, shear)))

    G, gc, H = 1.0, 1e-2, 0.5
    law = mode_sensitive_law(P([1.0]), P([0.0, 0.0, G]), gc)
    sy = 0.75 * effective_fracture_stress("II", 1.0, law)
    plaw = PlasticLaw.constant(H, 0.0, sy)
    target = gc + sy * (np.sqrt(2 * G * gc) - sy) / H
    tau, prev, total = 1.0, None, None
    for _ in range(8):
        total = plastic_shear_rupture(law, plaw, 1e-2, tau, alpha_end=1e-3, max_strain=20.0).total
        if prev is not None and abs(total / prev - 1) <= 0.01:
            break
        prev, tau = total, tau / 2
    rupture_err = abs(total / target - 1)

    s, _ = opening_plastic_run
    opening_flow = float(np.abs(s.pi).max())
    ok = worst_rm <= 1e-10 and rupture_err <= 0.10 and opening_flow == 0.0 and s.alpha.min() < 0.05
    detail = (f"return-map residual {worst_rm:.1e} (<= 1e-10); shear rupture dissipates {total:.5f} vs "
              f"{target:.5f} ({100 * rupture_err:.1f}%, <= 10%); opening rupture (min alpha "
              f"{s.alpha.min():.1e}) max |pi| = {opening_flow:g}")
    assert record(10, ok, detail), detail


def test_criterion_11_monolithic(affine_runs):
    law, mesh, load = affine_problem()
    cfg = SchemeConfig(scheme="monolithic", tau=0.05)
    s = initial_state(mesh, law, cfg=cfg)
    worst_rise, inner = 0.0, 0
    for _ in range(50):
        hist = []
        s = step_monolithic(s, mesh, law, cfg, load, history=hist)
        inner += len(hist)
        rise = np.diff(hist) / max(1.0, abs(hist[0]))
        worst_rise = max(worst_rise, float(rise.max()) if rise.size else 0.0)
    a, _ = affine_runs["staggered"]
    b, _ = affine_runs["monolithic"]
    du = np.linalg.norm(a.u - b.u) / np.linalg.norm(b.u)
    da = np.linalg.norm(a.alpha - b.alpha) / np.linalg.norm(b.alpha)
    ok = worst_rise <= 1e-12 and max(du, da) <= 1e-6 and b.alpha.max() < 0.99
    detail = (f"largest potential increase {worst_rise:.1e} over {inner} half-steps in 50 steps; "
              f"staggered vs monolithic: u {du:.1e}, alpha {da:.1e} (<= 1e-6), alpha = {b.alpha.mean():.4f}")
    assert record(11, ok, detail), detail


def test_criterion_12_box_qp_oracle():
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        A = rng.normal(size=(n, n))
        Q = A @ A.T + 0.5 * np.eye(n)
        b = rng.normal(size=n) * 2
        x = solve_box_qp(DamageSubproblem(sp.csr_matrix(Q), b, 0.0, 1.0)).alpha_new
        ref = grid_box_qp(Q, b, np.zeros(n), np.ones(n), resolution=1e-4)
        worst = max(worst, float(np.abs(x - ref).max()))
    ok = worst <= 2e-4
    assert record(12, ok, f"20 problems, max coordinate gap to grid search {worst:.1e} (<= 2e-4)"), worst
