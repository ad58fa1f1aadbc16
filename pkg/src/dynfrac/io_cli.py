"""Run configuration, field output and the ``dynfrac`` command line.

Configuration files are INI-style::

    [mesh]
    source = generate
    nx = 16
    ...
    [material]
    law = at2-phasefield
    rho = 1.0 kg/m^3
    ...
    [load.pull]
    target = top
    vector = 0, 1.0
    table = 0 0; 1e-3 1; 1 1

Numbers are SI.  A value may carry a unit suffix; it must then be the SI
unit of the key (``eps_pf = 0.01 m`` is accepted, ``0.01 mm`` is not).
Every problem in a file is reported at once.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import json
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from .assembly import Loading, TimeFunction
from .energy_audit import EnergyLedger, EnergyLog, check_energy_csv
from .material import LAW_KINDS, REGIMES, MaterialLaw, at1_law, at2_law, linear_damage_law, mode_sensitive_law
from .mesh import BOUNDARY_KINDS, Mesh2D, generate_rect_mesh, read_mesh, write_mesh
from .plasticity import PlasticLaw
from .schemes import cfl_timestep, initial_state, step
from .state import SCHEMES, SchemeConfig, SimState

REQUIRED = object()

# key: (kind, SI unit or None, default)
SCHEMA = {
    "mesh": {
        "source": (("generate", "file"), None, "generate"),
        "nx": ("int", None, None),
        "ny": ("int", None, None),
        "Lx": ("float", "m", None),
        "Ly": ("float", "m", None),
        "pattern": (("diagonal", "crossed"), None, "diagonal"),
        "origin_x": ("float", "m", 0.0),
        "origin_y": ("float", "m", 0.0),
        "path": ("str", None, None),
    },
    "material": {
        "law": (LAW_KINDS, None, REQUIRED),
        "rho": ("float", "kg/m^3", REQUIRED),
        "K": ("float", "Pa", None),
        "G": ("float", "Pa", None),
        "K_fun": ("floats", "Pa", None),
        "G_fun": ("floats", "Pa", None),
        "phi": ("floats", "J/m^3", None),
        "gc": ("float", "J/m^2", REQUIRED),
        "eps_pf": ("float", "m", None),
        "eps0": ("float", "m", None),
        "eps_reg": ("float", None, 0.0),
        "residual": ("float", None, 0.0),
        "kappa": ("float", None, None),
        "p_grad": ("float", None, 2.0),
        "nu_visc": ("float", "Pa*s", 0.0),
        "D0_K": ("float", "Pa*s", 0.0),
        "D0_G": ("float", "Pa*s", 0.0),
        "chi": ("float", "s", 0.0),
        "regime": (REGIMES, None, "unidirectional"),
    },
    "plasticity": {
        "H": ("float", "Pa", REQUIRED),
        "G_nh": ("float", "Pa*s", 0.0),
        "sigma_yld": ("floats", "Pa", REQUIRED),
        "kappa1": ("float", None, 0.0),
    },
    "scheme": {
        "scheme": (SCHEMES, None, "staggered"),
        "tau": ("float", "s", REQUIRED),
        "n_steps": ("int", None, REQUIRED),
        "newton_tol": ("float", None, 1e-12),
        "qp_tol": ("float", None, 1e-12),
        "max_inner_iters": ("int", None, 200),
        "cfl_safety": ("float", None, 0.5),
        "lumped": ("bool", None, False),
        "alpha_quadrature": (("element-mean", "nodal-midpoint"), None, "element-mean"),
        "linear_solver": (("direct", "cg"), None, "direct"),
        "lin_tol": ("float", None, 1e-12),
    },
    "initial": {
        "u_x": ("expr", "m", "0"),
        "u_y": ("expr", "m", "0"),
        "v_x": ("expr", "m/s", "0"),
        "v_y": ("expr", "m/s", "0"),
        "alpha": ("expr", None, "1"),
    },
    "output": {
        "directory": ("str", None, "out"),
        "cadence": ("int", None, 10),
        "vtk": ("bool", None, True),
        "energy_csv": ("str", None, "energy.csv"),
    },
    "load": {
        "target": ("str", None, REQUIRED),
        "vector": ("floats", None, REQUIRED),
        "table": ("table", None, None),
        "polynomial": ("floats", None, None),
    },
}
OPTIONAL_SECTIONS = ("plasticity",)
RECT_TAGS = ("left", "right", "bottom", "top")
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# --------------------------------------------------------------------------
# polynomial expressions over x, y

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Pow, ast.Div)


def _check_expr(node):
    if isinstance(node, ast.Expression):
        return _check_expr(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return False
    if isinstance(node, ast.Name):
        if node.id not in ("x", "y"):
            raise ValueError(f"unknown variable {node.id!r} (only x and y)")
        return True
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _check_expr(node.operand)
    if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        left = _check_expr(node.left)
        right = _check_expr(node.right)
        if isinstance(node.op, ast.Pow):
            if right or not (isinstance(node.right, ast.Constant) and isinstance(node.right.value, int)
                             and node.right.value >= 0):
                raise ValueError("exponents must be non-negative integer literals")
        if isinstance(node.op, ast.Div) and right:
            raise ValueError("division by an expression in x, y is not a polynomial")
        return left or right
    raise ValueError(f"unsupported syntax {type(node).__name__}")


def parse_expression(text: str):
    """Compile a polynomial in ``x, y``; returns ``f(x, y) -> ndarray``."""
    tree = ast.parse(text.strip(), mode="eval")
    _check_expr(tree)
    code = compile(tree, "<expression>", "eval")

    def f(x, y):
        x = np.asarray(x, dtype=float)
        val = eval(code, {"__builtins__": {}}, {"x": x, "y": np.asarray(y, dtype=float)})
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape).copy()

    return f


# --------------------------------------------------------------------------
# value parsing


def _split_unit(raw: str, unit, where):
    raw = raw.strip()
    if unit is None:
        return raw
    m = re.fullmatch(rf"(.*?)\s+([A-Za-z][A-Za-z0-9*/^.\-]*)", raw)
    if m and not re.fullmatch(_NUM, m.group(2)):
        body, suffix = m.group(1), m.group(2)
        if suffix != unit:
            raise ValueError(f"{where}: unit {suffix!r} is not the SI unit {unit!r}")
        return body
    return raw


def _parse_value(kind, unit, raw, where):
    # expressions carry their unit implicitly (x, y would read as suffixes)
    text = raw.strip() if kind in ("expr", "str", "table") else _split_unit(raw, unit, where)
    if isinstance(kind, tuple):
        if text not in kind:
            raise ValueError(f"{where}: {text!r} is not one of {', '.join(kind)}")
        return text
    if kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{where}: {text!r} is not a number") from None
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"{where}: {text!r} is not an integer") from None
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"{where}: {text!r} is not a boolean")
    if kind == "floats":
        try:
            return tuple(float(p) for p in text.replace(",", " ").split())
        except ValueError:
            raise ValueError(f"{where}: {text!r} is not a list of numbers") from None
    if kind == "table":
        rows = [r.split() for r in text.split(";") if r.strip()]
        try:
            pairs = tuple((float(a), float(b)) for a, b in rows)
        except ValueError:
            raise ValueError(f"{where}: table rows must be 'time value' pairs separated by ';'") from None
        if not pairs or any(t1 <= t0 for (t0, _), (t1, _) in zip(pairs, pairs[1:])):
            raise ValueError(f"{where}: table times must be non-empty and increasing")
        return pairs
    if kind == "expr":
        try:
            parse_expression(text)
        except (SyntaxError, ValueError) as exc:
            raise ValueError(f"{where}: {exc}") from None
        return text
    return text


def _format_value(kind, value) -> str:
    if isinstance(kind, tuple) or kind in ("str", "expr"):
        return str(value)
    if kind == "float":
        return repr(float(value))
    if kind == "int":
        return str(int(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "table":
        return "; ".join(f"{t!r} {v!r}" for t, v in value)
    raise AssertionError(kind)


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Validated run description.

    Sections are stored as plain dicts of parsed values (defaults filled
    in), so two configs compare equal when they describe the same run.
    ``base_dir`` resolves relative paths and is not part of equality.
    """

    mesh: dict
    boundary: dict
    material: dict
    scheme: dict
    initial: dict
    output: dict
    loads: dict = field(default_factory=dict)
    plasticity: dict | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    # ---------------------------------------------------------------- builders
    def build_mesh(self) -> Mesh2D:
        m = self.mesh
        if m["source"] == "generate":
            mesh = generate_rect_mesh(m["nx"], m["ny"], m["Lx"], m["Ly"], m["pattern"],
                                      (m["origin_x"], m["origin_y"]))
        else:
            mesh = read_mesh(self.base_dir / m["path"])
        missing = [t for t in list(self.boundary) + self._load_tags() if t not in mesh.tags]
        if missing:
            raise ConfigError([f"[boundary]/[load]: tag {t!r} does not exist in the mesh" for t in missing])
        return mesh.with_boundary_kinds(self.boundary)

    def _load_tags(self):
        return [ld["target"] for ld in self.loads.values() if ld["target"] != "bulk"]

    def build_law(self) -> MaterialLaw:
        m = self.material
        kw = {k: m[k] for k in ("nu_visc", "chi", "regime", "p_grad", "D0_K", "D0_G")}
        if m.get("kappa") is not None:
            kw["kappa"] = m["kappa"]
        law = m["law"]
        if law in ("at2-phasefield", "at1-phasefield"):
            ctor = at2_law if law == "at2-phasefield" else at1_law
            return ctor(m["K"], m["G"], m["gc"], m["eps_pf"], m.get("eps0"), rho=m["rho"], **kw)
        if law == "linear-damage":
            return linear_damage_law(m["K"], m["G"], m["gc"], rho=m["rho"], residual=m["residual"],
                                     phi=m.get("phi") or (0.0,), **kw)
        return mode_sensitive_law(Polynomial(m["K_fun"]), Polynomial(m["G_fun"]), m["gc"],
                                  eps_reg=m["eps_reg"], rho=m["rho"], phi=m.get("phi") or (0.0,), **kw)

    def build_plastic_law(self) -> PlasticLaw | None:
        if self.plasticity is None:
            return None
        p = self.plasticity
        return PlasticLaw(p["H"], p["G_nh"], Polynomial(p["sigma_yld"]), p["kappa1"])

    def build_scheme(self) -> SchemeConfig:
        s = {k: v for k, v in self.scheme.items() if k != "n_steps"}
        return SchemeConfig(**s)

    def build_loading(self) -> Loading:
        bulk, tractions = [], {}
        for name in sorted(self.loads):
            ld = self.loads[name]
            if ld.get("table") is not None:
                ts, vs = zip(*ld["table"])
                tf = TimeFunction.table(ts, vs)
            elif ld.get("polynomial") is not None:
                tf = TimeFunction.polynomial(ld["polynomial"])
            else:
                tf = TimeFunction.constant(1.0)
            term = (np.asarray(ld["vector"], dtype=float), tf)
            if ld["target"] == "bulk":
                bulk.append(term)
            else:
                tractions.setdefault(ld["target"], []).append(term)
        return Loading(bulk, tractions)

    def initial_fields(self, mesh: Mesh2D):
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        ev = {k: parse_expression(self.initial[k])(x, y) for k in SCHEMA["initial"]}
        u0 = np.column_stack([ev["u_x"], ev["u_y"]]).ravel()
        v0 = np.column_stack([ev["v_x"], ev["v_y"]]).ravel()
        return u0, v0, ev["alpha"]

    def build(self):
        """``(mesh, law, plaw, cfg, loading, state0)``."""
        mesh = self.build_mesh()
        law = self.build_law()
        plaw = self.build_plastic_law()
        cfg = self.build_scheme()
        loading = self.build_loading()
        u0, v0, a0 = self.initial_fields(mesh)
        state = initial_state(mesh, law, u0, v0, a0, plastic=plaw is not None, cfg=cfg, plaw=plaw)
        return mesh, law, plaw, cfg, loading, state


def _section_kind(name):
    return "load" if name.startswith("load.") else name


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    errors = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([str(exc).splitlines()[0]]) from None

    parsed, boundary, loads = {}, {}, {}
    for sec in cp.sections():
        kind = _section_kind(sec)
        if sec == "boundary":
            for key, raw in cp[sec].items():
                if raw.strip() not in BOUNDARY_KINDS:
                    errors.append(f"[boundary] {key}: kind {raw.strip()!r} is not one of {', '.join(BOUNDARY_KINDS)}")
                else:
                    boundary[key] = raw.strip()
            continue
        if kind not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        schema = SCHEMA[kind]
        vals = {}
        for key, raw in cp[sec].items():
            if key not in schema:
                errors.append(f"[{sec}] unknown key {key!r}")
                continue
            ktype, unit, _ = schema[key]
            try:
                vals[key] = _parse_value(ktype, unit, raw, f"[{sec}] {key}")
            except ValueError as exc:
                errors.append(str(exc))
        for key, (_, _, default) in schema.items():
            if key in vals or key in cp[sec]:
                continue
            if default is REQUIRED:
                errors.append(f"[{sec}] missing required key {key!r}")
            else:
                vals[key] = default
        if kind == "load":
            loads[sec[len("load."):]] = vals
        else:
            parsed[sec] = vals

    for sec in SCHEMA:
        if sec in ("load",) + OPTIONAL_SECTIONS or sec in parsed:
            continue
        if any(d is REQUIRED for _, _, d in SCHEMA[sec].values()):
            errors.append(f"missing section [{sec}]")
        else:
            parsed[sec] = {k: d for k, (_, _, d) in SCHEMA[sec].items()}
    if errors:
        raise ConfigError(errors)

    errors += _cross_check(parsed, boundary, loads)
    if errors:
        raise ConfigError(errors)
    return RunConfig(parsed["mesh"], boundary, parsed["material"], parsed["scheme"],
                     parsed["initial"], parsed["output"], loads, parsed.get("plasticity"),
                     Path(base_dir))


def _cross_check(parsed, boundary, loads) -> list:
    errors = []
    m = parsed["mesh"]
    if m["source"] == "generate":
        for key in ("nx", "ny", "Lx", "Ly"):
            if m.get(key) is None:
                errors.append(f"[mesh] missing required key {key!r} for source = generate")
        for key in ("nx", "ny"):
            if m.get(key) is not None and m[key] < 1:
                errors.append(f"[mesh] {key} must be >= 1")
        for key in ("Lx", "Ly"):
            if m.get(key) is not None and not m[key] > 0:
                errors.append(f"[mesh] {key} must be positive")
        known = set(RECT_TAGS)
        for tag in list(boundary) + [ld["target"] for ld in loads.values()]:
            if tag != "bulk" and tag not in known:
                errors.append(f"tag {tag!r} does not exist on a generated mesh ({', '.join(RECT_TAGS)})")
    elif m.get("path") is None:
        errors.append("[mesh] missing required key 'path' for source = file")

    mat = parsed["material"]
    law = mat["law"]
    if law == "mode-sensitive":
        for key in ("K_fun", "G_fun"):
            if mat.get(key) is None:
                errors.append(f"[material] missing required key {key!r} for law = {law}")
    else:
        for key in ("K", "G"):
            if mat.get(key) is None:
                errors.append(f"[material] missing required key {key!r} for law = {law}")
    if law.endswith("phasefield") and mat.get("eps_pf") is None:
        errors.append(f"[material] missing required key 'eps_pf' for law = {law}")

    sch = parsed["scheme"]
    if sch["n_steps"] < 0:
        errors.append("[scheme] n_steps must be >= 0")
    if parsed["output"]["cadence"] < 1:
        errors.append("[output] cadence must be >= 1")
    for name, ld in loads.items():
        if len(ld["vector"]) != 2:
            errors.append(f"[load.{name}] vector needs 2 components")
        if ld.get("table") is not None and ld.get("polynomial") is not None:
            errors.append(f"[load.{name}] give either table or polynomial, not both")
    if "plasticity" in parsed and sch["scheme"] != "staggered":
        errors.append("[plasticity] requires scheme = staggered")

    if not errors:
        # constructor-level validation (moduli, D0, tolerances, ...)
        cfg = RunConfig(m, boundary, mat, sch, parsed["initial"], parsed["output"], loads,
                        parsed.get("plasticity"))
        for what, build in (("material", cfg.build_law), ("plasticity", cfg.build_plastic_law),
                            ("scheme", cfg.build_scheme)):
            try:
                build()
            except ValueError as exc:
                errors.append(f"[{what}] {exc}")
    return errors


def parse_config(path) -> RunConfig:
    """Parse a configuration file (see module docstring)."""
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)


def serialize_config(cfg: RunConfig) -> str:
    """INI text that parses back to an equal :class:`RunConfig`."""
    out = []

    def emit(title, kind, vals):
        out.append(f"[{title}]")
        for key, (ktype, _, _) in SCHEMA[kind].items():
            if vals.get(key) is not None:
                out.append(f"{key} = {_format_value(ktype, vals[key])}")
        out.append("")

    emit("mesh", "mesh", cfg.mesh)
    if cfg.boundary:
        out.append("[boundary]")
        out += [f"{k} = {v}" for k, v in cfg.boundary.items()]
        out.append("")
    emit("material", "material", cfg.material)
    if cfg.plasticity is not None:
        emit("plasticity", "plasticity", cfg.plasticity)
    emit("scheme", "scheme", cfg.scheme)
    emit("initial", "initial", cfg.initial)
    emit("output", "output", cfg.output)
    for name in sorted(cfg.loads):
        emit(f"load.{name}", "load", cfg.loads[name])
    return "\n".join(out)


# --------------------------------------------------------------------------
# field output


def write_vtk(state: SimState, mesh: Mesh2D, path) -> None:
    """Legacy ASCII VTK unstructured grid (deterministic byte content).

    Point data ``u``, ``v`` (vectors) and ``alpha``; cell data ``pi``
    (tensor) when the state carries plastic strain.  Values use ``%.17g``.
    """
    f = lambda x: format(float(x), ".17g")
    n, m = mesh.n_nodes, mesh.n_elements
    lines = [
        "# vtk DataFile Version 3.0",
        f"dynfrac state step={state.step} t={f(state.t)}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{f(x)} {f(y)} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    lines.append(f"POINT_DATA {n}")
    for name, vec in (("u", state.u), ("v", state.v)):
        lines.append(f"VECTORS {name} double")
        lines += [f"{f(a)} {f(b)} 0" for a, b in vec.reshape(-1, 2)]
    lines += ["SCALARS alpha double 1", "LOOKUP_TABLE default"]
    lines += [f(a) for a in state.alpha]
    if state.pi is not None:
        lines.append(f"CELL_DATA {m}")
        lines.append("TENSORS pi double")
        for p11, p22, p12 in state.pi:
            lines += [f"{f(p11)} {f(p12)} 0", f"{f(p12)} {f(p22)} 0", "0 0 0"]
    Path(path).write_text("\n".join(lines) + "\n")


def write_snapshot(state: SimState, mesh: Mesh2D, vtk_path) -> Path:
    """VTK file plus a JSON sidecar with ``t``, ``step``, proto-stress and ledger."""
    vtk_path = Path(vtk_path)
    write_vtk(state, mesh, vtk_path)
    side = vtk_path.with_suffix(".json")
    data = {
        "t": state.t,
        "step": state.step,
        "varsigma": None if state.varsigma is None else state.varsigma.tolist(),
        "ledger": state.ledger.as_dict(),
    }
    side.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    return side


def read_snapshot(vtk_path) -> SimState:
    """Inverse of :func:`write_snapshot`."""
    vtk_path = Path(vtk_path)
    lines = vtk_path.read_text().splitlines()
    fields, i = {}, 0
    n = m = None
    while i < len(lines):
        tok = lines[i].split()
        if tok and tok[0] == "POINTS":
            n = int(tok[1])
        elif tok and tok[0] == "CELLS":
            m = int(tok[1])
        elif tok and tok[0] == "VECTORS":
            rows = [list(map(float, r.split()[:2])) for r in lines[i + 1:i + 1 + n]]
            fields[tok[1]] = np.array(rows).ravel()
            i += n
        elif tok and tok[0] == "SCALARS":
            fields[tok[1]] = np.array([float(r) for r in lines[i + 2:i + 2 + n]])
            i += n + 1
        elif tok and tok[0] == "TENSORS":
            rows = [list(map(float, r.split())) for r in lines[i + 1:i + 1 + 3 * m]]
            t = np.array(rows).reshape(m, 3, 3)
            fields[tok[1]] = np.column_stack([t[:, 0, 0], t[:, 1, 1], t[:, 0, 1]])
            i += 3 * m
        i += 1
    side = json.loads(vtk_path.with_suffix(".json").read_text())
    vs = side["varsigma"]
    return SimState(side["t"], fields["u"], fields["v"], fields["alpha"], fields.get("pi"),
                    None if vs is None else np.array(vs), EnergyLedger(**side["ledger"]),
                    side["step"])


# --------------------------------------------------------------------------
# run loop


@dataclass
class RunResult:
    state: SimState
    max_residual: float
    final_residual: float
    snapshots: list
    energy_csv: Path


def run(cfg: RunConfig, out_dir=None, built=None, callback=None) -> RunResult:
    """Execute the time loop of ``cfg``.

    Writes ``energy_csv`` (every step) and, when enabled, snapshots every
    ``cadence`` steps including the initial state.  ``callback(state)`` is
    called after each step.
    """
    mesh, law, plaw, scfg, loading, state = built if built is not None else cfg.build()
    out = Path(out_dir) if out_dir is not None else cfg.base_dir / cfg.output["directory"]
    out.mkdir(parents=True, exist_ok=True)
    cadence = cfg.output["cadence"]
    snaps = []
    csv_path = out / cfg.output["energy_csv"]
    worst = res = 0.0
    with EnergyLog(csv_path) as log:
        res = log.write(state.t, state.ledger)
        for k in range(cfg.scheme["n_steps"] + 1):
            if k > 0:
                state = step(state, mesh, law, scfg, loading, plaw)
                res = log.write(state.t, state.ledger)
                worst = max(worst, res)
                if callback is not None:
                    callback(state)
            if cfg.output["vtk"] and k % cadence == 0:
                path = out / f"state_{k:06d}.vtk"
                write_snapshot(state, mesh, path)
                snaps.append(path)
    return RunResult(state, worst, res, snaps, csv_path)


# --------------------------------------------------------------------------
# command line


def fig1_config_path() -> Path:
    return Path(str(resources.files("dynfrac") / "scenarios" / "fig1.ini"))


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    result = run(cfg, args.out)
    print(f"steps: {cfg.scheme['n_steps']}  snapshots: {len(result.snapshots)}")
    print(f"energy log: {result.energy_csv}")
    print(f"final residual: {result.final_residual:.3e}")
    return 0


def _cmd_mesh_gen(args) -> int:
    mesh = generate_rect_mesh(args.nx, args.ny, args.Lx, args.Ly, args.pattern)
    write_mesh(mesh, args.output)
    print(f"{args.output}: {mesh.n_nodes} nodes, {mesh.n_elements} triangles")
    return 0


def _cmd_cfl(args) -> int:
    cfg = parse_config(args.config)
    bound = cfl_timestep(cfg.build_mesh(), cfg.build_law())
    safety = cfg.scheme["cfl_safety"]
    print(f"cfl bound: {bound:.6e} s")
    print(f"recommended tau: {safety * bound:.6e} s (cfl_safety = {safety})")
    return 0


def _cmd_check_energy(args) -> int:
    try:
        worst = check_energy_csv(args.csv, args.threshold)
    except ValueError as exc:
        print(f"check-energy: {exc}", file=sys.stderr)
        return 1
    print(f"max residual: {worst:.3e} (threshold {args.threshold:.1e})")
    return 0


def _cmd_scenario(args) -> int:
    from .scenarios import evaluate_fig1

    cfg = parse_config(args.config or fig1_config_path())
    report = evaluate_fig1(cfg, args.out)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynfrac", description="Dynamic phase-field fracture in viscoelastic solids.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: [output] directory)")
    r.set_defaults(func=_cmd_run)

    g = sub.add_parser("mesh-gen", help="write a structured rectangle mesh")
    g.add_argument("--nx", type=int, required=True)
    g.add_argument("--ny", type=int, required=True)
    g.add_argument("--Lx", type=float, required=True)
    g.add_argument("--Ly", type=float, required=True)
    g.add_argument("--pattern", choices=("diagonal", "crossed"), default="diagonal")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_cmd_mesh_gen)

    c = sub.add_parser("cfl", help="print the explicit-scheme time step bound")
    c.add_argument("config")
    c.set_defaults(func=_cmd_cfl)

    e = sub.add_parser("check-energy", help="recompute the balance residual of an energy CSV")
    e.add_argument("csv")
    e.add_argument("--threshold", type=float, default=1e-8)
    e.set_defaults(func=_cmd_check_energy)

    s = sub.add_parser("scenario", help="built-in verification scenarios")
    s.add_argument("name", choices=("fig1",))
    s.add_argument("--config", help="override the shipped scenario config")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=_cmd_scenario)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, KeyError, OSError) as exc:
        print(f"dynfrac {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
