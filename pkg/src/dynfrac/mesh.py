"""Planar triangular meshes with tagged boundary edges.

Node coordinates are stored as an ``(N, 2)`` array, triangles as ``(M, 3)``
index triples in counter-clockwise order.  Boundary edges carry a tag name;
the kind of boundary condition attached to a tag (traction, sliding, ...)
is stored alongside so that a single object describes the discrete domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

BOUNDARY_KINDS = ("traction", "normal-sliding", "fixed", "free")


@dataclass(frozen=True)
class BoundaryTag:
    """Named boundary portion and the condition imposed on it.

    ``traction`` and ``free`` leave the displacement unconstrained (a free
    boundary is a traction boundary with zero load).  ``normal-sliding``
    removes the normal displacement component on the tagged nodes and
    ``fixed`` removes both components.
    """

    name: str
    kind: str = "free"

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise ValueError(
                f"boundary tag {self.name!r}: unknown kind {self.kind!r}, "
                f"expected one of {BOUNDARY_KINDS}"
            )


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Immutable P1 triangulation.

    Parameters
    ----------
    nodes : ndarray, shape (N, 2)
        Node coordinates in metres.
    triangles : ndarray of int, shape (M, 3)
        Vertex indices, counter-clockwise.
    boundary_edges : ndarray of int, shape (B, 2)
        Node pairs of boundary edges.
    edge_tags : tuple of str, length B
        Tag name of each boundary edge.
    region_tags : ndarray of int, shape (M,)
        Material region id per triangle.
    tags : dict
        Tag name to :class:`BoundaryTag`.  Tags used by edges but missing
        here default to kind ``free``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple
    region_tags: np.ndarray = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        edge_tags = tuple(str(t) for t in self.edge_tags)
        regions = (
            np.zeros(len(tris), dtype=np.int64)
            if self.region_tags is None
            else np.asarray(self.region_tags, dtype=np.int64).reshape(-1)
        )
        for arr in (nodes, tris, edges, regions):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_edges", edges)
        object.__setattr__(self, "edge_tags", edge_tags)
        object.__setattr__(self, "region_tags", regions)

        tags = {}
        for name in sorted(set(edge_tags)):
            tags[name] = BoundaryTag(name)
        for name, tag in dict(self.tags).items():
            if isinstance(tag, str):
                tag = BoundaryTag(name, tag)
            if tag.name != name:
                raise ValueError(f"tag key {name!r} does not match tag name {tag.name!r}")
            tags[name] = tag
        object.__setattr__(self, "tags", tags)
        self._validate()

    # ------------------------------------------------------------------ checks
    def _validate(self):
        n = len(self.nodes)
        if len(self.triangles) == 0:
            raise ValueError("mesh has no triangles")
        if len(self.edge_tags) != len(self.boundary_edges):
            raise ValueError("one tag per boundary edge required")
        if len(self.region_tags) != len(self.triangles):
            raise ValueError("one region id per triangle required")
        for what, idx in (("triangle", self.triangles), ("boundary edge", self.boundary_edges)):
            bad = np.flatnonzero(((idx < 0) | (idx >= n)).any(axis=1))
            if bad.size:
                raise ValueError(f"{what} {bad[0]} references a node index out of range")
        area = self.signed_areas
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            raise ValueError(
                f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}"
            )
        owners = self._edge_owner_count(self.boundary_edges)
        bad = np.flatnonzero(owners != 1)
        if bad.size:
            raise ValueError(
                f"boundary edge {bad[0]} belongs to {owners[bad[0]]} triangles, expected 1"
            )

    def _edge_owner_count(self, edges):
        tri = self.triangles
        all_edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        all_edges.sort(axis=1)
        keys, counts = np.unique(all_edges, axis=0, return_counts=True)
        lookup = {tuple(k): c for k, c in zip(keys.tolist(), counts.tolist())}
        query = np.sort(edges, axis=1)
        return np.array([lookup.get(tuple(e), 0) for e in query.tolist()], dtype=int)

    # -------------------------------------------------------------- geometry
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @property
    def total_area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """Constant P1 basis gradients, shape ``(M, 3, 2)`` (1/m)."""
        return element_shape_gradients(self)

    @cached_property
    def inradii(self) -> np.ndarray:
        """Radius of the inscribed circle of every triangle (m)."""
        p = self.nodes[self.triangles]
        edge_len = np.stack(
            [np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1) for i in range(3)], axis=1
        )
        return 2.0 * self.signed_areas / edge_len.sum(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.boundary_edges
        return np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1)

    def tag_nodes(self, name: str) -> np.ndarray:
        """Sorted unique node indices on edges carrying tag ``name``."""
        if name not in self.tags:
            raise KeyError(f"unknown boundary tag {name!r}")
        mask = np.array([t == name for t in self.edge_tags], dtype=bool)
        return np.unique(self.boundary_edges[mask])

    def tag_edges(self, name: str) -> np.ndarray:
        if name not in self.tags:
            raise KeyError(f"unknown boundary tag {name!r}")
        mask = np.array([t == name for t in self.edge_tags], dtype=bool)
        return np.flatnonzero(mask)

    def with_boundary_kinds(self, kinds: dict) -> "Mesh2D":
        """Return a copy with the given ``{tag: kind}`` assignments."""
        tags = dict(self.tags)
        for name, kind in kinds.items():
            if name not in tags:
                raise KeyError(f"unknown boundary tag {name!r}")
            tags[name] = BoundaryTag(name, kind)
        return replace(self, tags=tags)

    @cached_property
    def constrained_dofs(self) -> np.ndarray:
        """Interleaved displacement dofs removed by sliding/fixed conditions.

        Sliding requires an axis-aligned normal; the normal direction of each
        tagged edge is read from the geometry.
        """
        out = set()
        for name, tag in self.tags.items():
            if tag.kind == "fixed":
                for i in self.tag_nodes(name):
                    out.update((2 * i, 2 * i + 1))
            elif tag.kind == "normal-sliding":
                for k in self.tag_edges(name):
                    a, b = self.boundary_edges[k]
                    d = self.nodes[b] - self.nodes[a]
                    scale = np.linalg.norm(d)
                    if abs(d[0]) <= 1e-12 * scale:
                        comp = 0  # vertical edge, normal along x
                    elif abs(d[1]) <= 1e-12 * scale:
                        comp = 1
                    else:
                        raise ValueError(
                            f"sliding tag {name!r}: edge {k} is not axis-aligned"
                        )
                    out.update((2 * a + comp, 2 * b + comp))
        return np.array(sorted(out), dtype=np.int64)

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(2 * self.n_nodes, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)


def element_shape_gradients(mesh: Mesh2D) -> np.ndarray:
    """P1 basis-function gradients per triangle.

    Parameters
    ----------
    mesh : Mesh2D

    Returns
    -------
    ndarray, shape (M, 3, 2)
        ``grads[e, i]`` is the gradient of the hat function of local node
        ``i`` on element ``e``.

    Raises
    ------
    ValueError
        If a triangle has zero area; the message names the element.
    """
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    two_a = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    scale = np.maximum(np.ptp(x, axis=1), np.ptp(y, axis=1)) ** 2
    bad = np.flatnonzero(np.abs(two_a) <= 1e-14 * scale)
    if bad.size:
        raise ValueError(f"degenerate triangle {bad[0]} (zero area)")
    g = np.empty((len(p), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (y[:, j] - y[:, k]) / two_a
        g[:, i, 1] = (x[:, k] - x[:, j]) / two_a
    return g


def generate_rect_mesh(nx: int, ny: int, Lx: float, Ly: float, pattern: str = "diagonal",
                       origin=(0.0, 0.0)) -> Mesh2D:
    """Structured triangulation of the rectangle ``[0, Lx] x [0, Ly]``.

    Parameters
    ----------
    nx, ny : int
        Number of cells along x and y.
    Lx, Ly : float
        Side lengths (m).
    pattern : {"diagonal", "crossed"}
        ``diagonal`` splits every cell along the diagonal from its lower-left
        to its upper-right corner: ``(nx+1)(ny+1)`` nodes, ``2 nx ny``
        triangles.  ``crossed`` adds a node at each cell centre and splits
        the cell into four triangles: ``(nx+1)(ny+1) + nx ny`` nodes,
        ``4 nx ny`` triangles.
    origin : (float, float)
        Lower-left corner.

    Returns
    -------
    Mesh2D
        With sides tagged ``left``, ``right``, ``bottom``, ``top``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (Lx > 0 and Ly > 0):
        raise ValueError(f"side lengths must be positive, got Lx={Lx}, Ly={Ly}")
    if pattern not in ("diagonal", "crossed"):
        raise ValueError(f"unknown mesh pattern {pattern!r}")
    nx, ny = int(nx), int(ny)
    x0, y0 = origin
    xs = x0 + Lx * np.arange(nx + 1) / nx
    ys = y0 + Ly * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)  # row j is y-level j
    nodes = [np.column_stack([X.ravel(), Y.ravel()])]

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    n0, n1, n2, n3 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    if pattern == "diagonal":
        tris = np.stack(
            [np.column_stack([n0, n1, n2]), np.column_stack([n0, n2, n3])], axis=1
        ).reshape(-1, 3)
    else:
        c = (nx + 1) * (ny + 1) + np.arange(nx * ny)
        centres = np.column_stack([x0 + Lx * (I + 0.5) / nx, y0 + Ly * (J + 0.5) / ny])
        nodes.append(centres)
        tris = np.stack(
            [
                np.column_stack([n0, n1, c]),
                np.column_stack([n1, n2, c]),
                np.column_stack([n2, n3, c]),
                np.column_stack([n3, n0, c]),
            ],
            axis=1,
        ).reshape(-1, 3)
    nodes = np.concatenate(nodes)

    perimeter = (
        [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)]
        + [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)]
        + [(vid(i, ny), vid(i - 1, ny)) for i in range(nx, 0, -1)]
        + [(vid(0, j), vid(0, j - 1)) for j in range(ny, 0, -1)]
    )
    edges = np.array(perimeter, dtype=np.int64)
    tags = tag_rect_boundary(nodes, edges)
    return Mesh2D(nodes, tris, edges, tuple(tags), np.zeros(len(tris), dtype=np.int64))


def tag_rect_boundary(nodes: np.ndarray, edges: np.ndarray, tol_rel: float = 1e-12) -> list:
    """Geometric left/right/bottom/top tags for edges of an axis-aligned box."""
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    tol = tol_rel * float(np.max(hi - lo))
    tags = []
    for a, b in edges:
        pa, pb = nodes[a], nodes[b]
        if abs(pa[0] - lo[0]) <= tol and abs(pb[0] - lo[0]) <= tol:
            tags.append("left")
        elif abs(pa[0] - hi[0]) <= tol and abs(pb[0] - hi[0]) <= tol:
            tags.append("right")
        elif abs(pa[1] - lo[1]) <= tol and abs(pb[1] - lo[1]) <= tol:
            tags.append("bottom")
        elif abs(pa[1] - hi[1]) <= tol and abs(pb[1] - hi[1]) <= tol:
            tags.append("top")
        else:
            tags.append("interior")
    return tags


def write_mesh(mesh: Mesh2D, path) -> None:
    """Write the ASCII node/triangle/boundary format."""
    lines = [f"nodes {mesh.n_nodes}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines.append(f"triangles {mesh.n_elements}")
    lines += [f"{i} {j} {k} {r}" for (i, j, k), r in zip(mesh.triangles.tolist(), mesh.region_tags.tolist())]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.edge_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh2D:
    """Read the ASCII format written by :func:`write_mesh`."""
    tokens = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    pos = 0

    def header(word):
        nonlocal pos
        if pos >= len(tokens) or len(tokens[pos]) != 2 or tokens[pos][0] != word:
            raise ValueError(f"{path}: expected '{word} <count>' at record {pos + 1}")
        count = int(tokens[pos][1])
        pos += 1
        rows = tokens[pos:pos + count]
        if len(rows) != count:
            raise ValueError(f"{path}: section '{word}' truncated")
        pos += count
        return rows

    nodes = np.array([[float(a), float(b)] for a, b in header("nodes")])
    tri_rows = header("triangles")
    tris = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in tri_rows], dtype=np.int64)
    regions = np.array([int(r[3]) if len(r) > 3 else 0 for r in tri_rows], dtype=np.int64)
    b_rows = header("boundary")
    edges = np.array([[int(r[0]), int(r[1])] for r in b_rows], dtype=np.int64).reshape(-1, 2)
    tags = tuple(r[2] for r in b_rows)
    return Mesh2D(nodes, tris, edges, tags, regions)
