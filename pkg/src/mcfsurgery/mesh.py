"""Quadratic triangle surface meshes: topology, boundary loops, components, I/O.

Elements are 6-node triangles stored as ``(v0, v1, v2, m01, m12, m20)``,
counterclockwise when seen from the side the outward normal points to.
Midpoint nodes are ordinary nodes; only the connectivity fixes their role.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import (
    DegenerateLoop,
    MeshError,
    NonManifoldEdge,
    OpenChain,
    OrientationError,
)

logger = logging.getLogger(__name__)

# (start vertex, end vertex, midpoint) as local indices, in traversal order
LOCAL_EDGES = np.array([[0, 1, 3], [1, 2, 4], [2, 0, 5]])


@dataclass(eq=False)
class EdgeTable:
    """Undirected vertex-pair edges of a quadratic mesh.

    ``edges[e]`` is the sorted vertex pair, ``midpoints[e]`` the midpoint node,
    ``incidence[e]`` the incident elements (second entry -1 on boundary edges)
    and ``element_edges[t, k]`` the edge id of local edge ``k`` of element ``t``.
    """

    edges: np.ndarray
    midpoints: np.ndarray
    incidence: np.ndarray
    element_edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def counts(self) -> np.ndarray:
        return 1 + (self.incidence[:, 1] >= 0)

    @cached_property
    def _lookup(self) -> dict:
        return {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}

    def edge_id(self, a: int, b: int) -> int:
        return self._lookup[(min(a, b), max(a, b))]

    def __getitem__(self, pair):
        """``table[a, b] -> (midpoint node, [incident elements])``."""
        e = self.edge_id(*pair)
        inc = [int(t) for t in self.incidence[e] if t >= 0]
        return int(self.midpoints[e]), inc

    def __len__(self) -> int:
        return self.n_edges

    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.incidence[:, 1] < 0)


@dataclass(eq=False)
class SurfaceMesh:
    """Nodes plus 6-node curved triangles."""

    positions: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, 3)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 6)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= len(self.positions)):
            raise MeshError("element references a node index out of range")

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def edge_table(self) -> EdgeTable:
        return build_edge_table(self)

    @cached_property
    def vertex_nodes(self) -> np.ndarray:
        return np.unique(self.elements[:, :3])

    def with_positions(self, positions: np.ndarray) -> "SurfaceMesh":
        """Same connectivity (and cached topology) at new node positions."""
        new = SurfaceMesh(positions, self.elements)
        for key in ("edge_table", "vertex_nodes"):
            if key in self.__dict__:
                new.__dict__[key] = self.__dict__[key]
        return new

    def is_closed(self) -> bool:
        return self.n_elements > 0 and bool(np.all(self.edge_table.incidence[:, 1] >= 0))

    def copy(self) -> "SurfaceMesh":
        return SurfaceMesh(self.positions.copy(), self.elements.copy())


@dataclass(eq=False)
class BoundaryLoop:
    """Closed chain of boundary edges.

    ``nodes`` alternates vertex and midpoint nodes (v0, m01, v1, m12, ...);
    the successor of the last midpoint is ``nodes[0]``. With ``orientation``
    equal to +1 the order follows the traversal of the retained elements.
    """

    nodes: np.ndarray
    orientation: int = 1
    center: np.ndarray | None = None
    axis: np.ndarray | None = None
    radius: float | None = None

    @property
    def vertices(self) -> np.ndarray:
        return self.nodes[0::2]

    @property
    def midpoints(self) -> np.ndarray:
        return self.nodes[1::2]

    @property
    def n_edges(self) -> int:
        return len(self.nodes) // 2

    def reversed(self) -> "BoundaryLoop":
        v = self.vertices[::-1]
        m = np.roll(self.midpoints[::-1], -1)
        nodes = np.empty_like(self.nodes)
        nodes[0::2] = np.roll(v, 1)
        nodes[1::2] = np.roll(m, 1)
        axis = None if self.axis is None else -self.axis
        return BoundaryLoop(nodes, -self.orientation, self.center, axis, self.radius)


@dataclass
class ComponentInfo:
    elements: np.ndarray
    nodes: np.ndarray
    euler: int
    diameter: float
    n_vertices: int = field(default=0)
    n_edges: int = field(default=0)


def build_edge_table(mesh: SurfaceMesh) -> EdgeTable:
    """Map each vertex pair to its midpoint node and incident elements."""
    elems = mesh.elements
    if len(elems) == 0:
        raise MeshError("element list is empty")
    a = elems[:, LOCAL_EDGES[:, 0]].ravel()
    b = elems[:, LOCAL_EDGES[:, 1]].ravel()
    mid = elems[:, LOCAL_EDGES[:, 2]].ravel()
    owner = np.repeat(np.arange(len(elems)), 3)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keys = lo * mesh.n_nodes + hi
    uniq, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        bad = uniq[counts > 2][0]
        raise NonManifoldEdge(f"edge {divmod(int(bad), mesh.n_nodes)} has {counts.max()} incident elements")
    edges = np.stack([lo[first], hi[first]], axis=1)
    midpoints = mid[first]
    # entries sorted by edge id; stable so the lower element index comes first
    order = np.argsort(inverse, kind="stable")
    incidence = np.full((len(uniq), 2), -1, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    incidence[:, 0] = owner[order[starts]]
    two = counts == 2
    incidence[two, 1] = owner[order[starts[two] + 1]]
    if np.any(two):
        m_other = mid[order[starts[two] + 1]]
        if np.any(m_other != midpoints[two]):
            raise MeshError("elements sharing an edge disagree on its midpoint node")
    return EdgeTable(edges, midpoints, incidence, inverse.reshape(-1, 3))


def check_orientation(mesh: SurfaceMesh) -> None:
    """Raise OrientationError unless every shared edge is traversed both ways."""
    elems = mesh.elements
    a = elems[:, LOCAL_EDGES[:, 0]].ravel()
    b = elems[:, LOCAL_EDGES[:, 1]].ravel()
    directed = a * mesh.n_nodes + b
    uniq, counts = np.unique(directed, return_counts=True)
    if np.any(counts > 1):
        bad = divmod(int(uniq[counts > 1][0]), mesh.n_nodes)
        raise OrientationError(f"edge {bad} traversed in the same direction by two elements")


def extract_boundary_loops(mesh: SurfaceMesh) -> list[BoundaryLoop]:
    """All maximal closed chains of boundary edges.

    Each loop follows the traversal direction of its retained elements, so the
    retained surface lies to the left when looking along the outward normal.
    At a vertex touched by several boundary chains the walk turns around the
    element fan of that vertex, which keeps each loop on one side of the pinch.
    """
    check_orientation(mesh)
    table = mesh.edge_table
    bnd = table.boundary_edges()
    if len(bnd) == 0:
        return []
    elems = mesh.elements
    # directed boundary edge (a -> b) for each boundary edge id
    out_edge: dict[int, int] = {}
    head: dict[int, tuple[int, int, int, int]] = {}
    multi: dict[int, list[int]] = {}
    for e in bnd:
        t = int(table.incidence[e, 0])
        k = int(np.flatnonzero(table.element_edges[t] == e)[0])
        va, vb, vm = (int(elems[t, i]) for i in LOCAL_EDGES[k])
        head[int(e)] = (va, vb, vm, t)
        multi.setdefault(va, []).append(int(e))
    for va, lst in multi.items():
        if len(lst) == 1:
            out_edge[va] = lst[0]

    def next_edge(e: int) -> int:
        va, vb, _, t = head[e]
        if vb in out_edge:
            return out_edge[vb]
        if vb not in multi:
            raise OpenChain(f"boundary chain ends at vertex {vb}")
        # walk the fan of vb starting in element t
        cur = t
        for _ in range(4 * len(elems) + 4):
            loc = int(np.flatnonzero(elems[cur, :3] == vb)[0])
            k = loc  # local edge starting at vb
            eid = int(table.element_edges[cur, k])
            if table.incidence[eid, 1] < 0:
                return eid
            inc = table.incidence[eid]
            cur = int(inc[1] if inc[0] == cur else inc[0])
        raise OpenChain(f"could not close boundary chain at vertex {vb}")

    used = np.zeros(table.n_edges, dtype=bool)
    loops = []
    for start in bnd:
        start = int(start)
        if used[start]:
            continue
        nodes = []
        e = start
        for _ in range(len(bnd) + 1):
            if used[e]:
                raise OpenChain("boundary edge visited twice")
            used[e] = True
            va, vb, vm, _ = head[e]
            nodes.extend([va, vm])
            e = next_edge(e)
            if e == start:
                break
        else:
            raise OpenChain("boundary chain does not close")
        loops.append(BoundaryLoop(np.array(nodes, dtype=np.int64)))
    return loops


def connected_components(mesh: SurfaceMesh) -> list[ComponentInfo]:
    """Connected components (through shared nodes) with Euler characteristic."""
    if mesh.n_elements == 0:
        return []
    elems = mesh.elements
    rows = np.repeat(elems[:, 0], 6)
    cols = elems.ravel()
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    _, labels = csgraph.connected_components(graph, directed=False)
    elem_label = labels[elems[:, 0]]
    table = mesh.edge_table
    edge_label = elem_label[table.incidence[:, 0]]
    # order components by their smallest element index
    _, first = np.unique(elem_label, return_index=True)
    comps = []
    for lab in elem_label[np.sort(first)]:
        el = np.flatnonzero(elem_label == lab)
        nodes = np.unique(elems[el])
        verts = np.unique(elems[el, :3])
        n_e = int(np.count_nonzero(edge_label == lab))
        pts = mesh.positions[nodes]
        diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        comps.append(ComponentInfo(el, nodes, len(verts) - n_e + len(el), diam, len(verts), n_e))
    return comps


def euler_characteristic(mesh: SurfaceMesh) -> int:
    table = mesh.edge_table
    return len(mesh.vertex_nodes) - table.n_edges + mesh.n_elements


def fit_boundary_circle(loop: BoundaryLoop, positions: np.ndarray):
    """Best-fit circle of a loop: ``(center, axis, radius)``.

    The axis is the direction of the loop's vector area (robust for loops
    that zigzag out of their plane), signed to point away from the retained
    surface: the retained side is the one the loop's right-hand-rule vector
    area points to, so the axis opposes it. The radius is the RMS in-plane
    distance from the centroid.
    """
    pts = positions[loop.vertices]
    if len(pts) < 3:
        raise DegenerateLoop("loop has fewer than 3 vertices")
    center = pts.mean(axis=0)
    d = pts - center
    vec_area = 0.5 * np.cross(d, np.roll(d, -1, axis=0)).sum(axis=0) * loop.orientation
    size = np.einsum("ij,ij->", d, d) / len(d)
    if np.linalg.norm(vec_area) <= 1e-9 * max(size, np.finfo(float).tiny):
        raise DegenerateLoop("loop encloses no area")
    axis = -vec_area / np.linalg.norm(vec_area)
    inplane = d - np.outer(d @ axis, axis)
    radius = float(np.sqrt(np.mean(np.einsum("ij,ij->i", inplane, inplane))))
    loop.center, loop.axis, loop.radius = center, axis, radius
    return center, axis, radius


def compact(mesh: SurfaceMesh, keep_elements: np.ndarray | None = None):
    """Drop unreferenced nodes (optionally keeping only some elements).

    Returns ``(new_mesh, old_to_new)`` with -1 for removed nodes.
    """
    elems = mesh.elements if keep_elements is None else mesh.elements[keep_elements]
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[elems.ravel()] = True
    old_to_new = np.full(mesh.n_nodes, -1, dtype=np.int64)
    old_to_new[used] = np.arange(int(used.sum()))
    return SurfaceMesh(mesh.positions[used], old_to_new[elems]), old_to_new


def mesh_width(mesh: SurfaceMesh) -> float:
    """Maximal element diameter, measured on the vertex triangle."""
    p = mesh.positions[mesh.elements[:, :3]]
    lens = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
    return float(lens.max()) if len(lens) else 0.0


def min_edge_length(mesh: SurfaceMesh) -> float:
    p = mesh.positions[mesh.elements[:, :3]]
    lens = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
    return float(lens.min()) if len(lens) else 0.0


def quadratic_from_linear(vertices: np.ndarray, triangles: np.ndarray, project=None) -> SurfaceMesh:
    """Add one midpoint node per edge of a linear triangle mesh.

    ``project`` (optional) maps an (n, 3) array of midpoint positions onto the
    target surface.
    """
    vertices = np.asarray(vertices, dtype=float)
    tri = np.asarray(triangles, dtype=np.int64)
    a = tri[:, [0, 1, 2]].ravel()
    b = tri[:, [1, 2, 0]].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    uniq, inverse = np.unique(lo * len(vertices) + hi, return_inverse=True)
    ea, eb = np.divmod(uniq, len(vertices))
    mids = 0.5 * (vertices[ea] + vertices[eb])
    if project is not None:
        mids = project(mids)
    positions = np.vstack([vertices, mids])
    elements = np.hstack([tri, len(vertices) + inverse.reshape(-1, 3)])
    return SurfaceMesh(positions, elements)


def write_mesh(mesh: SurfaceMesh, path) -> None:
    """Write the plain-text interchange format (0-based, 17 significant digits)."""
    lines = [f"{mesh.n_nodes} {mesh.n_elements}"]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.positions]
    lines += [" ".join(str(int(i)) for i in e) for e in mesh.elements]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SurfaceMesh:
    lines = Path(path).read_text().split("\n")
    n_nodes, n_elems = (int(s) for s in lines[0].split())
    body = [ln.split() for ln in lines[1 : 1 + n_nodes + n_elems]]
    try:
        pos = np.array([[float(c) for c in row] for row in body[:n_nodes]], dtype=float).reshape(-1, 3)
        elems = np.array([[int(c) for c in row] for row in body[n_nodes:]], dtype=np.int64).reshape(-1, 6)
    except ValueError as exc:
        raise MeshError(f"malformed mesh file {path}") from exc
    if pos.shape != (n_nodes, 3) or elems.shape != (n_elems, 6):
        raise MeshError(f"malformed mesh file {path}")
    return SurfaceMesh(pos, elems)
