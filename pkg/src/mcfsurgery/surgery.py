"""Numerical surgery: excise high-curvature regions, cap the wounds, recover fields.

Pipeline of :func:`perform_surgery`:

1. mark every node with ``H > H2``;
2. delete connected components whose nodes are all marked (extinct parts);
3. excise every element touching a marked node;
4. trace the boundary loops of the remaining open surface and fit circles;
5. per loop, build a spherical cap with the same number of boundary edges
   and curvature ``2/r <= H2``, place it on the fitted circle and sew it in
   with a strip of two triangles per edge pair;
6. recover the normal on the seam by area-weighted element normals and the
   mean curvature on a patch around the seam from ``H = div nu``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (
    DegenerateElement,
    DegenerateLoop,
    EdgeCountMismatch,
    EmptyPatch,
    EmptySurface,
    InvalidEdgeCount,
    MCFError,
    OrientationMismatch,
    SurgeryFailed,
    ZeroNormal,
)
from .fem import Assembler, element_geometry, quadrature_rule
from .flow import solve_spd
from .mesh import (
    BoundaryLoop,
    SurfaceMesh,
    check_orientation,
    compact,
    connected_components,
    euler_characteristic,
    extract_boundary_loops,
    fit_boundary_circle,
    quadratic_from_linear,
)

logger = logging.getLogger(__name__)

DEFAULT_SLACK = 0.05
# barycentric coordinates of the six element nodes (v0, v1, v2, m01, m12, m20)
NODE_BARY = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])


# ---------------------------------------------------------------------------
# records


@dataclass
class SphericalCap:
    """Cap of a sphere of radius ``radius`` over a base circle of radius ``base_radius``.

    Local frame: axis ``+z``, base circle in the plane ``z = 0`` centred at
    the origin, apex at ``z = height``. ``boundary`` lists the ``m`` base
    vertices counter-clockwise about ``+z`` and ``boundary_midpoints[k]``
    is the midpoint of the edge ``boundary[k] -> boundary[k+1]``.
    """

    radius: float
    base_radius: float
    height: float
    m: int
    rings: int
    mesh: SurfaceMesh
    boundary: np.ndarray
    boundary_midpoints: np.ndarray
    base_angles: np.ndarray | None = None

    def __post_init__(self):
        if self.base_angles is None:
            self.base_angles = 2 * np.pi * np.arange(self.m) / self.m

    @property
    def sphere_center(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.height - self.radius])

    @property
    def normals(self) -> np.ndarray:
        d = self.mesh.positions - self.sphere_center
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @property
    def curvature(self) -> np.ndarray:
        return np.full(self.mesh.n_nodes, 2.0 / self.radius)


@dataclass
class LoopRecord:
    m: int
    rho: float
    r: float
    height: float


@dataclass
class SurgeryReport:
    """Summary of one surgery event (serialised as ``key: value`` lines)."""

    time: float = 0.0
    H2: float = 0.0
    max_H_before: float = 0.0
    marked_nodes: int = 0
    removed_nodes: int = 0
    removed_elements: int = 0
    loops: list[LoopRecord] = field(default_factory=list)
    seam_elements: int = 0
    extinct_components: int = 0
    components_before: int = 0
    euler_open: int = 0
    components_after: int = 0
    euler_after: list[int] = field(default_factory=list)
    max_H_after: float = 0.0
    grow_passes: int = 0

    @property
    def caps(self) -> int:
        return len(self.loops)

    def to_text(self) -> str:
        lines = [
            f"time: {self.time:.10g}",
            f"H2: {self.H2:.10g}",
            f"max_H_before: {self.max_H_before:.10g}",
            f"marked_nodes: {self.marked_nodes}",
            f"removed_nodes: {self.removed_nodes}",
            f"removed_elements: {self.removed_elements}",
            f"extinct_components: {self.extinct_components}",
            f"caps: {self.caps}",
        ]
        for i, rec in enumerate(self.loops):
            lines.append(f"loop_{i}: m={rec.m} rho={rec.rho:.10g} r={rec.r:.10g} height={rec.height:.10g}")
        lines += [
            f"seam_elements: {self.seam_elements}",
            f"grow_passes: {self.grow_passes}",
            f"components_before: {self.components_before}",
            f"euler_open: {self.euler_open}",
            f"components_after: {self.components_after}",
            f"euler_after: {' '.join(str(e) for e in self.euler_after)}",
            f"max_H_after: {self.max_H_after:.10g}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SurgeryReport":
        rep = cls()
        for line in text.strip().splitlines():
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key.startswith("loop_"):
                kv = dict(item.split("=") for item in value.split())
                rep.loops.append(LoopRecord(int(kv["m"]), float(kv["rho"]), float(kv["r"]), float(kv["height"])))
            elif key == "euler_after":
                rep.euler_after = [int(v) for v in value.split()]
            elif key == "caps":
                continue
            elif hasattr(rep, key):
                cur = getattr(rep, key)
                setattr(rep, key, int(value) if isinstance(cur, int) else float(value))
        return rep


# ---------------------------------------------------------------------------
# marking and excision


def mark_nodes(curvature, H2: float) -> np.ndarray:
    """Indices of all nodes with ``H > H2``."""
    return np.flatnonzero(np.asarray(curvature) > H2)


def remove_extinct_components(mesh: SurfaceMesh, normals, curvature, marked):
    """Delete every connected component in which all nodes are marked.

    Returns ``(mesh, normals, curvature, marked, n_removed)`` with ``marked``
    re-indexed to the pruned mesh.
    """
    is_marked = np.zeros(mesh.n_nodes, dtype=bool)
    is_marked[np.asarray(marked, dtype=np.int64)] = True
    comps = connected_components(mesh)
    dead = [c for c in comps if is_marked[c.nodes].all()]
    if not dead:
        return mesh, np.asarray(normals), np.asarray(curvature), np.flatnonzero(is_marked), 0
    keep = np.ones(mesh.n_elements, dtype=bool)
    for c in dead:
        keep[c.elements] = False
    if not keep.any():
        empty = SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 6), dtype=np.int64))
        return empty, np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64), len(dead)
    new, old_to_new = compact(mesh, keep)
    kept = old_to_new >= 0
    marked_new = old_to_new[is_marked & kept]
    return new, np.asarray(normals)[kept], np.asarray(curvature)[kept], np.sort(marked_new), len(dead)


def excise(mesh: SurfaceMesh, normals, curvature, marked):
    """Remove every element with a marked node and compact the node set.

    Returns ``(open_mesh, normals, curvature, old_to_new)``.
    """
    is_marked = np.zeros(mesh.n_nodes, dtype=bool)
    is_marked[np.asarray(marked, dtype=np.int64)] = True
    keep = ~is_marked[mesh.elements].any(axis=1)
    if not keep.any():
        raise EmptySurface("excision removed every element")
    new, old_to_new = compact(mesh, keep)
    kept = old_to_new >= 0
    return new, np.asarray(normals)[kept], np.asarray(curvature)[kept], old_to_new


# ---------------------------------------------------------------------------
# caps


def choose_cap(rho: float, H2: float):
    """Cap sphere radius ``r = max(rho, 2/H2)`` and apex height ``r - sqrt(r^2 - rho^2)``."""
    r = max(float(rho), 2.0 / float(H2))
    height = r - np.sqrt(max(r * r - rho * rho, 0.0))
    return r, float(height)


_CAP_CACHE: dict[tuple[int, ...], np.ndarray] = {}


def _zip_rings(outer: np.ndarray, inner: np.ndarray, inner_phase: float, outer_angles=None) -> list[list[int]]:
    """Triangulate the band between two latitude rings (outer counter-clockwise).

    ``outer_angles`` (increasing, starting at 0) default to uniform spacing;
    inner vertex ``j`` sits at ``2 pi j / len(inner) + inner_phase``.
    """
    a, b = len(outer), len(inner)
    if b == 1:
        return [[outer[i], outer[(i + 1) % a], inner[0]] for i in range(a)]
    if outer_angles is None:
        outer_angles = 2 * np.pi * np.arange(a) / a
    outer_next = np.append(outer_angles[1:], 2 * np.pi)
    tris = []
    i = j = 0
    while i < a or j < b:
        next_inner = 2 * np.pi * (j + 1) / b + inner_phase
        if i < a and (j >= b or outer_next[i] <= next_inner):
            tris.append([outer[i % a], outer[(i + 1) % a], inner[j % b]])
            i += 1
        else:
            tris.append([outer[i % a], inner[(j + 1) % b], inner[j % b]])
            j += 1
    return tris


def _cap_connectivity(counts: tuple[int, ...]) -> np.ndarray:
    """Linear triangles of a latitude-ring cap with the given ring vertex counts."""
    if counts not in _CAP_CACHE:
        starts = np.concatenate([[0], np.cumsum(counts)])
        tris: list[list[int]] = []
        for k in range(len(counts) - 1):
            outer = np.arange(starts[k], starts[k + 1])
            inner = np.arange(starts[k + 1], starts[k + 2])
            tris += _zip_rings(outer, inner, np.pi / counts[k + 1])
        _CAP_CACHE[counts] = np.array(tris, dtype=np.int64)
    return _CAP_CACHE[counts]


def _ring_counts(m: int, theta_base: float, rings: int) -> tuple[int, ...]:
    counts = [m]
    for k in range(1, rings):
        theta = theta_base * (1 - k / rings)
        c = int(round(m * np.sin(theta) / np.sin(theta_base)))
        counts.append(max(3, min(c, counts[-1])))
    counts.append(1)
    return tuple(counts)


def generate_cap_mesh(m: int, r: float, rho: float, edge_length: float | None = None,
                      base_angles=None) -> SphericalCap:
    """Latitude-ring spherical cap with ``m`` boundary edges.

    The boundary ring sits at polar angle ``arcsin(rho/r)``; rings towards
    the pole are spaced by about the boundary edge length ``2 rho sin(pi/m)``
    (or ``edge_length`` if given) with proportionally fewer vertices, closed
    by a fan at the apex. Midpoint nodes lie on the sphere. ``base_angles``
    (``m`` strictly increasing azimuths spanning less than a full turn)
    replace the uniform azimuths of the boundary vertices.
    """
    if m < 3:
        raise InvalidEdgeCount(f"cap needs at least 3 boundary edges, got {m}")
    if rho <= 0 or r < rho * (1 - 1e-12):
        raise ValueError(f"invalid cap radii r={r}, rho={rho}")
    if base_angles is not None:
        base_angles = np.asarray(base_angles, dtype=float)
        steps = np.diff(np.append(base_angles, base_angles[0] + 2 * np.pi))
        if len(base_angles) != m or np.any(steps <= 0):
            raise ValueError("base_angles must be m strictly increasing azimuths within one turn")
    rho = min(rho, r)
    theta_base = np.arcsin(min(rho / r, 1.0))
    h = 2 * rho * np.sin(np.pi / m) if edge_length is None else edge_length
    rings = max(1, int(round(r * theta_base / h)))
    counts = _ring_counts(m, theta_base, rings)
    height = r - np.sqrt(max(r * r - rho * rho, 0.0))
    center = np.array([0.0, 0.0, height - r])
    start = 0.0 if base_angles is None else float(base_angles[0])
    pts = []
    for k, c in enumerate(counts):
        theta = theta_base * (1 - k / rings)
        if k == 0 and base_angles is not None:
            phi = base_angles
        else:
            phi = 2 * np.pi * np.arange(c) / c + (0.0 if k == 0 else np.pi / c) + start
        ring = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.full(c, np.cos(theta))])
        pts.append(center + r * ring)
    verts = np.vstack(pts)
    verts[:m, 2] = 0.0  # base ring exactly in the plane

    def radial(p):
        d = p - center
        return center + r * d / np.linalg.norm(d, axis=1, keepdims=True)

    tris = _cap_connectivity(counts)
    if base_angles is not None and len(counts) > 1:
        first_band = np.array(_zip_rings(np.arange(m), m + np.arange(counts[1]), np.pi / counts[1],
                                         base_angles - start), dtype=np.int64)
        n_first = sum(1 for t in tris if t.max() < m + counts[1])
        tris = np.vstack([first_band, tris[n_first:]])
    mesh = quadratic_from_linear(verts, tris, project=radial)
    boundary = np.arange(m)
    table = mesh.edge_table
    mids = np.array([table[(k, (k + 1) % m)][0] for k in range(m)], dtype=np.int64)
    angles = None if base_angles is None else base_angles.copy()
    return SphericalCap(r, rho, float(height), m, rings, mesh, boundary, mids, angles)


# ---------------------------------------------------------------------------
# sewing


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2, axis


def _cone_fit(loop: BoundaryLoop, positions, loop_normals):
    """Heights ``s`` along the loop axis, axis distances ``d``, mean axial and
    radial normal components and the mean loop edge length."""
    lv = loop.vertices
    p = positions[lv] - loop.center
    s = p @ loop.axis
    radial = p - s[:, None] * loop.axis
    d = np.linalg.norm(radial, axis=1)
    e_r = radial / np.maximum(d, np.finfo(float).tiny)[:, None]
    n_axial = float(np.mean(loop_normals @ loop.axis))
    n_radial = float(np.mean(np.einsum("ij,ij->i", loop_normals, e_r)))
    edge = float(np.linalg.norm(positions[np.roll(lv, -1)] - positions[lv], axis=1).mean())
    return s, d, n_axial, n_radial, edge


def match_cap(loop: BoundaryLoop, positions, loop_normals, H2: float, gap_factor: float = 0.5):
    """Cap geometry continuing the retained surface beyond a wound loop.

    With ``s`` the height of a loop vertex along the loop axis (towards the
    wound) and ``d`` its distance from the axis, the surface near the loop is
    treated as a cone ``d(s)`` whose slope follows from the surface normals at
    the loop vertices. The cap base plane lies ``gap_factor`` mean loop edge
    lengths beyond the highest loop vertex, the base radius continues the
    cone to that plane, and the sphere radius makes the cap tangent to the
    cone there, enlarged if needed so that ``2/r <= H2``. Where the surface
    widens towards the wound the cap is a hemisphere on the mean loop radius.

    Returns ``(rho_base, r, height, base_offset, tangent_r)``.
    """
    s, d, n_axial, n_radial, edge = _cone_fit(loop, positions, loop_normals)
    base = float(s.max()) + gap_factor * edge
    if n_axial > 0 and n_radial > 0.1:
        slope = -n_axial / n_radial
        rho = max(float(np.mean(d + slope * (base - s))), 0.25 * float(d.mean()))
        tangent_r = rho / min(n_radial, 1.0)
    else:
        rho = tangent_r = float(d.mean())
    r = max(tangent_r, rho, 2.0 / H2)
    return rho, r, r - np.sqrt(max(r * r - rho * rho, 0.0)), base, tangent_r


def _component_labels(mesh: SurfaceMesh) -> np.ndarray:
    """Component label of every node (-1 for nodes in no element)."""
    labels = np.full(mesh.n_nodes, -1, dtype=np.int64)
    for k, comp in enumerate(connected_components(mesh)):
        labels[comp.nodes] = k
    return labels


def _narrow_neck_vertices(loops, mesh: SurfaceMesh, H2: float, gap_factor: float, margin: float) -> np.ndarray:
    """Vertices to excise so that every narrowing loop admits a tangent cap
    with curvature ``2/r <= H2 / margin``."""
    r_min = margin * 2.0 / H2
    out = []
    labels = None
    verts = mesh.vertex_nodes
    for loop in loops:
        nu = recover_normals(mesh, loop.vertices)
        s, d, n_axial, n_radial, edge = _cone_fit(loop, mesh.positions, nu)
        _, _, _, _, tangent_r = match_cap(loop, mesh.positions, nu, H2, gap_factor)
        if not (n_axial > 0 and n_radial > 0.1) or tangent_r >= r_min:
            continue
        slope = -n_axial / n_radial
        rho_req = r_min * min(n_radial, 1.0)
        s_req = float(np.mean(s)) + (rho_req - float(np.mean(d))) / slope
        s_thr = s_req - gap_factor * edge
        if labels is None:
            labels = _component_labels(mesh)
        p = mesh.positions[verts] - loop.center
        h = p @ loop.axis
        reach = 3.0 * float(d.max()) + float(s.max()) - s_thr
        near = (np.linalg.norm(p, axis=1) < reach) & (labels[verts] == labels[loop.vertices[0]])
        out.append(verts[near & (h > s_thr)])
    return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def _loop_base_angles(loop: BoundaryLoop, positions, min_fraction: float = 0.25):
    """Cap base azimuths that put cap vertex ``-i`` near the azimuth of loop vertex ``i``.

    Returns ``None`` (uniform base ring) unless the loop winds exactly once
    and monotonically about its axis with every angular step at least
    ``min_fraction`` of the uniform step.
    """
    e1, e2, _ = _frame(loop.axis)
    d = positions[loop.vertices] - loop.center
    psi = np.arctan2(d @ e2, d @ e1)
    m = len(psi)
    alpha = psi[(-np.arange(m)) % m]
    steps = np.mod(np.diff(np.append(alpha, alpha[0])) + np.pi, 2 * np.pi) - np.pi
    if abs(steps.sum() - 2 * np.pi) > 1e-6 or steps.min() < min_fraction * 2 * np.pi / m:
        return None
    return alpha[0] + np.concatenate([[0.0], np.cumsum(steps[:-1])])


def place_cap(cap: SphericalCap, loop: BoundaryLoop, positions, gap: float = 0.0):
    """Rigidly place a cap on the fitted circle of ``loop``.

    Returns the global cap node positions and the index ``shift`` such that
    cap base vertex ``(-i) mod m`` is paired with loop vertex ``i + shift``.
    The cap base plane is offset by ``gap`` along the loop axis; the rotation
    about the axis best matches the loop vertices' azimuths.
    """
    e1, e2, axis = _frame(loop.axis)
    m = cap.m
    d = positions[loop.vertices] - loop.center
    psi = np.arctan2(d @ e2, d @ e1)
    # the loop runs clockwise about the axis; cap vertex -i sits at azimuth phi0 + base_angles[-i]
    phi0 = np.angle(np.mean(np.exp(1j * (psi - cap.base_angles[(-np.arange(m)) % m]))))
    rot = np.array([[np.cos(phi0), -np.sin(phi0), 0], [np.sin(phi0), np.cos(phi0), 0], [0, 0, 1]])
    frame = np.column_stack([e1, e2, axis])
    local = cap.mesh.positions @ rot.T
    glob = loop.center + gap * axis + local @ frame.T
    # start the walk at the closest pair of opposite nodes
    paired = glob[(-np.arange(m)) % m]
    shift = int(np.argmin(np.linalg.norm(positions[loop.vertices] - paired, axis=1)))
    return glob, shift, frame @ rot


def sew(loop_vertices, loop_midpoints, cap_vertices, cap_midpoints, positions, first_new: int):
    """Seam strip between a wound loop and a cap base ring.

    ``loop_vertices[i] -> loop_vertices[i+1]`` is the traversal direction of
    the retained elements (midpoint ``loop_midpoints[i]``) and
    ``cap_vertices[k] -> cap_vertices[k+1]`` that of the cap elements
    (midpoint ``cap_midpoints[k]``); loop vertex ``i`` is paired with cap
    vertex ``(-i) mod m``. Each quadrilateral is split along its shorter
    diagonal. New midpoint nodes are averages of their edge end points.

    Returns ``(elements (2m, 6), new_positions (2m, 3))``; new node indices
    start at ``first_new``.
    """
    L = np.asarray(loop_vertices)
    m = len(L)
    if len(cap_vertices) != m:
        raise EdgeCountMismatch(f"loop has {m} edges, cap has {len(cap_vertices)}")
    # the retained surface and the cap must lie on opposite sides of the seam
    # band, so their boundary rings circulate in opposite senses
    area_l = np.cross(positions[L], positions[np.roll(L, -1)]).sum(axis=0)
    ring = np.asarray(cap_vertices)
    area_c = np.cross(positions[ring], positions[np.roll(ring, -1)]).sum(axis=0)
    if area_l @ area_c > 0:
        raise OrientationMismatch("loop and cap boundary circulate in the same sense")
    C = np.asarray(cap_vertices)[(-np.arange(m)) % m]
    # cap edge C[i] -> C[i+1] (clockwise) is cap edge (-i-1) -> (-i) reversed
    cmid = np.asarray(cap_midpoints)[(-np.arange(m) - 1) % m]
    lmid = np.asarray(loop_midpoints)
    rung = first_new + np.arange(m)  # midpoint of L[i]-C[i]
    diag = first_new + m + np.arange(m)
    new_pos = np.zeros((2 * m, 3))
    new_pos[:m] = 0.5 * (positions[L] + positions[C])
    elements = []
    for i in range(m):
        j = (i + 1) % m
        d1 = np.linalg.norm(positions[L[i]] - positions[C[j]])
        d2 = np.linalg.norm(positions[L[j]] - positions[C[i]])
        if d1 <= d2:
            new_pos[m + i] = 0.5 * (positions[L[i]] + positions[C[j]])
            elements.append([L[j], L[i], C[j], lmid[i], diag[i], rung[j]])
            elements.append([L[i], C[i], C[j], rung[i], cmid[i], diag[i]])
        else:
            new_pos[m + i] = 0.5 * (positions[L[j]] + positions[C[i]])
            elements.append([L[j], L[i], C[i], lmid[i], rung[i], diag[i]])
            elements.append([L[j], C[i], C[j], diag[i], cmid[i], rung[j]])
    return np.array(elements, dtype=np.int64), new_pos


# ---------------------------------------------------------------------------
# recovery


def recover_normals(mesh: SurfaceMesh, nodes) -> np.ndarray:
    """Area-weighted average of the element normals at the given nodes.

    Each adjacent element contributes its isoparametric unit normal evaluated
    at the node itself, weighted by the element area.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    rule = quadrature_rule(5)
    geom = element_geometry(mesh.positions, mesh.elements, rule.points)
    areas = (geom.area_element * rule.weights).sum(axis=1)
    at_nodes = element_geometry(mesh.positions, mesh.elements, NODE_BARY).normals
    acc = np.zeros((mesh.n_nodes, 3))
    np.add.at(acc, mesh.elements.ravel(), (areas[:, None, None] * at_nodes).reshape(-1, 3))
    out = acc[nodes]
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms <= 1e-300):
        raise ZeroNormal(f"weighted normal vanishes at node {int(nodes[np.argmin(norms)])}")
    return out / norms[:, None]


def patch_elements(mesh: SurfaceMesh, seed_nodes, depth: int = 2) -> np.ndarray:
    """Elements within graph distance ``depth`` of ``seed_nodes`` (element rings)."""
    in_set = np.zeros(mesh.n_nodes, dtype=bool)
    in_set[np.asarray(seed_nodes, dtype=np.int64)] = True
    sel = np.zeros(mesh.n_elements, dtype=bool)
    for _ in range(depth):
        sel = in_set[mesh.elements].any(axis=1)
        in_set[mesh.elements[sel].ravel()] = True
    return np.flatnonzero(sel)


def recover_curvature(mesh: SurfaceMesh, normals, curvature, patch, tol: float = 1e-12):
    """Mean curvature on the interior nodes of a patch from ``H = div nu``.

    Solves ``int H phi = int div_h(nu_h) phi`` for test functions of interior
    nodes, with ``curvature`` prescribing the Dirichlet values on the patch
    boundary nodes (nodes shared with elements outside the patch). Returns
    ``(interior_nodes, H_interior)`` in global node numbering.
    """
    patch = np.asarray(patch, dtype=np.int64)
    if len(patch) == 0:
        raise EmptyPatch("recovery patch has no elements")
    inside = np.zeros(mesh.n_elements, dtype=bool)
    inside[patch] = True
    touches_outside = np.zeros(mesh.n_nodes, dtype=bool)
    touches_outside[mesh.elements[~inside].ravel()] = True
    sub, old_to_new = compact(mesh, inside)
    glob = np.flatnonzero(old_to_new >= 0)
    interior = ~touches_outside[glob]
    if not interior.any():
        raise EmptyPatch("recovery patch has no interior nodes")
    rule = quadrature_rule(5)
    asm = Assembler(sub, rule)
    geom = asm.geometry(sub.positions)
    nu = np.asarray(normals)[glob]
    div = np.einsum("fai,fqai->fq", nu[sub.elements], geom.surface_gradients)
    rhs = asm.load_vector(sub.positions, div, geom)
    mass = asm.assemble(sub.positions, geom).mass
    h_b = np.asarray(curvature, dtype=float)[glob]
    idx_i = np.flatnonzero(interior)
    idx_b = np.flatnonzero(~interior)
    m_ii = mass[idx_i][:, idx_i]
    b = rhs[idx_i] - mass[idx_i][:, idx_b] @ h_b[idx_b]
    h_i = solve_spd(sparse.csr_matrix(m_ii), b, tol=tol, max_iters=10 * len(idx_i) + 100)
    return glob[idx_i], h_i


def discrete_fields(mesh: SurfaceMesh, tol: float = 1e-12):
    """``(nu, H)`` of a bare mesh: averaged normals and the L2 projection of ``div_h nu_h``."""
    nu = recover_normals(mesh, np.arange(mesh.n_nodes))
    asm = Assembler(mesh)
    geom = asm.geometry(mesh.positions)
    div = np.einsum("fai,fqai->fq", nu[mesh.elements], geom.surface_gradients)
    mass = asm.assemble(mesh.positions, geom).mass
    H = solve_spd(mass, asm.load_vector(mesh.positions, div, geom), tol=tol, max_iters=10 * mesh.n_nodes + 100)
    return nu, H


# ---------------------------------------------------------------------------
# orchestration


def _bad_loop_vertices(loops: list[BoundaryLoop], positions) -> np.ndarray:
    """Vertices of loops that cannot be capped (too short, pinched or collinear)."""
    bad = []
    seen: dict[int, int] = {}
    for k, loop in enumerate(loops):
        verts = loop.vertices
        if loop.n_edges < 3 or len(np.unique(verts)) < len(verts):
            bad.extend(verts.tolist())
            continue
        try:
            fit_boundary_circle(loop, positions)
        except DegenerateLoop:
            bad.extend(verts.tolist())
            continue
        for v in verts.tolist():
            if v in seen and seen[v] != k:
                bad.append(v)
            seen[v] = k
    return np.unique(np.array(bad, dtype=np.int64))


def _open_fragments(mesh: SurfaceMesh, min_elements: int) -> np.ndarray:
    """Nodes of open components with fewer than ``min_elements`` elements."""
    table = mesh.edge_table
    open_elem = np.zeros(mesh.n_elements, dtype=bool)
    open_elem[table.incidence[table.incidence[:, 1] < 0, 0]] = True
    out = [c.nodes for c in connected_components(mesh) if len(c.elements) < min_elements and open_elem[c.elements].any()]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def perform_surgery(mesh: SurfaceMesh, normals, curvature, H2: float, time: float = 0.0,
                    slack: float = DEFAULT_SLACK, patch_depth: int = 2, gap_factor: float = 0.5,
                    min_fragment: int = 12, max_grow: int = 10, neck_margin: float = 1.25):
    """Excise nodes with ``H > H2``, cap the wounds and recover ``nu`` and ``H``.

    Returns ``(mesh, normals, curvature, report)``. Components whose nodes are
    all marked are deleted instead of capped. Wounds whose boundary cannot be
    capped (pinched or tiny loops, small open fragments) are grown by
    excising the elements around them. ``gap_factor`` times the mean loop
    edge length sets the offset of the cap base beyond the loop's fitted
    plane (see :func:`place_cap`).
    """
    report = SurgeryReport(time=float(time), H2=float(H2))
    try:
        return _perform(mesh, normals, curvature, H2, report, slack, patch_depth, gap_factor, min_fragment, max_grow,
                        neck_margin)
    except SurgeryFailed:
        raise
    except MCFError as exc:
        raise SurgeryFailed(f"surgery failed: {exc}", report) from exc


def _perform(mesh, normals, curvature, H2, report, slack, patch_depth, gap_factor, min_fragment, max_grow,
             neck_margin):
    normals = np.asarray(normals, dtype=float)
    curvature = np.asarray(curvature, dtype=float)
    report.max_H_before = float(curvature.max())
    report.components_before = len(connected_components(mesh))
    marked = mark_nodes(curvature, H2)
    report.marked_nodes = len(marked)
    n_nodes0, n_elems0 = mesh.n_nodes, mesh.n_elements
    mesh, normals, curvature, marked, n_dead = remove_extinct_components(mesh, normals, curvature, marked)
    report.extinct_components = n_dead
    if mesh.n_elements == 0:
        report.removed_nodes, report.removed_elements = n_nodes0, n_elems0
        return mesh, normals, curvature, report

    # excise, growing the wound until every loop can be capped
    base_mesh, base_nu, base_H = mesh, normals, curvature
    to_remove = np.zeros(base_mesh.n_nodes, dtype=bool)
    to_remove[marked] = True
    for grow in range(max_grow + 1):
        if to_remove.any():
            open_mesh, nu_o, h_o, old_to_new = excise(base_mesh, base_nu, base_H, np.flatnonzero(to_remove))
        else:
            open_mesh, nu_o, h_o, old_to_new = base_mesh, base_nu, base_H, np.arange(base_mesh.n_nodes)
        new_to_old = np.flatnonzero(old_to_new >= 0)
        loops = extract_boundary_loops(open_mesh)
        bad = np.union1d(_bad_loop_vertices(loops, open_mesh.positions), _open_fragments(open_mesh, min_fragment))
        if len(bad) == 0:
            bad = _narrow_neck_vertices(loops, open_mesh, H2, gap_factor, neck_margin)
            if len(bad) == 0 or grow == max_grow:
                break
        if grow == max_grow:
            raise SurgeryFailed(f"could not obtain cappable wound boundaries after {max_grow} passes", report)
        to_remove[new_to_old[bad]] = True
        report.grow_passes = grow + 1
    report.removed_nodes = n_nodes0 - open_mesh.n_nodes
    report.euler_open = euler_characteristic(open_mesh)
    report.removed_elements = n_elems0 - open_mesh.n_elements

    positions = [open_mesh.positions]
    elements = [open_mesh.elements]
    nu_parts = [nu_o]
    h_parts = [h_o]
    seam_nodes = []
    n_total = open_mesh.n_nodes
    for loop in loops:
        pos_open = open_mesh.positions
        lv = loop.vertices
        edge_len = np.linalg.norm(pos_open[np.roll(lv, -1)] - pos_open[lv], axis=1)
        rho, r, height, gap, _ = match_cap(loop, pos_open, recover_normals(open_mesh, lv), H2, gap_factor)
        cap = generate_cap_mesh(loop.n_edges, r, rho, edge_length=float(edge_len.mean()),
                                base_angles=_loop_base_angles(loop, pos_open))
        cap_pos, shift, rot = place_cap(cap, loop, pos_open, gap)
        offset = n_total
        cap_elems = cap.mesh.elements + offset
        cap_nu = cap.normals @ rot.T
        n_total += cap.mesh.n_nodes
        # start the walk at the closest pair: loop vertex shift + i meets cap vertex -(shift + i)
        lv_s = np.roll(lv, -shift)
        lm_s = np.roll(loop.midpoints, -shift)
        order = (np.arange(cap.m) - shift) % cap.m
        all_pos = np.vstack(positions + [cap_pos])
        seam, new_pos = sew(lv_s, lm_s, offset + cap.boundary[order], offset + cap.boundary_midpoints[order],
                            all_pos, n_total)
        n_total += len(new_pos)
        positions += [cap_pos, new_pos]
        elements += [cap_elems, seam]
        nu_parts += [cap_nu, np.zeros((len(new_pos), 3))]
        h_parts += [cap.curvature, np.zeros(len(new_pos))]
        seam_nodes.append(np.unique(seam))
        report.seam_elements += len(seam)
        report.loops.append(LoopRecord(loop.n_edges, float(rho), float(r), float(height)))

    new_mesh = SurfaceMesh(np.vstack(positions), np.vstack(elements))
    normals = np.vstack(nu_parts)
    curvature = np.concatenate(h_parts)
    if loops:
        check_orientation(new_mesh)
        if not new_mesh.is_closed():
            raise SurgeryFailed("sewn mesh is not closed", report)
        try:
            element_geometry(new_mesh.positions, new_mesh.elements, quadrature_rule(5).points)
        except DegenerateElement as exc:
            raise SurgeryFailed(f"sewn mesh has a degenerate element: {exc}", report) from exc
        seam = np.unique(np.concatenate(seam_nodes))
        normals[seam] = recover_normals(new_mesh, seam)
        # seam midpoints need a Dirichlet-free start value; the patch solve overwrites them
        patch = patch_elements(new_mesh, seam, patch_depth)
        interior, h_int = recover_curvature(new_mesh, normals, curvature, patch)
        curvature[interior] = h_int
    comps = connected_components(new_mesh)
    report.components_after = len(comps)
    report.euler_after = [c.euler for c in comps]
    report.max_H_after = float(curvature.max())
    if report.max_H_after > H2 * (1 + slack):
        logger.warning("post-surgery max H %.4g exceeds H2 (1 + slack) = %.4g", report.max_H_after, H2 * (1 + slack))
    return new_mesh, normals, curvature, report
