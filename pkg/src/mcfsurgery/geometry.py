"""Initial surfaces: level-set descriptions, projection, meshes and initial data."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from .errors import ProjectionStall, ZeroGradient
from .mesh import SurfaceMesh, mesh_width, quadratic_from_linear, read_mesh

logger = logging.getLogger(__name__)

FD_GRADIENT_STEP = 1e-6
FD_CURVATURE_STEP = 1e-5


@dataclass(frozen=True)
class LevelSetSurface:
    """Zero level set of ``value``; negative inside.

    ``gradient`` and ``hessian`` are optional analytic derivatives acting on
    (n, 3) arrays; missing ones fall back to central differences.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.gradient is not None:
            return self.gradient(x)
        h = FD_GRADIENT_STEP
        return np.stack([(self.value(x + h * e) - self.value(x - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)

    def unit_normal(self, x) -> np.ndarray:
        g = self.grad(x)
        norm = np.linalg.norm(g, axis=-1)
        if np.any(norm == 0) or not np.all(np.isfinite(norm)):
            raise ZeroGradient(f"vanishing gradient of level set {self.name!r}")
        return g / norm[..., None]

    def mean_curvature(self, x) -> np.ndarray:
        """``div(grad d / |grad d|)``, positive on spheres."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.hessian is not None and self.gradient is not None:
            g = self.gradient(x)
            hess = self.hessian(x)
            gn = np.linalg.norm(g, axis=-1)
            if np.any(gn == 0):
                raise ZeroGradient(f"vanishing gradient of level set {self.name!r}")
            n = g / gn[..., None]
            lap = np.trace(hess, axis1=-2, axis2=-1)
            nhn = np.einsum("ni,nij,nj->n", n, hess, n)
            return (lap - nhn) / gn
        h = FD_CURVATURE_STEP
        div = np.zeros(len(x))
        for i, e in enumerate(np.eye(3)):
            div += (self.unit_normal(x + h * e)[:, i] - self.unit_normal(x - h * e)[:, i]) / (2 * h)
        return div


def sphere_surface(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> LevelSetSurface:
    c = np.asarray(center, dtype=float)

    def value(x):
        return np.linalg.norm(x - c, axis=-1) - radius

    def gradient(x):
        d = x - c
        return d / np.linalg.norm(d, axis=-1)[..., None]

    def hessian(x):
        d = x - c
        r = np.linalg.norm(d, axis=-1)
        n = d / r[..., None]
        return (np.eye(3) - n[..., :, None] * n[..., None, :]) / r[..., None, None]

    return LevelSetSurface(f"sphere(R={radius})", value, gradient, hessian)


def cylinder_surface(radius: float = 1.0) -> LevelSetSurface:
    """Infinite cylinder around the x3 axis."""

    def value(x):
        return np.hypot(x[..., 0], x[..., 1]) - radius

    def gradient(x):
        s = np.hypot(x[..., 0], x[..., 1])
        return np.stack([x[..., 0] / s, x[..., 1] / s, np.zeros_like(s)], axis=-1)

    def hessian(x):
        s = np.hypot(x[..., 0], x[..., 1])
        n = np.stack([x[..., 0] / s, x[..., 1] / s, np.zeros_like(s)], axis=-1)
        p = np.zeros(x.shape[:-1] + (3, 3))
        p[..., 0, 0] = p[..., 1, 1] = 1.0
        return (p - n[..., :, None] * n[..., None, :]) / s[..., None, None]

    return LevelSetSurface(f"cylinder(rho={radius})", value, gradient, hessian)


def dumbbell_level(x) -> np.ndarray:
    """``x1^2 + x2^2 + 2 x3^2 (x3^2 - 199/200) - 0.04``."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return x1**2 + x2**2 + 2 * x3**2 * (x3**2 - 199 / 200) - 0.04


def _dumbbell_gradient(x):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([2 * x1, 2 * x2, 8 * x3**3 - 4 * (199 / 200) * x3], axis=-1)


def _dumbbell_hessian(x):
    hess = np.zeros(x.shape[:-1] + (3, 3))
    hess[..., 0, 0] = 2.0
    hess[..., 1, 1] = 2.0
    hess[..., 2, 2] = 24 * x[..., 2] ** 2 - 4 * (199 / 200)
    return hess


def dumbbell_surface() -> LevelSetSurface:
    return LevelSetSurface("dumbbell", dumbbell_level, _dumbbell_gradient, _dumbbell_hessian)


TORUS_MAJOR, TORUS_MINOR = 4.0, 2.0
SPHERE_CENTERS = np.array([[4.0, 0.0, 2.5], [4.0, 0.0, 5.25]])
SPHERE_RADII = np.array([0.5, 2.5])


def torus_distance(x, major: float = TORUS_MAJOR, minor: float = TORUS_MINOR) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.hypot(np.hypot(x[..., 0], x[..., 1]) - major, x[..., 2]) - minor


def torus_sphere_level(x) -> np.ndarray:
    """Product of the torus and two sphere distances, minus 0.07."""
    x = np.asarray(x, dtype=float)
    d = torus_distance(x)
    for c, r in zip(SPHERE_CENTERS, SPHERE_RADII):
        d = d * (np.linalg.norm(x - c, axis=-1) - r)
    return d - 0.07


def torus_sphere_surface() -> LevelSetSurface:
    return LevelSetSurface("torus_sphere", torus_sphere_level)


def torus_surface(major: float, minor: float) -> LevelSetSurface:
    def gradient(x):
        s = np.hypot(x[..., 0], x[..., 1])
        q = np.stack([(s - major) * x[..., 0] / s, (s - major) * x[..., 1] / s, x[..., 2]], axis=-1)
        return q / np.linalg.norm(q, axis=-1)[..., None]

    return LevelSetSurface(f"torus(R={major},r={minor})", lambda x: torus_distance(x, major, minor), gradient)


def project_to_levelset(points, surface: LevelSetSurface, tol: float = 1e-12, max_iters: int = 100) -> np.ndarray:
    """Damped Newton along the gradient until ``|d| <= tol``.

    Works on a single point or an (n, 3) array; a step is halved while it
    fails to decrease ``|d|``.
    """
    x = np.array(points, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = surface(x)
    active = np.abs(d) > tol
    for _ in range(max_iters):
        if not active.any():
            break
        xa, da = x[active], d[active]
        g = surface.grad(xa)
        gg = np.einsum("ni,ni->n", g, g)
        if np.any(gg == 0):
            raise ZeroGradient("vanishing gradient during projection")
        step = (da / gg)[:, None] * g
        lam = np.ones(len(xa))
        new_x = xa - step
        new_d = surface(new_x)
        for _ in range(30):
            worse = np.abs(new_d) >= np.abs(da)
            if not worse.any():
                break
            lam[worse] *= 0.5
            new_x[worse] = xa[worse] - lam[worse, None] * step[worse]
            new_d[worse] = surface(new_x[worse])
        idx = np.flatnonzero(active)
        x[idx], d[idx] = new_x, new_d
        active = np.abs(d) > tol
    if active.any():
        raise ProjectionStall(f"{int(active.sum())} point(s) not projected to |d| <= {tol}")
    return x[0] if single else x


def initial_fields(surface: LevelSetSurface, positions):
    """Outward unit normal and mean curvature ``(nu0, H0)`` at the nodes."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    return surface.unit_normal(x), surface.mean_curvature(x)


# ---------------------------------------------------------------------------
# structured meshes

def _icosahedron():
    p = (1 + np.sqrt(5)) / 2
    v = np.array(
        [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0], [0, -1, p], [0, 1, p],
         [0, -1, -p], [0, 1, -p], [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def _subdivide(vertices, faces):
    a = faces[:, [0, 1, 2]].ravel()
    b = faces[:, [1, 2, 0]].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    uniq, inverse = np.unique(lo * len(vertices) + hi, return_inverse=True)
    ea, eb = np.divmod(uniq, len(vertices))
    mids = 0.5 * (vertices[ea] + vertices[eb])
    m = len(vertices) + inverse.reshape(-1, 3)  # m01, m12, m20
    v0, v1, v2 = faces.T
    new = np.concatenate(
        [np.stack([v0, m[:, 0], m[:, 2]], 1), np.stack([v1, m[:, 1], m[:, 0]], 1),
         np.stack([v2, m[:, 2], m[:, 1]], 1), m], axis=0
    )
    return np.vstack([vertices, mids]), new


def icosphere_linear(level: int):
    """Unit icosphere vertices and outward-oriented triangles."""
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1)[:, None]
    return v, f


def make_sphere_mesh(radius: float = 1.0, level: int = 0, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Icosahedron refined ``level`` times, all nodes on the sphere."""
    if level < 0:
        raise ValueError("refinement level must be >= 0")
    c = np.asarray(center, dtype=float)
    v, f = icosphere_linear(level)

    def radial(p):
        return p / np.linalg.norm(p, axis=1)[:, None]

    mesh = quadratic_from_linear(v, f, project=radial)
    return SurfaceMesh(c + radius * mesh.positions, mesh.elements)


def _grid_triangles(n_u: int, n_v: int, periodic_v: bool):
    """Triangles of an (n_u periodic) x (n_v) vertex grid, index u * n_v + v."""
    tris = []
    v_cells = n_v if periodic_v else n_v - 1
    for i in range(n_u):
        for j in range(v_cells):
            a = i * n_v + j
            b = ((i + 1) % n_u) * n_v + j
            c = ((i + 1) % n_u) * n_v + (j + 1) % n_v
            d = i * n_v + (j + 1) % n_v
            tris.append([a, b, c])
            tris.append([a, c, d])
    return np.array(tris, dtype=np.int64)


def make_torus_mesh(major: float = 2.0, minor: float = 0.75, n_major: int = 24, n_minor: int = 12) -> SurfaceMesh:
    """Structured torus around the x3 axis, outward oriented."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")

    def torus_point(uu, ww):
        s = major + minor * np.cos(ww)
        return np.stack([s * np.cos(uu), s * np.sin(uu), minor * np.sin(ww)], axis=-1)

    verts = torus_point(uu, ww).reshape(-1, 3)
    tris = _grid_triangles(n_major, n_minor, periodic_v=True)

    def project(p):
        ang_u = np.arctan2(p[:, 1], p[:, 0])
        s = np.hypot(p[:, 0], p[:, 1])
        ang_w = np.arctan2(p[:, 2], s - major)
        return torus_point(ang_u, ang_w)

    return quadratic_from_linear(verts, tris, project=project)


def make_tube_mesh(radius: float = 1.0, length: float = 2.0, n_around: int = 16, n_along: int = 6) -> SurfaceMesh:
    """Open cylinder around the x3 axis over ``0 <= x3 <= length``, normals outward."""
    ang = 2 * np.pi * np.arange(n_around) / n_around
    zs = np.linspace(0.0, length, n_along + 1)
    aa, zz = np.meshgrid(ang, zs, indexing="ij")
    verts = np.stack([radius * np.cos(aa), radius * np.sin(aa), zz], axis=-1).reshape(-1, 3)
    tris = _grid_triangles(n_around, n_along + 1, periodic_v=False)

    def project(p):
        s = np.hypot(p[:, 0], p[:, 1])
        return np.stack([radius * p[:, 0] / s, radius * p[:, 1] / s, p[:, 2]], axis=-1)

    return quadratic_from_linear(verts, tris, project=project)


def make_flat_patch(n: int = 4, size: float = 1.0) -> SurfaceMesh:
    """Flat square patch in the plane x3 = 0, normal +e3."""
    s = np.linspace(0.0, size, n + 1)
    xx, yy = np.meshgrid(s, s, indexing="ij")
    verts = np.stack([xx, yy, np.zeros_like(xx)], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = i * (n + 1) + j, (i + 1) * (n + 1) + j, (i + 1) * (n + 1) + j + 1, i * (n + 1) + j + 1
            tris += [[a, b, c], [a, c, d]]
    return quadratic_from_linear(verts, np.array(tris))


# ---------------------------------------------------------------------------
# level-set meshes

def _vertex_neighbours(n_vertices: int, tris: np.ndarray):
    a = tris[:, [0, 1, 2]].ravel()
    b = tris[:, [1, 2, 0]].ravel()
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    key = np.unique(rows * n_vertices + cols)
    return np.divmod(key, n_vertices)


def smooth_on_levelset(vertices, tris, surface: LevelSetSurface, iterations: int, weight: float = 0.5):
    """Tangential umbrella smoothing of vertices followed by re-projection."""
    v = np.array(vertices, dtype=float)
    if iterations <= 0:
        return v
    rows, cols = _vertex_neighbours(len(v), tris)
    deg = np.bincount(rows, minlength=len(v)).astype(float)
    for _ in range(iterations):
        avg = np.stack([np.bincount(rows, weights=v[cols, k], minlength=len(v)) for k in range(3)], 1)
        delta = avg / deg[:, None] - v
        n = surface.unit_normal(v)
        delta -= np.einsum("ni,ni->n", delta, n)[:, None] * n
        v = project_to_levelset(v + weight * delta, surface)
    return v


def mesh_levelset(surface: LevelSetSurface, seed, relax_iters: int = 10, target_edge: float | None = None,
                  remesh_iters: int = 8) -> SurfaceMesh:
    """Quadratic mesh of a level set grown from a topologically compatible seed.

    ``seed`` is a :class:`SurfaceMesh` (its vertex triangles are used) or a
    ``(vertices, triangles)`` pair. With ``target_edge`` the vertex mesh is
    first adapted by isotropic remeshing on the level set; then nodes are
    projected, smoothed tangentially ``relax_iters`` times and re-projected.
    Midpoints are projected last.
    """
    from .remesh import isotropic_remesh

    if isinstance(seed, SurfaceMesh):
        used = np.unique(seed.elements[:, :3])
        remap = np.full(seed.n_nodes, -1)
        remap[used] = np.arange(len(used))
        verts, tris = seed.positions[used], remap[seed.elements[:, :3]]
    else:
        verts, tris = seed
    verts = project_to_levelset(verts, surface)
    if target_edge is not None:
        verts, tris = isotropic_remesh(verts, tris, surface, target_edge, iterations=remesh_iters)
    verts = smooth_on_levelset(verts, tris, surface, relax_iters)
    mesh = quadratic_from_linear(verts, tris, project=lambda p: project_to_levelset(p, surface))
    logger.info("level-set mesh %s: %d elements, h = %.5f", surface.name, mesh.n_elements, mesh_width(mesh))
    return mesh


def radial_projection_seed(surface: LevelSetSurface, level: int):
    """Icosphere pushed radially onto a level set that is star-shaped about 0."""
    v, f = icosphere_linear(level)
    out = np.empty_like(v)
    for i, direction in enumerate(v):
        lo, hi = 0.0, 1.0
        while surface(hi * direction) < 0:
            hi *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if surface(mid * direction) < 0:
                lo = mid
            else:
                hi = mid
        out[i] = 0.5 * (lo + hi) * direction
    return out, f


SEED_VERSION = "v1"


def seed_path(name: str):
    return resources.files("mcfsurgery") / "data" / f"{name}_{SEED_VERSION}.mesh"


def load_seed(name: str) -> SurfaceMesh:
    with resources.as_file(seed_path(name)) as path:
        return read_mesh(path)
