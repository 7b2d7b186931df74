"""Isoparametric quadratic surface finite elements.

Assembly of the scalar mass and stiffness matrices ``M(x)``, ``A(x)`` and of
the reaction term ``f(x, u)`` of the coupled normal/curvature system.
Element work is vectorised over elements and quadrature points (the
per-step system ``M, A, f`` uses a compiled fused kernel instead); the
global scatter goes through a fixed CSR pattern so results do not depend on
the order in which contributions are produced.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ._kernels import local_system
from .errors import DegenerateElement
from .mesh import SurfaceMesh


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle (area 1/2)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _sym_rule(center_w, orbits, degree):
    pts, wts = [], []
    if center_w:
        pts.append([1 / 3, 1 / 3, 1 / 3])
        wts.append(center_w)
    for a, b, w in orbits:
        for p in ([a, b, b], [b, a, b], [b, b, a]):
            pts.append(p)
            wts.append(w)
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree)


_S15 = np.sqrt(15.0)
_RULES = {
    1: _sym_rule(1.0, [], 1),
    2: _sym_rule(0.0, [(2 / 3, 1 / 6, 1 / 3)], 2),
    5: _sym_rule(
        9 / 40,
        [
            ((9 + 2 * _S15) / 21, (6 - _S15) / 21, (155 - _S15) / 1200),
            ((9 - 2 * _S15) / 21, (6 + _S15) / 21, (155 + _S15) / 1200),
        ],
        5,
    ),
    6: _sym_rule(
        0.0,
        [
            (0.501426509658179, 0.249286745170910, 0.116786275726379),
            (0.873821971016996, 0.063089014491502, 0.050844906370207),
        ],
        6,
    ),
}


def _dunavant6() -> QuadratureRule:
    base = _RULES[6]
    a, b, c = 0.053145049844817, 0.310352451033784, 0.636502499121399
    w = 0.082851075618374
    extra = [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]
    pts = np.vstack([base.points, extra])
    wts = np.concatenate([base.weights, np.full(6, 0.5 * w)])
    return QuadratureRule(pts, wts, 6)


_RULES[6] = _dunavant6()


def quadrature_rule(degree: int = 5) -> QuadratureRule:
    """Positive-weight symmetric rule exact up to at least ``degree``."""
    for d in sorted(_RULES):
        if d >= degree:
            return _RULES[d]
    raise ValueError(f"no quadrature rule of degree {degree}")


def shape_functions(bary):
    """Quadratic Lagrange basis at barycentric point(s).

    Returns ``(values, grads)`` with shapes ``(..., 6)`` and ``(..., 6, 2)``;
    gradients are with respect to the reference coordinates ``(xi, eta)``
    where ``xi = lambda_1`` and ``eta = lambda_2``.
    """
    lam = np.asarray(bary, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    vals = np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0],
        axis=-1,
    )
    # d/dxi = d/dl1 - d/dl0, d/deta = d/dl2 - d/dl0
    z = np.zeros_like(l0)
    dxi = np.stack([-(4 * l0 - 1), 4 * l1 - 1, z, 4 * (l0 - l1), 4 * l2, -4 * l2], axis=-1)
    deta = np.stack([-(4 * l0 - 1), z, 4 * l2 - 1, -4 * l1, 4 * l1, 4 * (l0 - l2)], axis=-1)
    return vals, np.stack([dxi, deta], axis=-1)


@dataclass
class ElementGeometry:
    """Geometry of curved elements at reference points.

    Shapes: ``tangents (F, Q, 3, 2)``, ``metric (F, Q, 2, 2)``,
    ``area_element (F, Q)``, ``normals (F, Q, 3)``,
    ``surface_gradients (F, Q, 6, 3)``, ``values (Q, 6)``.
    """

    tangents: np.ndarray
    metric: np.ndarray
    area_element: np.ndarray
    normals: np.ndarray
    surface_gradients: np.ndarray
    values: np.ndarray


def element_geometry(positions, elements, bary) -> ElementGeometry:
    """Tangent basis, metric, area element and surface gradients of the basis."""
    elements = np.atleast_2d(elements)
    bary = np.atleast_2d(bary)
    vals, dref = shape_functions(bary)
    xe = np.asarray(positions)[elements]  # (F, 6, 3)
    jac = np.einsum("fai,qad->fqid", xe, dref, optimize=True)
    t0, t1 = jac[..., 0], jac[..., 1]
    g11 = np.einsum("fqi,fqi->fq", t0, t0)
    g12 = np.einsum("fqi,fqi->fq", t0, t1)
    g22 = np.einsum("fqi,fqi->fq", t1, t1)
    det = g11 * g22 - g12 * g12
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        bad = int(np.argwhere(~(det > 0))[0, 0])
        raise DegenerateElement(f"element {bad} has non-positive metric determinant")
    sqrtg = np.sqrt(det)
    # contravariant reference gradients G^{-1} dphi, then push forward with J
    c0 = (g22[..., None] * dref[None, :, :, 0] - g12[..., None] * dref[None, :, :, 1]) / det[..., None]
    c1 = (g11[..., None] * dref[None, :, :, 1] - g12[..., None] * dref[None, :, :, 0]) / det[..., None]
    sgrad = c0[..., None] * t0[:, :, None, :] + c1[..., None] * t1[:, :, None, :]
    normals = np.cross(t0, t1) / sqrtg[..., None]
    metric = np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)
    return ElementGeometry(jac, metric, sqrtg, normals, sgrad, vals)


@dataclass
class AssembledOperator:
    """Scalar mass and stiffness matrices on one surface configuration."""

    mass: sparse.csr_matrix
    stiffness: sparse.csr_matrix
    geometry: ElementGeometry | None = None

    @property
    def area(self) -> float:
        return float(self.mass.sum())


class Assembler:
    """Assembly on a fixed connectivity.

    The CSR pattern (row-major, columns sorted within a row) and the scatter
    map from local entries to CSR slots are computed once per connectivity.
    """

    def __init__(self, mesh: SurfaceMesh, rule: QuadratureRule | None = None):
        self.elements = mesh.elements
        self.n_nodes = mesh.n_nodes
        self.rule = rule or quadrature_rule(5)
        self.phi, self.dphi = shape_functions(self.rule.points)
        n = self.n_nodes
        rows = np.repeat(self.elements, 6, axis=1).ravel()
        cols = np.tile(self.elements, (1, 6)).ravel()
        uniq, self._scatter = np.unique(rows * n + cols, return_inverse=True)
        r, c = np.divmod(uniq, n)
        self._indices = c.astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n))]).astype(np.int32)
        self._nnz = len(uniq)
        self._phiphi = np.einsum("qa,qb->qab", self.phi, self.phi).reshape(len(self.phi), 36)

    def _csr(self, local: np.ndarray) -> sparse.csr_matrix:
        data = np.bincount(self._scatter, weights=local.ravel(), minlength=self._nnz)
        return sparse.csr_matrix((data, self._indices, self._indptr), shape=(self.n_nodes, self.n_nodes))

    def geometry(self, positions) -> ElementGeometry:
        return element_geometry(positions, self.elements, self.rule.points)

    def assemble(self, positions, geom: ElementGeometry | None = None) -> AssembledOperator:
        """Mass ``M_ij = int phi_i phi_j`` and stiffness ``A_ij = int grad phi_i . grad phi_j``."""
        geom = geom or self.geometry(positions)
        w = geom.area_element * self.rule.weights  # (F, Q)
        m_loc = w @ self._phiphi
        s = geom.surface_gradients * np.sqrt(w)[..., None, None]  # (F, Q, 6, 3)
        s = s.transpose(0, 2, 1, 3).reshape(len(w), 6, -1)
        a_loc = s @ s.transpose(0, 2, 1)
        return AssembledOperator(self._csr(m_loc), self._csr(a_loc), geom)

    def nonlinearity(self, positions, normals, curvature, geom: ElementGeometry | None = None) -> np.ndarray:
        """Reaction term ``int |A|^2 (nu, H) phi_i`` as an (N, 4) array.

        ``|A|^2`` is the squared Frobenius norm of the surface gradient of the
        interpolated normal field, without renormalisation.
        """
        geom = geom or self.geometry(positions)
        nu_e = np.asarray(normals)[self.elements]  # (F, 6, 3)
        h_e = np.asarray(curvature)[self.elements]  # (F, 6)
        grad_nu = np.einsum("fai,fqad->fqid", nu_e, geom.surface_gradients, optimize=True)
        a2 = np.einsum("fqid,fqid->fq", grad_nu, grad_nu)
        u_e = np.concatenate([nu_e, h_e[..., None]], axis=2)  # (F, 6, 4)
        u_q = np.einsum("qa,fac->fqc", self.phi, u_e, optimize=True)
        w = geom.area_element * self.rule.weights * a2
        f_loc = np.einsum("fq,fqc,qa->fac", w, u_q, self.phi, optimize=True)
        return self.scatter_vector(f_loc)

    def assemble_system(self, positions, normals, curvature):
        """``(AssembledOperator, f)`` in one fused pass over the elements."""
        n_el = len(self.elements)
        m_loc = np.empty((n_el, 36))
        a_loc = np.empty((n_el, 36))
        f_loc = np.empty((n_el, 6, 4))
        min_det = local_system(
            np.ascontiguousarray(positions, dtype=float), self.elements,
            np.ascontiguousarray(normals, dtype=float), np.ascontiguousarray(curvature, dtype=float),
            self.phi, np.ascontiguousarray(self.dphi), self.rule.weights, m_loc, a_loc, f_loc,
        )
        if not min_det > 0:
            raise DegenerateElement("an element has non-positive metric determinant")
        return AssembledOperator(self._csr(m_loc), self._csr(a_loc)), self.scatter_vector(f_loc)

    def scatter_vector(self, local: np.ndarray) -> np.ndarray:
        """Sum element vectors of shape (F, 6, C) into an (N, C) array."""
        idx = self.elements.ravel()
        flat = local.reshape(len(idx), -1)
        return np.stack(
            [np.bincount(idx, weights=flat[:, c], minlength=self.n_nodes) for c in range(flat.shape[1])], axis=1
        )

    def load_vector(self, positions, values_q: np.ndarray, geom: ElementGeometry | None = None) -> np.ndarray:
        """``int g phi_i`` for ``g`` given at quadrature points, shape (F, Q)."""
        geom = geom or self.geometry(positions)
        w = geom.area_element * self.rule.weights * values_q
        return self.scatter_vector((w @ self.phi)[..., None])[:, 0]


def assemble_mass_stiffness(positions, mesh: SurfaceMesh, rule: QuadratureRule | None = None) -> AssembledOperator:
    return Assembler(mesh, rule).assemble(positions)


def assemble_nonlinearity(positions, normals, curvature, mesh: SurfaceMesh) -> np.ndarray:
    return Assembler(mesh).nonlinearity(positions, normals, curvature)


def squared_weingarten_at_quadrature(positions, normals, mesh: SurfaceMesh, rule: QuadratureRule | None = None):
    """``|grad_Gamma nu_h|^2`` at quadrature points, shape (F, Q)."""
    rule = rule or quadrature_rule(5)
    geom = element_geometry(positions, mesh.elements, rule.points)
    grad_nu = np.einsum("fai,fqad->fqid", np.asarray(normals)[mesh.elements], geom.surface_gradients, optimize=True)
    return np.einsum("fqid,fqid->fq", grad_nu, grad_nu)


def surface_area(positions, mesh: SurfaceMesh, rule: QuadratureRule | None = None) -> float:
    rule = rule or quadrature_rule(5)
    geom = element_geometry(positions, mesh.elements, rule.points)
    return float((geom.area_element * rule.weights).sum())


def element_areas(positions, mesh: SurfaceMesh, rule: QuadratureRule | None = None) -> np.ndarray:
    rule = rule or quadrature_rule(5)
    geom = element_geometry(positions, mesh.elements, rule.points)
    return (geom.area_element * rule.weights).sum(axis=1)


def enclosed_volume(positions, mesh: SurfaceMesh, rule: QuadratureRule | None = None) -> float:
    """Signed volume ``1/3 int x . n`` (positive for outward orientation)."""
    rule = rule or quadrature_rule(5)
    geom = element_geometry(positions, mesh.elements, rule.points)
    xq = np.einsum("qa,fai->fqi", geom.values, np.asarray(positions)[mesh.elements])
    xn = np.einsum("fqi,fqi->fq", xq, geom.normals)
    return float((xn * geom.area_element * rule.weights).sum() / 3.0)
