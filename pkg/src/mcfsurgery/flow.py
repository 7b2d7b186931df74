"""Linearly implicit BDF time stepping of the coupled mean curvature flow system.

Each step solves one SPD system ``(delta_0/tau) M + A`` with four right-hand
sides (three normal components and the mean curvature), sets the nodal
velocity ``v = -H nu`` and advances the positions with the same BDF formula.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np
from scipy import sparse

from .errors import ColdHistory, SolverDivergence, UnsupportedOrder
from .fem import Assembler
from .mesh import SurfaceMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BdfScheme:
    order: int
    delta: np.ndarray
    gamma: np.ndarray


def _bdf_fractions(q: int):
    delta = [sum((Fraction(1, l) * comb(l, j) * (-1) ** j for l in range(max(j, 1), q + 1)), Fraction(0))
             for j in range(q + 1)]
    gamma = [Fraction((-1) ** j * comb(q, j + 1)) for j in range(q)]
    return delta, gamma


def bdf_coefficients(q: int) -> BdfScheme:
    """Derivative and extrapolation coefficients of BDF-``q``, ``1 <= q <= 5``."""
    if not isinstance(q, (int, np.integer)) or not 1 <= q <= 5:
        raise UnsupportedOrder(f"BDF order must be in 1..5, got {q!r}")
    delta, gamma = _bdf_fractions(int(q))
    return BdfScheme(int(q), np.array([float(d) for d in delta]), np.array([float(g) for g in gamma]))


@dataclass
class FlowState:
    """Nodal positions, normal, mean curvature and velocity at one time level."""

    time: float
    positions: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    velocity: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return np.column_stack([self.normals, self.curvature])


class FlowHistory:
    """The last ``q`` time levels, oldest first."""

    def __init__(self, order: int):
        self.order = order
        self.levels: deque[FlowState] = deque(maxlen=order)
        self.steps = 0

    def push(self, state: FlowState) -> None:
        if self.levels and state.time <= self.levels[-1].time:
            raise ValueError("time stamps must increase")
        self.levels.append(state)

    @property
    def is_warm(self) -> bool:
        return len(self.levels) == self.order

    @property
    def latest(self) -> FlowState:
        return self.levels[-1]

    def __len__(self) -> int:
        return len(self.levels)


def extrapolate(history: FlowHistory, scheme: BdfScheme):
    """``w~^n = sum_j gamma_j w^{n-1-j}`` for positions and ``u = (nu, H)``."""
    if len(history) < scheme.order:
        raise ColdHistory(f"history holds {len(history)} levels, BDF-{scheme.order} needs {scheme.order}")
    recent = list(history.levels)[::-1]  # n-1, n-2, ...
    x = sum(g * s.positions for g, s in zip(scheme.gamma, recent))
    u = sum(g * s.u for g, s in zip(scheme.gamma, recent))
    return x, u


def solve_spd(matrix, rhs, tol: float = 1e-10, max_iters: int = 2000, x0=None, return_iterations: bool = False):
    """Jacobi-preconditioned conjugate gradients on all columns at once.

    Stops each column at ``||r|| <= tol ||b||``; raises SolverDivergence when
    ``max_iters`` is exhausted.
    """
    b = np.asarray(rhs, dtype=float)
    vector = b.ndim == 1
    b = b.reshape(len(b), -1)
    diag = matrix.diagonal()
    if np.any(diag <= 0):
        raise SolverDivergence("matrix has a non-positive diagonal entry")
    dinv = (1.0 / diag)[:, None]
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).reshape(b.shape)
    r = b - matrix @ x
    bnorm = np.linalg.norm(b, axis=0)
    bnorm[bnorm == 0] = 1.0
    z = dinv * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    it = 0
    active = np.linalg.norm(r, axis=0) > tol * bnorm
    while active.any():
        if it >= max_iters:
            res = float((np.linalg.norm(r, axis=0) / bnorm).max())
            raise SolverDivergence(f"CG did not converge in {max_iters} iterations (residual {res:.3e})")
        cols = np.flatnonzero(active)
        pa = p[:, cols]
        ap = matrix @ pa
        alpha = rz[cols] / np.einsum("ij,ij->j", pa, ap)
        x[:, cols] += alpha * pa
        r[:, cols] -= alpha * ap
        zc = dinv * r[:, cols]
        rz_new = np.einsum("ij,ij->j", r[:, cols], zc)
        p[:, cols] = zc + (rz_new / rz[cols]) * pa
        rz[cols] = rz_new
        it += 1
        active[cols] = np.linalg.norm(r[:, cols], axis=0) > tol * bnorm[cols]
    out = x[:, 0] if vector else x
    return (out, it) if return_iterations else out


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iters: int = 2000


def step(history: FlowHistory, scheme: BdfScheme, assembler: Assembler, tau: float,
         options: SolverOptions | None = None, unit_extrapolation: bool = True) -> FlowState:
    """Advance one BDF step and rotate the history.

    Assembles ``M, A, f`` on the extrapolated surface (with the extrapolated
    nodal normals rescaled to unit length when ``unit_extrapolation``, which
    keeps ``|A|^2`` from collapsing at under-resolved necks), solves
    ``((delta_0/tau) M + A) u^n = f + (1/tau) M sum_j (-delta_j) u^{n-j}``,
    sets ``v^n = -H^n nu^n`` and
    ``x^n = sum_j (-delta_j/delta_0) x^{n-j} + (tau/delta_0) v^n``.
    """
    options = options or SolverOptions()
    x_ext, u_ext = extrapolate(history, scheme)
    nu_ext = u_ext[:, :3]
    if unit_extrapolation:
        nu_ext = nu_ext / np.maximum(np.linalg.norm(nu_ext, axis=1, keepdims=True), np.finfo(float).tiny)
    op, f = assembler.assemble_system(x_ext, nu_ext, u_ext[:, 3])
    recent = list(history.levels)[::-1]
    d = scheme.delta
    u_hist = sum(-d[j + 1] * s.u for j, s in enumerate(recent[: scheme.order]))
    x_hist = sum(-d[j + 1] * s.positions for j, s in enumerate(recent[: scheme.order]))
    mass, stiff = op.mass, op.stiffness
    system = sparse.csr_matrix((d[0] / tau * mass.data + stiff.data, mass.indices, mass.indptr), shape=mass.shape)
    rhs = f + (mass @ u_hist) / tau
    u = solve_spd(system, rhs, options.tol, options.max_iters, x0=u_ext)
    normals, curvature = u[:, :3], u[:, 3]
    velocity = -curvature[:, None] * normals
    positions = (x_hist + tau * velocity) / d[0]
    state = FlowState(history.latest.time + tau, positions, normals, curvature, velocity)
    history.push(state)
    history.steps += 1
    return state


def startup(mesh: SurfaceMesh, normals, curvature, tau: float, order: int = 2, time: float = 0.0,
            assembler: Assembler | None = None, options: SolverOptions | None = None,
            positions=None) -> FlowHistory:
    """Fill a BDF-``order`` history with ``order - 1`` linearly implicit Euler steps."""
    scheme = bdf_coefficients(order)
    assembler = assembler or Assembler(mesh)
    x0 = mesh.positions if positions is None else positions
    normals = np.asarray(normals, dtype=float)
    curvature = np.asarray(curvature, dtype=float)
    first = FlowState(time, np.array(x0, dtype=float), normals, curvature, -curvature[:, None] * normals)
    history = FlowHistory(scheme.order)
    history.push(first)
    euler = bdf_coefficients(1)
    while len(history) < scheme.order:
        # a q=1 history view on the newest level drives the Euler step
        sub = FlowHistory(1)
        sub.push(history.latest)
        state = step(sub, euler, assembler, tau, options)
        history.push(state)
        history.steps += 1
    return history
