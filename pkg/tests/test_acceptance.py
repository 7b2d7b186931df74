"""Acceptance criteria 1-9, each printing one ``criterion N: PASS/FAIL`` line.

Criteria 4 and 5 share one dumbbell run (``slow``); criterion 6 is the long
torus-sphere experiment (``optional``, enabled with ``MCF_RUN_OPTIONAL=1``).
"""
import functools
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import eoc, sphere
from mcfsurgery.driver import run
from mcfsurgery.fem import Assembler, surface_area
from mcfsurgery.flow import SolverOptions, bdf_coefficients, startup, step
from mcfsurgery.geometry import make_sphere_mesh, make_torus_mesh, make_tube_mesh
from mcfsurgery.io import RunConfig
from mcfsurgery.mesh import check_orientation, connected_components, euler_characteristic, mesh_width
from mcfsurgery.surgery import choose_cap, perform_surgery, recover_curvature, recover_normals

from test_flow import polynomial_coefficients


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} -- {detail}")
        assert ok, detail

    return emit


@functools.lru_cache(maxsize=None)
def shrinking_sphere(level, tau, end_time, solver_tol=1e-10):
    """BDF2 flow of the unit sphere.

    Returns ``(max position error, max relative H error, max H error, final
    positions, H1 error of H)``; the last is ``sqrt(e^T (M + A) e)`` for the
    nodal error ``e = H_h - 2/R`` on the final discrete surface.
    """
    mesh = sphere(level)
    options = SolverOptions(solver_tol, 20000)
    hist = startup(mesh, mesh.positions.copy(), np.full(mesh.n_nodes, 2.0), tau, order=2, options=options)
    asm = Assembler(mesh)
    scheme = bdf_coefficients(2)
    n_steps = int(round(end_time / tau))
    while hist.steps < n_steps:
        step(hist, scheme, asm, tau, options)
    state = hist.latest
    assert state.time == pytest.approx(end_time, abs=1e-9)
    r = np.sqrt(1 - 4 * state.time)
    pos = np.abs(np.linalg.norm(state.positions, axis=1) - r).max()
    e = state.curvature - 2 / r
    op = asm.assemble(state.positions)
    h1 = float(np.sqrt(e @ (op.mass @ e + op.stiffness @ e)))
    return pos, np.abs(e).max() / (2 / r), np.abs(e).max(), state.positions, h1


def test_criterion_1_shrinking_sphere(verdict):
    pos, rel_h, *_ = shrinking_sphere(4, 1e-4, 0.2)
    verdict(1, pos <= 5e-3 and rel_h <= 1e-2, f"position error {pos:.3e} (<= 5e-3), relative H error {rel_h:.3e} (<= 1e-2)")


def test_criterion_2_temporal_order(verdict):
    """Temporal order on a fixed mesh.

    Against the exact radius the level-4 error is dominated by the spatial
    part (about 4e-7 for every tau), so the temporal order is estimated from
    successive differences ``x_tau - x_{tau/2}`` on the same mesh, in which
    the spatial error cancels.
    """
    taus = [2e-4, 1e-4, 5e-5]
    runs = [shrinking_sphere(4, tau, 0.2) for tau in taus]
    diffs = [np.linalg.norm(runs[k][3] - runs[k + 1][3], axis=1).max() for k in range(2)]
    order = float(np.log2(diffs[0] / diffs[1]))
    exact_errs = ", ".join(f"{r[0]:.3e}" for r in runs)
    verdict(2, order >= 1.7, f"|x_tau - x_tau/2| {diffs[0]:.3e}, {diffs[1]:.3e}; EOC {order:.2f} (>= 1.7); "
                             f"errors vs exact radius {exact_errs}")


@pytest.mark.slow
def test_criterion_3_spatial_order(verdict):
    """Spatial order of the H error in an H1-type norm.

    On the icosahedral sphere the nodal errors are superconvergent (below
    1e-7 from level 3 on), so the CG tolerance is tightened until the
    solver error is negligible; at the default 1e-10 it accumulates over the
    5000 steps to a floor of about 6e-8 that hides levels 4 and 5.
    """
    levels = [3, 4, 5]
    runs = [shrinking_sphere(level, 1e-5, 0.05, solver_tol=1e-14) for level in levels]
    h1 = [r[4] for r in runs]
    nodal = [r[2] for r in runs]
    hs = [mesh_width(sphere(level)) for level in levels]
    orders = eoc(h1, hs)
    verdict(3, bool(np.all(orders >= 1.8)),
            f"H1 errors of H {', '.join(f'{e:.3e}' for e in h1)}; EOC {', '.join(f'{o:.2f}' for o in orders)} (>= 1.8); "
            f"max nodal errors {', '.join(f'{e:.3e}' for e in nodal)}, EOC {', '.join(f'{o:.2f}' for o in eoc(nodal, hs))}")


@functools.lru_cache(maxsize=None)
def dumbbell_run():
    cfg = RunConfig(surface="dumbbell", tau=1e-5, H2=100, H3=200, q=2, snapshot_every=0, end_time=0.2)
    return run(cfg)


@pytest.mark.slow
def test_criterion_4_dumbbell(verdict):
    summary = dumbbell_run()
    necks = [r for r in summary.surgeries if r.caps > 0]
    ok = len(necks) == 1
    detail = [f"{len(necks)} neck surgeries"]
    if necks:
        t1, rep = necks[0].time, necks[0]
        ok &= 0.074 <= t1 <= 0.091 and rep.components_after == 2 and sorted(rep.euler_after) == [2, 2]
        detail.append(f"T1 = {t1:.5f} in [0.074, 0.091], components {rep.components_after}, chi {rep.euler_after}")
    t2 = summary.extinction_time
    ok &= summary.status == "extinct" and t2 is not None and 0.090 <= t2 <= 0.110
    detail.append(f"status {summary.status}, T2 = {t2} in [0.090, 0.110]")
    verdict(4, ok, "; ".join(detail))


def rows_after_surgery(records):
    return [(records[i], records[i + 1]) for i in range(len(records) - 1) if records[i].surgery]


@pytest.mark.slow
def test_criterion_5_curvature_drop(verdict):
    summary = dumbbell_run()
    pairs = rows_after_surgery(summary.records)
    worst = max((after.max_H for _, after in pairs), default=np.nan)
    ok = len(pairs) >= 1 and all(after.max_H <= 1.05 * 100 for _, after in pairs)
    verdict(5, ok, f"{len(pairs)} surgery rows followed by a step; worst next-row max H {worst:.2f} (<= 105)")


@pytest.mark.optional
@pytest.mark.skipif(os.environ.get("MCF_RUN_OPTIONAL") != "1", reason="set MCF_RUN_OPTIONAL=1 (about an hour)")
def test_criterion_6_torus_sphere(verdict):
    cfg = RunConfig(surface="torus_sphere", tau=5e-5, H2=15, H3=20, q=2, snapshot_every=0, end_time=2.0)
    summary = run(cfg)
    s = summary.surgeries
    ok = len(s) >= 2
    shown = ", ".join(f"{t:.4f}" for t in summary.surgery_times[:4]) + (", ..." if len(s) > 4 else "")
    detail = [f"{len(s)} surgeries at {shown}"]
    if len(s) >= 2:
        first, second = s[0], s[1]
        ok &= first.caps > 0 and sorted(first.euler_after) == [0, 2] and 0.9 <= first.time <= 1.2
        ok &= second.caps == 0 and second.extinct_components == 1 and 1.4 <= second.time <= 1.9
        ok &= sorted(second.euler_after) == [0]
        detail.append(f"first: caps {first.caps}, chi {first.euler_after}, T1 {first.time:.4f} in [0.9, 1.2]")
        detail.append(f"second: caps {second.caps}, removed {second.extinct_components}, chi {second.euler_after}, "
                      f"T2 {second.time:.4f} in [1.4, 1.9]")
    verdict(6, ok, "; ".join(detail))


def random_excisions(mesh, seed, n=100, radius=(0.05, 0.6), H2=10.0):
    rng = np.random.default_rng(seed)
    nu = recover_normals(mesh, np.arange(mesh.n_nodes))
    failures = 0
    for _ in range(n):
        centre = mesh.positions[rng.integers(mesh.n_nodes)]
        h = np.ones(mesh.n_nodes)
        h[np.linalg.norm(mesh.positions - centre, axis=1) < rng.uniform(*radius)] = 10 * H2
        out, nu_out, _, rep = perform_surgery(mesh, nu, h, H2)
        try:
            assert out.is_closed()
            check_orientation(out)
            Assembler(out).geometry(out.positions)  # raises on degenerate elements
            comps = connected_components(out)
            assert len(comps) == rep.components_after
            assert sum(rep.euler_after) == rep.euler_open + rep.caps == euler_characteristic(out)
            assert all(2 / rec.r <= H2 * (1 + 1e-12) for rec in rep.loops)
        except Exception:
            failures += 1
    return failures


@settings(max_examples=500, deadline=None, database=None)
@given(st.floats(1e-3, 10), st.floats(1e-3, 10))
def cap_bound_holds(rho, H2):
    r, _ = choose_cap(rho, H2)
    assert 2 / r <= H2 * (1 + 1e-15) and r >= rho


def test_criterion_7_surgery_invariants(verdict):
    cap_ok = True
    try:
        cap_bound_holds()
    except AssertionError:
        cap_ok = False
    fail_sphere = random_excisions(make_sphere_mesh(1.0, 3), 11)
    fail_torus = random_excisions(make_torus_mesh(2.0, 0.75, 40, 16), 12)
    verdict(7, cap_ok and fail_sphere == 0 and fail_torus == 0,
            f"cap bound 2/r <= H2 on 500 random (rho, H2): {cap_ok}; failed excisions sphere {fail_sphere}/100, "
            f"torus {fail_torus}/100")


def test_criterion_8_recovery(verdict):
    errs, hs = [], []
    for level in (2, 3, 4, 5):
        mesh = sphere(level)
        errs.append(np.abs(recover_normals(mesh, np.arange(mesh.n_nodes)) - mesh.positions).max())
        hs.append(mesh_width(mesh))
    normal_eoc = eoc(errs, hs)
    # sphere patch at h ~ 0.05 (level 5 of radius 1.25 has h ~ 0.052)
    radius = 1.25
    sph = make_sphere_mesh(radius, 5)
    cap_patch = np.flatnonzero(sph.positions[sph.elements[:, 0], 2] > 0.6 * radius)
    _, h_s = recover_curvature(sph, sph.positions / radius, np.full(sph.n_nodes, 2 / radius), cap_patch)
    sphere_err = np.abs(h_s - 2 / radius).max() / (2 / radius)
    rho = 0.5
    tube = make_tube_mesh(rho, 1.0, int(round(2 * np.pi * rho / 0.035)), 29)
    nu = tube.positions * np.array([1.0, 1.0, 0.0])
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    _, h_c = recover_curvature(tube, nu, np.full(tube.n_nodes, 1 / rho), np.arange(tube.n_elements))
    cyl_err = np.abs(h_c - 1 / rho).max() * rho
    ok = bool(np.all(normal_eoc >= 1.8)) and sphere_err <= 0.05 and cyl_err <= 0.05
    verdict(8, ok, f"normal EOC {', '.join(f'{o:.2f}' for o in normal_eoc)} (>= 1.8); curvature rel. error sphere "
                   f"{sphere_err:.2e} (h {mesh_width(sph):.3f}), cylinder {cyl_err:.2e} (h {mesh_width(tube):.3f}) (<= 5%)")


def test_criterion_9_matrix_identities(verdict):
    small = sphere(1)
    op = Assembler(small).assemble(small.positions)
    a1 = np.abs(op.stiffness @ np.ones(small.n_nodes)).max() / abs(op.stiffness).max()
    dense = op.mass.toarray()
    sym = np.abs(dense - dense.T).max()
    eig_min = np.linalg.eigvalsh(dense).min()
    errs, hs = [], []
    for level in (1, 2, 3, 4):
        mesh = sphere(level)
        errs.append(abs(surface_area(mesh.positions, mesh) - 4 * np.pi))
        hs.append(mesh_width(mesh))
    area_eoc = eoc(errs, hs)
    bdf_err = 0.0
    for q in range(1, 6):
        scheme = bdf_coefficients(q)
        delta, gamma = polynomial_coefficients(q)
        bdf_err = max(bdf_err, np.abs(scheme.delta - delta).max(), np.abs(scheme.gamma - gamma).max())
    ok = a1 <= 1e-12 and sym == 0.0 and eig_min > 0 and bool(np.all(area_eoc >= 3)) and bdf_err <= 1e-14
    verdict(9, ok, f"|A1|/|A| {a1:.1e}; M asymmetry {sym:.1e}, min eigenvalue {eig_min:.2e}; area EOC "
                   f"{', '.join(f'{o:.2f}' for o in area_eoc)} (>= 3); BDF coefficient error {bdf_err:.1e}")
