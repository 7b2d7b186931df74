import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcfsurgery.errors import DegenerateLoop, MeshError, NonManifoldEdge, OrientationError
from mcfsurgery.fem import enclosed_volume
from mcfsurgery.geometry import make_flat_patch, make_sphere_mesh, make_tube_mesh
from mcfsurgery.mesh import (
    BoundaryLoop,
    SurfaceMesh,
    build_edge_table,
    check_orientation,
    compact,
    connected_components,
    euler_characteristic,
    extract_boundary_loops,
    fit_boundary_circle,
    quadratic_from_linear,
    read_mesh,
    write_mesh,
)


def single_element():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.5, 0, 0], [0.5, 0.5, 0], [0, 0.5, 0]], float)
    return SurfaceMesh(pos, [[0, 1, 2, 3, 4, 5]])


def octahedron():
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    f = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    return quadratic_from_linear(v, f, project=lambda p: p / np.linalg.norm(p, axis=1, keepdims=True))


def test_edge_table_single_element():
    table = build_edge_table(single_element())
    assert table.n_edges == 3
    assert np.all(table.counts == 1)
    assert table[0, 1] == (3, [0])
    assert table[2, 1][0] == 4


def test_edge_table_octahedron():
    mesh = octahedron()
    table = mesh.edge_table
    assert table.n_edges == 12
    assert np.all(table.counts == 2)
    assert euler_characteristic(mesh) == 6 - 12 + 8
    assert mesh.is_closed()


def test_non_manifold_edge_rejected():
    pos = np.zeros((10, 3))
    pos[:4] = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0]]
    pos[4:, 0] = np.arange(6)
    elems = [[0, 1, 2, 4, 5, 6], [1, 0, 3, 4, 7, 8], [0, 1, 2, 4, 9, 6]]
    pos[4] = [0.5, 0, 0]
    with pytest.raises(NonManifoldEdge):
        build_edge_table(SurfaceMesh(pos, elems))


def test_same_direction_shared_edge_is_orientation_error():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0, 0], [0.5, 0.5, 0], [0, 0.5, 0],
                    [1, 0.5, 0], [0.5, 1, 0]], float)
    # both elements traverse 1 -> 2
    mesh = SurfaceMesh(pos, [[0, 1, 2, 4, 5, 6], [1, 2, 3, 5, 8, 7]])
    with pytest.raises(OrientationError):
        check_orientation(mesh)
    with pytest.raises(OrientationError):
        extract_boundary_loops(mesh)


def test_midpoint_mismatch_rejected():
    mesh = octahedron()
    elems = mesh.elements.copy()
    elems[0, 3] = elems[1, 5] if elems[1, 5] != elems[0, 3] else elems[1, 4]
    with pytest.raises(MeshError):
        build_edge_table(SurfaceMesh(mesh.positions, elems))


def test_closed_sphere_has_no_loops():
    assert extract_boundary_loops(make_sphere_mesh(1.0, 1)) == []


def test_sphere_minus_one_element():
    mesh = make_sphere_mesh(1.0, 1)
    keep = np.ones(mesh.n_elements, bool)
    keep[7] = False
    open_mesh, _ = compact(mesh, keep)
    loops = extract_boundary_loops(open_mesh)
    assert len(loops) == 1
    assert loops[0].n_edges == 3 and len(loops[0].nodes) == 6


def test_tube_loops_have_antiparallel_axes():
    mesh = make_tube_mesh(1.0, 2.0, 16, 6)
    loops = extract_boundary_loops(mesh)
    assert len(loops) == 2
    axes = [fit_boundary_circle(lp, mesh.positions)[1] for lp in loops]
    assert axes[0] @ axes[1] < 0
    # axes point away from the retained tube, i.e. out of its ends
    for lp, ax in zip(loops, axes):
        assert ax @ (lp.center - mesh.positions.mean(axis=0)) > 0


def test_loop_structure_alternates_vertex_midpoint():
    mesh = make_flat_patch(4, 1.0)
    (loop,) = extract_boundary_loops(mesh)
    table = mesh.edge_table
    v, m = loop.vertices, loop.midpoints
    for k in range(loop.n_edges):
        assert table[v[k], v[(k + 1) % len(v)]][0] == m[k]
    rev = loop.reversed()
    for k in range(rev.n_edges):
        assert table[rev.vertices[k], rev.vertices[(k + 1) % rev.n_edges]][0] == rev.midpoints[k]


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(0, 319), min_size=1, max_size=12))
def test_removing_disjoint_disks_gives_one_loop_each(seeds):
    mesh = make_sphere_mesh(1.0, 2)
    vert_sets = [set(mesh.elements[s, :3]) for s in sorted(seeds)]
    chosen, used = [], set()
    # keep only elements whose closed vertex stars are pairwise disjoint
    for s, vs in zip(sorted(seeds), vert_sets):
        star = set(np.flatnonzero(np.isin(mesh.elements[:, :3], list(vs)).any(axis=1)))
        star_verts = set(mesh.elements[list(star), :3].ravel())
        if star_verts & used:
            continue
        used |= star_verts
        chosen.append(s)
    keep = np.ones(mesh.n_elements, bool)
    keep[chosen] = False
    open_mesh, _ = compact(mesh, keep)
    assert len(extract_boundary_loops(open_mesh)) == len(chosen)


def test_components_and_euler(torus_mesh):
    a = make_sphere_mesh(1.0, 1)
    b = make_sphere_mesh(0.5, 1, center=(3, 0, 0))
    both = SurfaceMesh(np.vstack([a.positions, b.positions]), np.vstack([a.elements, b.elements + a.n_nodes]))
    assert [c.euler for c in connected_components(a)] == [2]
    comps = connected_components(both)
    assert [c.euler for c in comps] == [2, 2]
    assert comps[1].diameter == pytest.approx(np.sqrt(3) * 1.0, rel=0.2)
    assert [c.euler for c in connected_components(torus_mesh)] == [0]


def test_components_invariant_under_element_permutation(rng):
    a = make_sphere_mesh(1.0, 1)
    b = make_sphere_mesh(0.5, 2, center=(3, 0, 0))
    both = SurfaceMesh(np.vstack([a.positions, b.positions]), np.vstack([a.elements, b.elements + a.n_nodes]))
    perm = rng.permutation(both.n_elements)
    shuffled = SurfaceMesh(both.positions, both.elements[perm])
    key = lambda comps, els: sorted((c.euler, tuple(sorted(map(tuple, els[c.elements].tolist())))) for c in comps)
    assert key(connected_components(both), both.elements) == key(connected_components(shuffled), shuffled.elements)


def test_signed_volume_flips_with_orientation():
    mesh = make_sphere_mesh(1.0, 2)
    vol = enclosed_volume(mesh.positions, mesh)
    assert vol > 0
    flipped = SurfaceMesh(mesh.positions, mesh.elements[:, [0, 2, 1, 5, 4, 3]])
    assert enclosed_volume(flipped.positions, flipped) == pytest.approx(-vol, rel=1e-12)


def make_loop(points):
    n = len(points)
    nodes = np.empty(2 * n, dtype=np.int64)
    nodes[0::2] = np.arange(n)
    nodes[1::2] = n + np.arange(n)
    mids = 0.5 * (points + np.roll(points, -1, axis=0))
    return BoundaryLoop(nodes), np.vstack([points, mids])


def test_fit_circle_regular_hexagon():
    ang = np.arange(6) * np.pi / 3
    loop, pos = make_loop(np.column_stack([np.cos(ang), np.sin(ang), np.zeros(6)]))
    center, axis, rho = fit_boundary_circle(loop, pos)
    assert np.allclose(center, 0, atol=1e-14)
    assert abs(abs(axis[2]) - 1) < 1e-12
    assert rho == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(loop.axis) == pytest.approx(1.0, abs=1e-12)
    # counter-clockwise loop: the retained side is the +z side of the vector area, axis points to -z
    assert axis[2] < 0


def test_fit_circle_wobbly_hexagon():
    ang = np.arange(6) * np.pi / 3
    z = 1e-3 * (-1.0) ** np.arange(6)
    loop, pos = make_loop(np.column_stack([np.cos(ang), np.sin(ang), z]))
    _, axis, rho = fit_boundary_circle(loop, pos)
    assert abs(rho - 1) <= 1e-3
    assert np.arccos(min(1.0, abs(axis[2]))) <= 1e-2


def test_fit_circle_collinear():
    loop, pos = make_loop(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float))
    with pytest.raises(DegenerateLoop):
        fit_boundary_circle(loop, pos)


def test_mesh_file_roundtrip(tmp_path, rng):
    mesh = make_sphere_mesh(1.0, 1)
    mesh = SurfaceMesh(mesh.positions + 1e-7 * rng.standard_normal(mesh.positions.shape), mesh.elements)
    path = tmp_path / "m.mesh"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.elements, mesh.elements)
    assert np.array_equal(back.positions, mesh.positions)
    first = path.read_text().splitlines()[0]
    assert first == f"{mesh.n_nodes} {mesh.n_elements}"


def test_compact_maps_nodes():
    mesh = make_sphere_mesh(1.0, 1)
    keep = np.arange(mesh.n_elements) % 2 == 0
    small, old_to_new = compact(mesh, keep)
    assert np.all(np.isin(np.arange(small.n_nodes), small.elements))
    kept = old_to_new >= 0
    assert np.array_equal(small.positions, mesh.positions[kept])
    assert np.array_equal(small.elements, old_to_new[mesh.elements[keep]])


def test_zigzag_loop_axis_follows_the_enclosed_area():
    # a narrow loop zigzagging axially by more than its radius would fool a
    # least-variance plane fit; the vector area still gives the true axis
    m = 36
    phi = 2 * np.pi * np.arange(m) / m
    radius = 0.03
    z = np.where(np.arange(m) % 2 == 0, 0.0, 0.065)
    pts = np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)
    loop, positions = make_loop(pts)
    center, axis, _ = fit_boundary_circle(loop, positions)
    assert abs(abs(axis[2]) - 1.0) < 1e-12
    assert axis[2] < 0  # counter-clockwise about +z: retained side is +z
