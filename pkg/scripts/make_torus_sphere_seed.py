"""Generate the shipped torus-sphere seed mesh.

Marching cubes on a grid gives a fine triangulation of the zero level set,
which is then remeshed isotropically on the level set and written in the
mesh interchange format. Requires scikit-image (only for this script).

    python scripts/make_torus_sphere_seed.py [--target-edge 0.3] [--spacing 0.08]
"""
import argparse
import logging

import numpy as np
from skimage.measure import marching_cubes

from mcfsurgery.fem import enclosed_volume
from mcfsurgery.geometry import mesh_levelset, seed_path, torus_sphere_level, torus_sphere_surface
from mcfsurgery.mesh import connected_components, mesh_width, write_mesh


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--target-edge", type=float, default=0.3)
    ap.add_argument("--spacing", type=float, default=0.08)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    sp = args.spacing
    xs = np.arange(-6.6, 6.6 + 1e-9, sp)
    zs = np.arange(-2.6, 8.0 + 1e-9, sp)
    grid = np.stack(np.meshgrid(xs, xs, zs, indexing="ij"), -1)
    values = torus_sphere_level(grid.reshape(-1, 3)).reshape(grid.shape[:3])
    verts, faces, _, _ = marching_cubes(values, 0.0, spacing=(sp, sp, sp))
    verts += [xs[0], xs[0], zs[0]]
    surface = torus_sphere_surface()
    mesh = mesh_levelset(surface, (verts, faces), relax_iters=5, target_edge=args.target_edge, remesh_iters=10)
    if enclosed_volume(mesh.positions, mesh) < 0:
        mesh = type(mesh)(mesh.positions, mesh.elements[:, [0, 2, 1, 5, 4, 3]])
    comps = connected_components(mesh)
    print(f"nodes {mesh.n_nodes}, elements {mesh.n_elements}, h {mesh_width(mesh):.4f}, "
          f"components {[c.euler for c in comps]}, volume {enclosed_volume(mesh.positions, mesh):.4f}")
    out = args.out or seed_path("torus_sphere")
    write_mesh(mesh, out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
