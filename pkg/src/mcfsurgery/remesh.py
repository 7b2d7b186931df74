"""Isotropic remeshing of a linear triangle mesh onto a level set.

Used only to prepare initial meshes: alternating passes of long-edge
splits, short-edge collapses, valence-driven flips and tangential smoothing,
with every moved or inserted vertex projected back onto the level set.
"""
from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)


class _TriMesh:
    def __init__(self, vertices, triangles, project, normal):
        self.v = [np.array(p, dtype=float) for p in vertices]
        self.f: list[list[int] | None] = [list(map(int, t)) for t in triangles]
        self.vf: list[set[int]] = [set() for _ in self.v]
        for i, t in enumerate(self.f):
            for a in t:
                self.vf[a].add(i)
        self.alive = [True] * len(self.v)
        self.project = project
        self.normal = normal

    # -- queries ------------------------------------------------------------
    def edge_faces(self, a, b):
        return [t for t in self.vf[a] & self.vf[b]]

    def neighbours(self, a):
        out = set()
        for t in self.vf[a]:
            out.update(self.f[t])
        out.discard(a)
        return out

    def edges(self):
        seen = set()
        for t in self.f:
            if t is None:
                continue
            for k in range(3):
                a, b = t[k], t[(k + 1) % 3]
                key = (a, b) if a < b else (b, a)
                if key not in seen:
                    seen.add(key)
                    yield key

    def face_normal(self, t, pos=None):
        pos = pos or {}
        p = [pos.get(i, self.v[i]) for i in t]
        n = np.cross(p[1] - p[0], p[2] - p[0])
        return n

    @staticmethod
    def rotate_to(t, a):
        k = t.index(a)
        return t[k:] + t[:k]

    # -- operations ---------------------------------------------------------
    def split(self, a, b):
        faces = self.edge_faces(a, b)
        if len(faces) != 2:
            return False
        m = len(self.v)
        self.v.append(self.project(0.5 * (self.v[a] + self.v[b])))
        self.vf.append(set())
        self.alive.append(True)
        for t in faces:
            tri = self.rotate_to(self.f[t], a)
            if tri[1] == b:  # (a, b, c)
                c = tri[2]
                self._replace(t, [a, m, c])
                self._add([m, b, c])
            else:  # (a, c, b)
                c = tri[1]
                self._replace(t, [a, c, m])
                self._add([m, c, b])
        return True

    def collapse(self, a, b, max_len):
        faces = self.edge_faces(a, b)
        if len(faces) != 2:
            return False
        opposite = set()
        for t in faces:
            opposite.update(self.f[t])
        opposite -= {a, b}
        if self.neighbours(a) & self.neighbours(b) != opposite:
            return False  # link condition
        if len(self.neighbours(a) | self.neighbours(b)) <= 4:
            return False
        new = self.project(0.5 * (self.v[a] + self.v[b]))
        ring = (self.neighbours(a) | self.neighbours(b)) - {a, b}
        if any(np.linalg.norm(self.v[c] - new) > max_len for c in ring):
            return False
        pos = {a: new, b: new}
        for t in (self.vf[a] | self.vf[b]) - set(faces):
            before = self.face_normal(self.f[t])
            after = self.face_normal(self.f[t], pos)
            if before @ after <= 0.2 * np.linalg.norm(before) * np.linalg.norm(after):
                return False
        for t in faces:
            self._remove(t)
        for t in list(self.vf[a]):
            tri = [b if i == a else i for i in self.f[t]]
            self._replace(t, tri)
        self.v[b] = new
        self.alive[a] = False
        return True

    def flip(self, a, b):
        faces = self.edge_faces(a, b)
        if len(faces) != 2:
            return False
        t1, t2 = faces
        tri1 = self.rotate_to(self.f[t1], a)
        if tri1[1] != b:
            t1, t2 = t2, t1
            tri1 = self.rotate_to(self.f[t1], a)
        c = tri1[2]
        tri2 = self.rotate_to(self.f[t2], b)
        d = tri2[2]
        if c == d or d in self.neighbours(c):
            return False
        val = {i: len(self.neighbours(i)) for i in (a, b, c, d)}
        before = sum((val[i] - 6) ** 2 for i in (a, b, c, d))
        val[a] -= 1
        val[b] -= 1
        val[c] += 1
        val[d] += 1
        after = sum((val[i] - 6) ** 2 for i in (a, b, c, d))
        if after >= before or val[a] < 4 or val[b] < 4:
            return False
        n_new1 = self.face_normal([a, d, c])
        n_new2 = self.face_normal([d, b, c])
        n_old = self.face_normal(self.f[t1]) + self.face_normal(self.f[t2])
        if n_new1 @ n_old <= 0 or n_new2 @ n_old <= 0:
            return False
        if n_new1 @ n_new2 <= 0.5 * np.linalg.norm(n_new1) * np.linalg.norm(n_new2):
            return False
        self._replace(t1, [a, d, c])
        self._replace(t2, [d, b, c])
        return True

    def smooth(self, weight=0.5):
        new = {}
        for i, ok in enumerate(self.alive):
            if not ok or not self.vf[i]:
                continue
            # area-weighted centroid of the one-ring triangles
            num = np.zeros(3)
            den = 0.0
            for t in self.vf[i]:
                p = [self.v[j] for j in self.f[t]]
                area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
                num += area * (p[0] + p[1] + p[2]) / 3
                den += area
            if den == 0:
                continue
            delta = num / den - self.v[i]
            n = self.normal(self.v[i])
            delta -= (delta @ n) * n
            new[i] = self.v[i] + weight * delta
        if new:
            idx = list(new)
            moved = self.project(np.array([new[i] for i in idx]))
            for i, p in zip(idx, moved):
                self.v[i] = p

    # -- bookkeeping --------------------------------------------------------
    def _replace(self, t, tri):
        for i in self.f[t]:
            self.vf[i].discard(t)
        self.f[t] = tri
        for i in tri:
            self.vf[i].add(t)

    def _add(self, tri):
        self.f.append(tri)
        t = len(self.f) - 1
        for i in tri:
            self.vf[i].add(t)

    def _remove(self, t):
        for i in self.f[t]:
            self.vf[i].discard(t)
        self.f[t] = None

    def arrays(self):
        keep = [i for i, ok in enumerate(self.alive) if ok and self.vf[i]]
        remap = -np.ones(len(self.v), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        verts = np.array([self.v[i] for i in keep])
        tris = np.array([[remap[i] for i in t] for t in self.f if t is not None], dtype=np.int64)
        return verts, tris


def isotropic_remesh(vertices, triangles, surface, target_edge: float, iterations: int = 8, smooth_steps: int = 3):
    """Remesh towards edge length ``target_edge`` on the level set ``surface``.

    Returns new ``(vertices, triangles)``; orientation is preserved.
    """
    from .geometry import project_to_levelset

    def project(p):
        return project_to_levelset(p, surface)

    def normal(p):
        return surface.unit_normal(p[None])[0]

    mesh = _TriMesh(vertices, triangles, project, normal)
    hi, lo = 4.0 / 3.0 * target_edge, 0.8 * target_edge
    for it in range(iterations):
        n_split = n_coll = n_flip = 0
        for a, b in list(mesh.edges()):
            if np.linalg.norm(mesh.v[a] - mesh.v[b]) > hi:
                n_split += mesh.split(a, b)
        for a, b in list(mesh.edges()):
            if not (mesh.alive[a] and mesh.alive[b]) or not mesh.edge_faces(a, b):
                continue
            if np.linalg.norm(mesh.v[a] - mesh.v[b]) < lo:
                n_coll += mesh.collapse(a, b, hi)
        for a, b in list(mesh.edges()):
            if mesh.edge_faces(a, b):
                n_flip += mesh.flip(a, b)
        for _ in range(smooth_steps):
            mesh.smooth()
        logger.debug("remesh pass %d: %d splits, %d collapses, %d flips", it, n_split, n_coll, n_flip)
    return mesh.arrays()
