"""Fused element kernels (numba) for the per-step assembly."""
import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def local_system(x, elements, nu, curv, phi, dphi, weights, m_loc, a_loc, f_loc):
    """Local mass, stiffness and reaction-term contributions of all elements.

    ``m_loc``/``a_loc`` have shape (F, 36), ``f_loc`` shape (F, 6, 4).
    Returns the smallest metric determinant met (<= 0 flags degeneracy).
    """
    n_el = elements.shape[0]
    n_q = weights.shape[0]
    min_det = np.inf
    sg = np.empty((6, 3))
    for e in range(n_el):
        for k in range(36):
            m_loc[e, k] = 0.0
            a_loc[e, k] = 0.0
        for a in range(6):
            for c in range(4):
                f_loc[e, a, c] = 0.0
        for q in range(n_q):
            t0x = t0y = t0z = t1x = t1y = t1z = 0.0
            for a in range(6):
                node = elements[e, a]
                d0 = dphi[q, a, 0]
                d1 = dphi[q, a, 1]
                t0x += x[node, 0] * d0
                t0y += x[node, 1] * d0
                t0z += x[node, 2] * d0
                t1x += x[node, 0] * d1
                t1y += x[node, 1] * d1
                t1z += x[node, 2] * d1
            g11 = t0x * t0x + t0y * t0y + t0z * t0z
            g12 = t0x * t1x + t0y * t1y + t0z * t1z
            g22 = t1x * t1x + t1y * t1y + t1z * t1z
            det = g11 * g22 - g12 * g12
            if det < min_det:
                min_det = det
            if det <= 0.0:
                continue
            sqrtg = np.sqrt(det)
            w = weights[q] * sqrtg
            for a in range(6):
                c0 = (g22 * dphi[q, a, 0] - g12 * dphi[q, a, 1]) / det
                c1 = (g11 * dphi[q, a, 1] - g12 * dphi[q, a, 0]) / det
                sg[a, 0] = c0 * t0x + c1 * t1x
                sg[a, 1] = c0 * t0y + c1 * t1y
                sg[a, 2] = c0 * t0z + c1 * t1z
            # interpolated u = (nu, H) and |grad nu|^2
            a2 = 0.0
            for i in range(3):
                gx = gy = gz = 0.0
                for a in range(6):
                    v = nu[elements[e, a], i]
                    gx += v * sg[a, 0]
                    gy += v * sg[a, 1]
                    gz += v * sg[a, 2]
                a2 += gx * gx + gy * gy + gz * gz
            u0 = u1 = u2 = u3 = 0.0
            for a in range(6):
                node = elements[e, a]
                p = phi[q, a]
                u0 += p * nu[node, 0]
                u1 += p * nu[node, 1]
                u2 += p * nu[node, 2]
                u3 += p * curv[node]
            wa = w * a2
            for a in range(6):
                pa = phi[q, a]
                for b in range(6):
                    m_loc[e, 6 * a + b] += w * pa * phi[q, b]
                    a_loc[e, 6 * a + b] += w * (sg[a, 0] * sg[b, 0] + sg[a, 1] * sg[b, 1] + sg[a, 2] * sg[b, 2])
                f_loc[e, a, 0] += wa * u0 * pa
                f_loc[e, a, 1] += wa * u1 * pa
                f_loc[e, a, 2] += wa * u2 * pa
                f_loc[e, a, 3] += wa * u3 * pa
    return min_det
