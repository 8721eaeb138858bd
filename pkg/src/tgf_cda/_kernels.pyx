# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused single-pass version of ``_kernels_py.assemble_pointwise``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def assemble_pointwise(const double[:, :, :, ::1] g, double alpha, double beta):
    cdef Py_ssize_t P = g.shape[0], m0 = g.shape[2], m1 = g.shape[3]
    cdef Py_ssize_t p, i, j
    cdef double u, v, ux, uy, vx, vy, e11, e22, e12, e12sq, e2, sp, vm
    adv_arr = np.empty((P, 2, m0, m1))
    s_arr = np.empty((P, 3, m0, m1))
    q_arr = np.zeros((P, m1))
    vmax_arr = np.empty(P)
    cdef double[:, :, :, ::1] adv = adv_arr
    cdef double[:, :, :, ::1] s = s_arr
    cdef double[:, ::1] q = q_arr
    cdef double[::1] vmax2 = vmax_arr
    with nogil:
        for p in range(P):
            vm = 0.0
            for i in range(m0):
                for j in range(m1):
                    u = g[p, 0, i, j]
                    v = g[p, 1, i, j]
                    ux = g[p, 2, i, j]
                    uy = g[p, 3, i, j]
                    vx = g[p, 4, i, j]
                    vy = -ux
                    e11 = 2.0 * ux
                    e22 = 2.0 * vy
                    e12 = uy + vx
                    e12sq = e12 * e12
                    e2 = e11 * e11 + 2.0 * e12sq + e22 * e22
                    adv[p, 0, i, j] = u * ux + v * uy
                    adv[p, 1, i, j] = u * vx + v * vy
                    s[p, 0, i, j] = alpha * (e11 * e11 + e12sq) + beta * e2 * e11 - 0.5 * (u * u)
                    s[p, 1, i, j] = alpha * (e12 * (e11 + e22)) + beta * e2 * e12 - 0.5 * (u * v)
                    s[p, 2, i, j] = alpha * (e12sq + e22 * e22) + beta * e2 * e22 - 0.5 * (v * v)
                    q[p, j] = q[p, j] + e2 * e2
                    sp = u * u + v * v
                    if sp > vm:
                        vm = sp
            vmax2[p] = vm
    return adv_arr, s_arr, q_arr, vmax_arr
