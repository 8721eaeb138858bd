"""Pure numpy implementation of the pointwise stress/advection assembly."""

import numpy as np


def assemble_pointwise(g, alpha, beta):
    """Pointwise nonlinear fluxes on the padded grid.

    ``g`` has shape (P, 5, m, m) holding u, v, du/dx, du/dy, dv/dx of a
    divergence-free field, so dv/dy = -du/dx.
    Returns ``adv`` (P, 2, m, m) with the advective derivative (u.grad)u,
    ``S`` (P, 3, m, m) with the xx, xy, yy entries of
    alpha*E^2 + beta*|E|^2*E - u(x)u/2, column sums of |E|^4 (P, m)
    accumulated row by row in order, and the per-path maximum of |u|^2.
    """
    u, v, ux, uy, vx = (g[:, i] for i in range(5))
    vy = -ux
    e11 = 2.0 * ux
    e22 = 2.0 * vy
    e12 = uy + vx
    e12sq = e12 * e12
    e2 = e11 * e11 + 2.0 * e12sq + e22 * e22
    adv = np.empty(g.shape[:1] + (2,) + g.shape[2:])
    adv[:, 0] = u * ux + v * uy
    adv[:, 1] = u * vx + v * vy
    s = np.empty(g.shape[:1] + (3,) + g.shape[2:])
    s[:, 0] = alpha * (e11 * e11 + e12sq) + beta * e2 * e11 - 0.5 * (u * u)
    s[:, 1] = alpha * (e12 * (e11 + e22)) + beta * e2 * e12 - 0.5 * (u * v)
    s[:, 2] = alpha * (e12sq + e22 * e22) + beta * e2 * e22 - 0.5 * (v * v)
    vmax2 = np.max((u * u + v * v).reshape(u.shape[0], -1), axis=1)
    q = e2 * e2
    col = np.zeros((q.shape[0], q.shape[2]))
    for i in range(q.shape[1]):
        col += q[:, i]
    return adv, s, col, vmax2
