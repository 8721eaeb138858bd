"""Spectral Leray projection, Stokes, advection and third-grade stress operators.

Every operator acts on the retained band (the Nyquist row and column are
dropped) and returns projected, mean-zero output. Quadratic products are
formed on a 3/2-padded grid, cubic ones on a 2x-padded grid, which makes the
integration-by-parts identities hold to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import (
    DomainSpec,
    GridError,
    TensorField,
    VelocityField,
    inv,
    norm_l2,
    pad_inverse,
    truncate_forward,
)

__all__ = [
    "FluidParams",
    "ParameterError",
    "epsilon0",
    "leray_project",
    "strain",
    "stokes",
    "advect",
    "trilinear",
    "grade2_stress",
    "grade3_stress",
    "nonlinear_drift",
    "spectral_drift",
]

DIV_TOL = 1e-8


class ParameterError(ValueError):
    """Fluid parameters violate nu > 0, beta > 0, |alpha| < sqrt(2 nu beta)."""


@dataclass(frozen=True)
class FluidParams:
    nu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ParameterError(f"viscosity nu must be positive, got {self.nu}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not abs(self.alpha) < np.sqrt(2.0 * self.nu * self.beta):
            raise ParameterError(
                f"|alpha| = {abs(self.alpha)} must be below sqrt(2 nu beta) = "
                f"{np.sqrt(2.0 * self.nu * self.beta)}"
            )

    @property
    def epsilon0(self) -> float:
        return 1.0 - np.sqrt(self.alpha**2 / (2.0 * self.beta * self.nu))


def epsilon0(params: FluidParams) -> float:
    """Dissipation margin 1 - sqrt(alpha^2 / (2 beta nu))."""
    return params.epsilon0


# -- spectral building blocks (arrays with arbitrary leading batch axes) ------


def _pad_size(n: int, factor: float) -> int:
    m = int(np.ceil(factor * n))
    return m + (m % 2)


def project_hat(uh: np.ndarray, dom: DomainSpec) -> np.ndarray:
    """Leray projection of a spectrum of shape (..., 2, n, n//2+1)."""
    kx, ky = dom.k
    k2 = dom.k2.copy()
    k2[0, 0] = 1.0
    kdotu = (kx * uh[..., 0, :, :] + ky * uh[..., 1, :, :]) / k2
    out = np.empty_like(uh)
    out[..., 0, :, :] = uh[..., 0, :, :] - kx * kdotu
    out[..., 1, :, :] = uh[..., 1, :, :] - ky * kdotu
    out *= dom.retained
    out[..., 0, 0] = 0.0
    return out


def _grad_hat(uh: np.ndarray, dom: DomainSpec) -> np.ndarray:
    """(..., 4, n, n//2+1): du/dx, du/dy, dv/dx, dv/dy."""
    kx, ky = dom.k
    u, v = uh[..., 0, :, :], uh[..., 1, :, :]
    return np.stack([1j * kx * u, 1j * ky * u, 1j * kx * v, 1j * ky * v], axis=-3)


def _div_tensor_hat(sh: np.ndarray, dom: DomainSpec) -> np.ndarray:
    """Divergence of a symmetric tensor given as (xx, xy, yy) spectra."""
    kx, ky = dom.k
    sxx, sxy, syy = sh[..., 0, :, :], sh[..., 1, :, :], sh[..., 2, :, :]
    return np.stack([1j * kx * sxx + 1j * ky * sxy, 1j * kx * sxy + 1j * ky * syy], axis=-3)


def spectral_drift(uh: np.ndarray, dom: DomainSpec, alpha: float, beta: float):
    """Fused nonlinear drift -B(u,u) - alpha J(u) - beta K(u) on batched spectra.

    ``uh`` has shape (P, 2, n, n//2+1) and must be divergence-free. All
    products are formed on the 2x grid in one pass through the compiled
    kernel. Returns the projected drift spectrum, the per-path quadrature of
    |E(u)|^4 and the per-path maximum speed.
    """
    n = dom.n
    m = 2 * n
    kx, ky = dom.k
    g = np.empty(uh.shape[:-3] + (5,) + uh.shape[-2:], dtype=complex)
    np.multiply(uh, dom.retained, out=g[..., :2, :, :])
    u, v = g[..., 0, :, :], g[..., 1, :, :]
    np.multiply(1j * kx, u, out=g[..., 2, :, :])
    np.multiply(1j * ky, u, out=g[..., 3, :, :])
    np.multiply(1j * kx, v, out=g[..., 4, :, :])
    phys = pad_inverse(g, n, m)
    adv, s, e4, vmax2 = kernels.assemble(phys, alpha, beta)
    advh = truncate_forward(adv, n)
    sh = truncate_forward(s, n)
    drift = project_hat(-0.5 * advh + _div_tensor_hat(sh, dom), dom)
    return drift, e4 * (dom.L / m) ** 2, np.sqrt(vmax2)


# -- public operators on VelocityField --------------------------------------


def _check_div_free(xi: VelocityField) -> None:
    dom = xi.domain
    uh = xi.spectral() * dom.retained
    kx, ky = dom.k
    div = kx * uh[0] + ky * uh[1]
    scale = np.sqrt(np.sum(dom.k2 * (np.abs(uh[0]) ** 2 + np.abs(uh[1]) ** 2)))
    if np.sqrt(np.sum(np.abs(div) ** 2)) > DIV_TOL * scale + 1e-300:
        raise GridError("first argument must be divergence-free")


def leray_project(u: VelocityField) -> VelocityField:
    """Orthogonal projection onto mean-zero divergence-free fields."""
    return VelocityField.from_spectral(project_hat(u.spectral(), u.domain), u.domain)


def strain(xi: VelocityField) -> TensorField:
    """Symmetric gradient grad(xi) + grad(xi)^T."""
    dom = xi.domain
    gh = _grad_hat(xi.spectral() * dom.retained, dom)
    ux, uy, vx, vy = inv(gh, dom.n)
    e = np.empty((2, 2) + dom.shape)
    e[0, 0] = 2.0 * ux
    e[1, 1] = 2.0 * vy
    e[0, 1] = e[1, 0] = uy + vx
    return TensorField(e, dom, symmetric=True)


def stokes(xi: VelocityField) -> VelocityField:
    dom = xi.domain
    return VelocityField.from_spectral(project_hat(dom.k2 * xi.spectral(), dom), dom)


def _padded(xi: VelocityField, m: int):
    dom = xi.domain
    uh = xi.spectral() * dom.retained
    g = np.concatenate([uh, _grad_hat(uh, dom)])
    return pad_inverse(g, dom.n, m)


def advect(xi: VelocityField, zeta: VelocityField) -> VelocityField:
    """Projected skew-symmetric advection P[((xi.grad)zeta + div(xi (x) zeta)) / 2]."""
    xi.domain.check(zeta.domain)
    _check_div_free(xi)
    dom = xi.domain
    m = _pad_size(dom.n, 1.5)
    a = _padded(xi, m)
    b = _padded(zeta, m)
    u, v = a[0], a[1]
    conv = np.stack([u * b[2] + v * b[3], u * b[4] + v * b[5]])
    # entries (xi_x z_x, xi_x z_y, xi_y z_x, xi_y z_y); div acts on the first index
    kx, ky = dom.k
    ph = truncate_forward(np.stack([u * b[0], u * b[1], v * b[0], v * b[1]]), dom.n)
    divh = np.stack([1j * kx * ph[0] + 1j * ky * ph[2], 1j * kx * ph[1] + 1j * ky * ph[3]])
    out = project_hat(0.5 * (truncate_forward(conv, dom.n) + divh), dom)
    return VelocityField.from_spectral(out, dom)


def trilinear(xi: VelocityField, zeta: VelocityField, upsilon: VelocityField) -> float:
    """b(xi, zeta, upsilon) = integral of ((xi.grad) zeta) . upsilon, exact quadrature."""
    xi.domain.check(zeta.domain)
    xi.domain.check(upsilon.domain)
    _check_div_free(xi)
    dom = xi.domain
    m = _pad_size(dom.n, 1.5)
    a = _padded(xi, m)
    b = _padded(zeta, m)
    w = pad_inverse(upsilon.spectral() * dom.retained, dom.n, m)
    integrand = (a[0] * b[2] + a[1] * b[3]) * w[0] + (a[0] * b[4] + a[1] * b[5]) * w[1]
    return float(np.sum(integrand) * (dom.L / m) ** 2)


def _strain_padded(xi: VelocityField, m: int):
    g = _padded(xi, m)
    return 2.0 * g[2], g[3] + g[4], 2.0 * g[5]


def _stress_output(s: np.ndarray, dom: DomainSpec) -> VelocityField:
    sh = truncate_forward(s, dom.n)
    return VelocityField.from_spectral(project_hat(-_div_tensor_hat(sh, dom), dom), dom)


def grade2_stress(xi: VelocityField) -> VelocityField:
    """J(xi) = -P div(E(xi) E(xi)) with the matrix product E.E."""
    dom = xi.domain
    e11, e12, e22 = _strain_padded(xi, _pad_size(dom.n, 1.5))
    s = np.stack([e11 * e11 + e12 * e12, e12 * (e11 + e22), e12 * e12 + e22 * e22])
    return _stress_output(s, dom)


def grade3_stress(xi: VelocityField) -> VelocityField:
    """K(xi) = -P div(|E(xi)|^2 E(xi))."""
    dom = xi.domain
    e11, e12, e22 = _strain_padded(xi, 2 * dom.n)
    e2 = e11 * e11 + 2.0 * e12 * e12 + e22 * e22
    return _stress_output(np.stack([e2 * e11, e2 * e12, e2 * e22]), dom)


def nonlinear_drift(xi: VelocityField, params: FluidParams) -> VelocityField:
    """-B(xi, xi) - alpha J(xi) - beta K(xi) via the fused kernel."""
    dom = xi.domain
    _check_div_free(xi)
    drift, _, _ = spectral_drift(xi.spectral()[None], dom, params.alpha, params.beta)
    return VelocityField.from_spectral(drift[0], dom)


def strain_l4_4(xi: VelocityField) -> float:
    """||E(xi)||_4^4 by exact quadrature on the 2x grid."""
    dom = xi.domain
    m = 2 * dom.n
    e11, e12, e22 = _strain_padded(xi, m)
    e2 = e11 * e11 + 2.0 * e12 * e12 + e22 * e22
    return float(np.sum(e2 * e2) * (dom.L / m) ** 2)


def max_speed(xi: VelocityField) -> float:
    return float(np.sqrt(np.max(np.sum(xi.data**2, axis=0))))


def relative_divergence(u: VelocityField) -> float:
    """||div u||_2 * L / ||u||_2 measured spectrally."""
    dom = u.domain
    uh = u.spectral()
    kx, ky = dom.k
    div = kx * uh[0] + ky * uh[1]
    d = np.sqrt(dom.area * np.sum(dom.weights * np.abs(div) ** 2))
    return float(d * dom.L / max(norm_l2(u), 1e-300))

