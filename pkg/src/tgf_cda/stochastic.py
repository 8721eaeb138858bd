"""Trace-class Wiener noise in the divergence-free Fourier basis and its coefficient."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .grid import DomainSpec, GridError, VelocityField, inv

__all__ = [
    "NoiseModel",
    "NoiseKind",
    "NoiseCoefficient",
    "NoiseConstants",
    "PathRng",
    "build_noise",
    "sample_increment",
    "apply_coefficient",
    "hs_norm",
]


class PathRng:
    """Independent, reproducible random stream for one Monte-Carlo path."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"PathRng(seed={self.seed}, stream={self.stream})"


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Truncated G-Wiener structure on a grid.

    Each retained wavevector ``k`` (one of each ``+-k`` pair) carries two unit
    basis fields ``q = c e cos(k.x)`` and ``q = c e sin(k.x)`` with
    ``e = k_perp / |k|`` and eigenvalue ``mu_k = a |k_phys|^(-2 s)``. Basis index
    ``2 j`` is the cosine and ``2 j + 1`` the sine of mode ``j``.
    """

    domain: DomainSpec
    k_max: int
    amplitude: float
    decay: float
    modes: np.ndarray = field(repr=False)  # (m, 2) integer wavevectors
    eigenvalues: np.ndarray = field(repr=False)  # (2m,) per basis field

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    @property
    def mu_max(self) -> float:
        return float(np.max(self.eigenvalues))

    @cached_property
    def _layout(self):
        dom = self.domain
        k1, k2 = self.modes[:, 0], self.modes[:, 1]
        kn = np.hypot(k1, k2)
        e = np.stack([-k2 / kn, k1 / kn], axis=1)  # (m, 2) unit, orthogonal to k
        c = np.sqrt(2.0 / dom.area)
        rows = np.mod(k1, dom.n).astype(int)
        cols = k2.astype(int)
        on_axis = k2 == 0
        mrows = np.mod(-k1[on_axis], dom.n).astype(int)
        mcols = np.zeros(on_axis.sum(), dtype=int)
        return e, c, rows, cols, on_axis, mrows, mcols

    def synthesize_hat(self, coef: np.ndarray) -> np.ndarray:
        """Spectrum of sum_b coef[..., b] q_b; ``coef`` has shape (..., size)."""
        dom = self.domain
        e, c, rows, cols, on_axis, mrows, mcols = self._layout
        zc, zs = coef[..., 0::2], coef[..., 1::2]
        amp = 0.5 * c * (zc - 1j * zs)  # coefficient of exp(i k.x)
        out = np.zeros(coef.shape[:-1] + (2,) + dom.spectral_shape, dtype=complex)
        for comp in range(2):
            out[..., comp, rows, cols] = amp * e[:, comp]
            out[..., comp, mrows, mcols] = np.conj(amp[..., on_axis]) * e[on_axis, comp]
        return out

    def project_hat(self, uh: np.ndarray) -> np.ndarray:
        """Coefficients (u, q_b) from a spectrum of shape (..., 2, n, n//2+1)."""
        e, c, rows, cols, *_ = self._layout
        s = uh[..., 0, rows, cols] * e[:, 0] + uh[..., 1, rows, cols] * e[:, 1]
        s = s * (self.domain.area * c)
        out = np.empty(uh.shape[:-3] + (self.size,))
        out[..., 0::2] = s.real
        out[..., 1::2] = -s.imag
        return out

    def basis_field(self, b: int) -> VelocityField:
        coef = np.zeros(self.size)
        coef[b] = 1.0
        return VelocityField.from_spectral(self.synthesize_hat(coef), self.domain)

    def coefficients(self, f: VelocityField) -> np.ndarray:
        self.domain.check(f.domain)
        return self.project_hat(f.spectral())

    def increment_coefficients(self, dt: float, rng: PathRng) -> np.ndarray:
        return np.sqrt(self.eigenvalues * dt) * rng.normal(self.size)


def build_noise(k_max: int, a: float, s: float, grid: DomainSpec) -> NoiseModel:
    """Enumerate modes 0 < |k| <= k_max with eigenvalues a |k_phys|^(-2 s)."""
    k_max = int(k_max)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if k_max >= grid.n // 2:
        raise ValueError(f"k_max = {k_max} reaches the Nyquist limit {grid.n // 2}")
    if not a > 0:
        raise ValueError(f"noise amplitude must be positive, got {a}")
    if not s > 1:
        raise ValueError(f"decay exponent must exceed d/2 = 1, got {s}")
    modes = [
        (k1, k2)
        for k2 in range(0, k_max + 1)
        for k1 in range(-k_max, k_max + 1)
        if 0 < k1 * k1 + k2 * k2 <= k_max * k_max and (k2 > 0 or k1 > 0)
    ]
    modes = np.array(modes, dtype=float)
    kphys = 2.0 * np.pi / grid.L * np.hypot(modes[:, 0], modes[:, 1])
    mu = np.repeat(a * kphys ** (-2.0 * s), 2)
    return NoiseModel(grid, k_max, float(a), float(s), modes, mu)


def sample_increment(model: NoiseModel, dt: float, rng: PathRng) -> VelocityField:
    """One Wiener increment sum_b sqrt(mu_b dt) g_b q_b."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    coef = model.increment_coefficients(dt, rng)
    return VelocityField(inv(model.synthesize_hat(coef), model.domain.n), model.domain)


class NoiseKind(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class NoiseConstants(NamedTuple):
    K: float
    K_tilde: float
    L: float


@dataclass(frozen=True)
class NoiseCoefficient:
    """Phi(xi) w = sigma0 w + sigma1 sum_b (xi, q_b) (w, q_b) q_b."""

    kind: NoiseKind = NoiseKind.ADDITIVE
    sigma0: float = 0.0
    sigma1: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise ValueError("noise amplitudes must be non-negative")
        if self.kind is NoiseKind.ADDITIVE and self.sigma1 != 0:
            raise ValueError("additive noise requires sigma1 = 0")

    @property
    def state_dependent(self) -> bool:
        return self.kind is NoiseKind.MULTIPLICATIVE and self.sigma1 > 0

    def constants(self, model: NoiseModel) -> NoiseConstants:
        """Linear-growth (K, K_tilde) and Lipschitz (L) constants."""
        k = 2.0 * self.sigma0**2 * model.trace
        kt = 2.0 * self.sigma1**2 * model.mu_max
        return NoiseConstants(k, kt, kt)

    def apply_hat(self, model: NoiseModel, xi_coef, dw_coef) -> np.ndarray:
        """Spectrum of Phi(xi) dW given basis coefficients of xi and dW."""
        coef = self.sigma0 * dw_coef
        if self.state_dependent:
            coef = coef + self.sigma1 * xi_coef * dw_coef
        return model.synthesize_hat(coef)


def _check(model: NoiseModel, *fields: VelocityField) -> None:
    for f in fields:
        if f.domain != model.domain:
            raise GridError("noise model and field live on different grids")


def apply_coefficient(
    coeff: NoiseCoefficient, model: NoiseModel, xi: VelocityField, dW: VelocityField
) -> VelocityField:
    _check(model, xi, dW)
    dw = model.coefficients(dW)
    xc = model.coefficients(xi) if coeff.state_dependent else None
    return VelocityField(inv(coeff.apply_hat(model, xc, dw), model.domain.n), model.domain)


def hs_norm(coeff: NoiseCoefficient, model: NoiseModel, xi: VelocityField) -> float:
    """||Phi(xi)||^2 in the Hilbert-Schmidt space L_G: sum_b mu_b ||Phi(xi) q_b||^2."""
    _check(model, xi)
    gain = np.full(model.size, coeff.sigma0)
    if coeff.state_dependent:
        gain = gain + coeff.sigma1 * model.coefficients(xi)
    return float(np.sum(model.eigenvalues * gain**2))
