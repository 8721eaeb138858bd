"""Periodic grid, discrete fields, norms and spectral helpers.

Fields live in physical space on a uniform ``n x n`` grid over the torus
``[0, L)^2``; array index ``[i, j]`` is the point ``(x_i, y_j)``. Spectral
coefficients use the ``norm="forward"`` convention, so a coefficient does not
depend on the grid it was computed on and zero-padding is a plain copy.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "DomainSpec",
    "VelocityField",
    "TensorField",
    "GridError",
    "make_grid",
    "norm_l2",
    "norm_lp",
    "inner",
    "h1_seminorm",
    "dual_norm",
    "gradient",
    "divergence",
    "random_field",
    "spectral_coefficients",
    "write_snapshot",
    "read_snapshot",
    "write_slice_csv",
]


class GridError(ValueError):
    """Invalid grid, field shape or grid mismatch."""


@dataclass(frozen=True)
class DomainSpec:
    """Uniform periodic grid on the square torus of side ``L``."""

    n: int
    L: float
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise GridError("only d = 2 grids are supported")
        if int(self.n) != self.n or self.n % 2:
            raise GridError("resolution must be even")
        if self.n < 8:
            raise GridError("resolution must be at least 8")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise GridError("side length must be positive")

    @property
    def area(self) -> float:
        return self.L**self.d

    @property
    def lambda1(self) -> float:
        """Smallest eigenvalue of -Laplace on mean-zero fields."""
        return (2.0 * np.pi / self.L) ** 2

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def cell_area(self) -> float:
        return self.h**self.d

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def kint(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer wavenumbers in the rfft2 layout, shapes (n, 1) and (1, n//2+1)."""
        kx = np.fft.fftfreq(self.n, 1.0 / self.n)[:, None]
        ky = np.arange(self.n // 2 + 1, dtype=float)[None, :]
        return kx, ky

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical wavenumbers 2*pi*k/L in the rfft2 layout."""
        kx, ky = self.kint
        s = 2.0 * np.pi / self.L
        return kx * s, ky * s

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky = self.k
        return kx**2 + ky**2

    @cached_property
    def retained(self) -> np.ndarray:
        """Boolean mask of modes kept by the operators (Nyquist row/column dropped)."""
        kx, ky = self.kint
        half = self.n // 2
        return (np.abs(kx) < half) & (ky < half)

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each rfft2 entry in the full spectrum (Parseval weights)."""
        w = np.full(self.spectral_shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    def check(self, other: "DomainSpec") -> None:
        if self != other:
            raise GridError(f"grid mismatch: {self} vs {other}")


def make_grid(n: int, L: float) -> DomainSpec:
    """Build the periodic grid; ``n`` even and at least 8, ``L`` positive."""
    return DomainSpec(int(n), float(L))


# -- spectral transforms -----------------------------------------------------


def fwd(a: np.ndarray) -> np.ndarray:
    """rfft2 over the last two axes, forward-normalised."""
    return sfft.rfft2(a, norm="forward")


def inv(ah: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfft2(ah, s=(n, n), norm="forward")


def pad_inverse(ah: np.ndarray, n: int, m: int) -> np.ndarray:
    """Physical samples on an ``m`` grid of a spectrum given on an ``n`` grid.

    Assumes the Nyquist row/column of ``ah`` is zero. The first transform runs
    only over the ``n//2+1`` populated columns.
    """
    half = n // 2
    lead = ah.shape[:-2]
    z = np.zeros(lead + (m, half + 1), dtype=complex)
    z[..., :half, :] = ah[..., :half, :]
    z[..., m - half + 1 :, :] = ah[..., half + 1 :, :]
    z = sfft.ifft(z, axis=-2, norm="forward")
    w = np.zeros(lead + (m, m // 2 + 1), dtype=complex)
    w[..., : half + 1] = z
    return sfft.irfft(w, n=m, axis=-1, norm="forward")


def truncate_forward(a: np.ndarray, n: int) -> np.ndarray:
    """Spectrum on the ``n`` grid of samples given on a finer grid (Nyquist zeroed)."""
    m = a.shape[-1]
    half = n // 2
    b = sfft.rfft(a, axis=-1, norm="forward")[..., : half + 1]
    b = sfft.fft(b, axis=-2, norm="forward")
    out = np.zeros(a.shape[:-2] + (n, half + 1), dtype=complex)
    out[..., :half, :half] = b[..., :half, :half]
    out[..., half + 1 :, :half] = b[..., m - half + 1 :, :half]
    return out


def interpolate(a: np.ndarray, m: int) -> np.ndarray:
    """Trigonometric interpolation of real samples onto an ``m`` grid (m >= n).

    The Nyquist content of an even grid is split symmetrically, so the
    result is the exact band-limited interpolant.
    """
    n = a.shape[-1]
    if m == n:
        return np.array(a, dtype=float)
    ah = sfft.fft2(a, norm="forward")
    half = n // 2
    out = np.zeros(a.shape[:-2] + (m, m), dtype=complex)
    idx = np.r_[0:half, m - half + 1 : m]
    src = np.r_[0:half, n - half + 1 : n]
    out[..., idx[:, None], idx[None, :]] = ah[..., src[:, None], src[None, :]]
    # Nyquist row / column / corner split between +n/2 and -n/2
    nyq_rows = ah[..., half, :]
    for r in (half, m - half):
        out[..., r, idx] += 0.5 * nyq_rows[..., src]
    nyq_cols = ah[..., :, half]
    for c in (half, m - half):
        out[..., idx, c] += 0.5 * nyq_cols[..., src]
    for r in (half, m - half):
        for c in (half, m - half):
            out[..., r, c] += 0.25 * ah[..., half, half]
    return sfft.ifft2(out, norm="forward").real


# -- field types -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Two-component vector field sampled on ``domain``; ``data`` has shape (2, n, n)."""

    data: np.ndarray
    domain: DomainSpec

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.shape != (self.domain.d,) + self.domain.shape:
            raise GridError(f"field shape {data.shape} does not match grid n={self.domain.n}")
        if not np.all(np.isfinite(data)):
            raise GridError("field has non-finite samples")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, domain: DomainSpec) -> "VelocityField":
        return cls(np.zeros((domain.d,) + domain.shape), domain)

    @classmethod
    def from_function(cls, domain: DomainSpec, fn) -> "VelocityField":
        """Sample ``fn(x, y) -> (u, v)`` on the grid."""
        x, y = domain.coords
        u, v = fn(x, y)
        return cls(np.stack([np.broadcast_to(u, x.shape), np.broadcast_to(v, x.shape)]), domain)

    @classmethod
    def from_spectral(cls, uh: np.ndarray, domain: DomainSpec) -> "VelocityField":
        return cls(inv(uh, domain.n), domain)

    def spectral(self) -> np.ndarray:
        return fwd(self.data)

    def _other(self, other):
        if isinstance(other, VelocityField):
            self.domain.check(other.domain)
            return other.data
        return other

    def __add__(self, other):
        return VelocityField(self.data + self._other(other), self.domain)

    def __sub__(self, other):
        return VelocityField(self.data - self._other(other), self.domain)

    def __mul__(self, c):
        return VelocityField(self.data * float(c), self.domain)

    __rmul__ = __mul__

    def __neg__(self):
        return VelocityField(-self.data, self.domain)

    def __truediv__(self, c):
        return VelocityField(self.data / float(c), self.domain)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Rank-2 tensor field; ``data`` has shape (2, 2, n, n)."""

    data: np.ndarray
    domain: DomainSpec
    symmetric: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.shape != (self.domain.d, self.domain.d) + self.domain.shape:
            raise GridError(f"tensor shape {data.shape} does not match grid n={self.domain.n}")
        if not np.all(np.isfinite(data)):
            raise GridError("tensor has non-finite samples")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def magnitude_sq(self) -> np.ndarray:
        """Pointwise Frobenius norm squared."""
        return np.einsum("ij...,ij...->...", self.data, self.data)

    def trace(self) -> np.ndarray:
        return self.data[0, 0] + self.data[1, 1]


# -- norms -------------------------------------------------------------------


def _quad(domain: DomainSpec, values: np.ndarray) -> float:
    return float(np.sum(values) * domain.cell_area)


def norm_l2(f: VelocityField) -> float:
    return float(np.sqrt(_quad(f.domain, f.data**2)))


def norm_lp(f: VelocityField | TensorField, p: int) -> float:
    """L^p norm with pointwise Euclidean/Frobenius magnitude, p in {2, 4}.

    For p = 4 the samples are first interpolated onto the doubled grid, so the
    rectangle rule integrates the quartic exactly for band-limited data.
    """
    if p not in (2, 4):
        raise GridError(f"unsupported exponent p={p}; use 2 or 4")
    dom = f.domain
    data = f.data.reshape((-1,) + dom.shape)
    if p == 2:
        mag2 = np.sum(data**2, axis=0)
        return float(np.sqrt(_quad(dom, mag2)))
    m = 2 * dom.n
    fine = interpolate(data, m)
    mag2 = np.sum(fine**2, axis=0)
    total = float(np.sum(mag2**2) * (dom.L / m) ** 2)
    return total**0.25


def inner(f: VelocityField, g: VelocityField) -> float:
    f.domain.check(g.domain)
    return _quad(f.domain, np.sum(f.data * g.data, axis=0))


def gradient(f: VelocityField) -> TensorField:
    """Spectral gradient, entry [i, j] = d f_i / d x_j."""
    dom = f.domain
    kx, ky = dom.k
    fh = f.spectral()
    g = np.empty((2, 2) + fh.shape[1:], dtype=complex)
    for i in range(2):
        g[i, 0] = 1j * kx * fh[i]
        g[i, 1] = 1j * ky * fh[i]
    g *= dom.retained
    return TensorField(inv(g, dom.n), dom)


def divergence(f: VelocityField) -> np.ndarray:
    """Spectral divergence as a scalar sample array."""
    dom = f.domain
    kx, ky = dom.k
    fh = f.spectral()
    return inv(dom.retained * (1j * kx * fh[0] + 1j * ky * fh[1]), dom.n)


def h1_seminorm(f: VelocityField) -> float:
    g = gradient(f)
    return float(np.sqrt(_quad(f.domain, np.sum(g.data**2, axis=(0, 1)))))


def dual_norm(f: VelocityField, tol: float = 1e-10) -> float:
    """Norm of ``f`` in the dual of the H^1-seminorm space, evaluated spectrally."""
    dom = f.domain
    fh = f.spectral()
    scale = max(norm_l2(f), np.finfo(float).tiny)
    mean = np.abs(fh[:, 0, 0]).max() * np.sqrt(dom.area)
    if mean > tol * scale:
        raise GridError(f"dual norm needs a mean-zero field (mean magnitude {mean:.3e})")
    k2 = dom.k2.copy()
    k2[0, 0] = np.inf
    total = dom.area * np.sum(dom.weights * np.abs(fh) ** 2 / k2)
    return float(np.sqrt(total))


def spectral_coefficients(f: VelocityField) -> np.ndarray:
    """Full-spectrum coefficients scaled so sum |c|^2 equals norm_l2(f)**2."""
    return sfft.fft2(f.data, norm="forward") * np.sqrt(f.domain.area)


# -- random fields -----------------------------------------------------------


def random_field(
    domain: DomainSpec,
    rng: np.random.Generator,
    kmax: int | None = None,
    slope: float = 2.0,
    energy: float = 1.0,
) -> VelocityField:
    """Random smooth divergence-free mean-zero field with ``norm_l2**2 == energy``.

    Built from a random streamfunction whose coefficients decay like
    ``|k|^-slope`` (integer wavenumbers) and vanish beyond ``kmax``.
    """
    half = domain.n // 2
    kmax = half - 1 if kmax is None else min(int(kmax), half - 1)
    kx, ky = domain.kint
    kk = np.sqrt(kx**2 + ky**2)
    amp = np.where((kk > 0) & (np.abs(kx) <= kmax) & (ky <= kmax), 1.0, 0.0)
    amp = amp * np.where(kk > 0, kk, 1.0) ** (-slope - 1.0)
    psih = amp * (rng.standard_normal(kk.shape) + 1j * rng.standard_normal(kk.shape))
    psih *= domain.retained
    kxp, kyp = domain.k
    uh = np.stack([1j * kyp * psih, -1j * kxp * psih])
    u = inv(uh, domain.n)
    # round trip once so the ky = 0 column is exactly Hermitian
    u = inv(fwd(u) * domain.retained, domain.n)
    e = float(np.sum(u**2) * domain.cell_area)
    if e == 0.0:
        return VelocityField(u, domain)
    return VelocityField(u * np.sqrt(energy / e), domain)


# -- serialisation -----------------------------------------------------------

_MAGIC = b"TGFS"
_HEADER = struct.Struct("<4sIId")


def write_snapshot(f: VelocityField, path: str | Path) -> None:
    """Binary layout: header (magic, d, n, L) then components, row-major float64 LE."""
    dom = f.domain
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, dom.d, dom.n, dom.L))
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_snapshot(path: str | Path) -> VelocityField:
    raw = Path(path).read_bytes()
    magic, d, n, L = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise GridError(f"{path}: not a field snapshot")
    dom = DomainSpec(int(n), float(L), int(d))
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return VelocityField(data.reshape((d,) + dom.shape).astype(float), dom)


def write_slice_csv(f: VelocityField, path: str | Path, axis: int = 0, index: int = 0) -> None:
    """Write one grid line (fixed x index when axis=0) as ``coord, u, v`` rows."""
    dom = f.domain
    coord = np.arange(dom.n) * dom.h
    sl = f.data[:, index, :] if axis == 0 else f.data[:, :, index]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y" if axis == 0 else "x", "u", "v"])
        for c, u, v in zip(coord, sl[0], sl[1]):
            w.writerow([repr(float(c)), repr(float(u)), repr(float(v))])
