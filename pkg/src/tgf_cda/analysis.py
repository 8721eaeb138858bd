"""Constants, admissible nudging-gain windows, decay fits and envelope audits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .constants import (
    additive_bracket,
    drift_bound_M,
    envelope_coefficient,
    kappa_lower,
    kappa_upper,
)
from .grid import DomainSpec, VelocityField, dual_norm, pad_inverse, random_field
from .interpolant import InterpolantKind, InterpolantSpec
from .operators import FluidParams, project_hat, strain_l4_4
from .stochastic import NoiseCoefficient, NoiseKind, NoiseModel, PathRng, hs_norm

__all__ = [
    "ConstantsLedger",
    "DecayFit",
    "EnvelopeReport",
    "KappaWindow",
    "ND_MARGIN",
    "drift_bound_M",
    "kappa_window",
    "estimate_Nd",
    "sup_strain_ratio",
    "fit_decay_rate",
    "envelope_audit",
    "build_ledger",
    "AnalysisError",
]

ND_MARGIN = 1.25
LOG_FLOOR = 1e-300


class AnalysisError(ValueError):
    pass


class KappaWindow(NamedTuple):
    kappa_min: float
    kappa_max: float

    @property
    def nonempty(self) -> bool:
        return self.kappa_min < self.kappa_max

    def contains(self, kappa: float) -> bool:
        # the upper edge is inclusive; allow for rounding in nu eps0 / (c0 varpi^2)
        return self.kappa_min < kappa <= self.kappa_max * (1.0 + 1e-12)


def kappa_window(Nd_hat, M, beta, lambda1, nu, epsilon0, L, c0_hat, varpi) -> KappaWindow:
    """Admissible gains: 27 Nd^4 M / (4 beta lambda1 nu^3 eps0^3) + L < kappa <= nu eps0 / (c0 varpi^2).

    ``Nd_hat`` is used as given; callers holding a raw estimate apply the
    safety margin first. For pathwise (additive-noise) windows pass the
    additive bracket as ``M`` and ``L = 0``.
    """
    return KappaWindow(
        kappa_lower(Nd_hat, M, beta, lambda1, nu, epsilon0, L),
        kappa_upper(nu, epsilon0, c0_hat, varpi),
    )


# -- Sobolev-Korn constant --------------------------------------------------


def sup_strain_ratio(f: VelocityField) -> float:
    """||f||_inf / ||E(f)||_4 with the sup taken on the 2x refined grid."""
    dom = f.domain
    e4 = strain_l4_4(f)
    if e4 <= 0.0:
        return 0.0
    fine = pad_inverse(f.spectral() * dom.retained, dom.n, 2 * dom.n)
    sup = float(np.sqrt(np.max(np.sum(fine**2, axis=0))))
    return sup / e4**0.25


def _perturb(f: VelocityField, rng: np.random.Generator, scale: float) -> VelocityField:
    dom = f.domain
    kmax = 3
    g = random_field(dom, rng, kmax=kmax, slope=1.0, energy=1.0)
    out = f.spectral() + scale * np.sqrt(max(float(np.sum(f.data**2) * dom.cell_area), 1e-300)) * g.spectral()
    return VelocityField.from_spectral(project_hat(out, dom), dom)


@dataclass(frozen=True)
class NdEstimate:
    value: float
    iterations: int
    history: tuple = field(repr=False, default=())

    def __float__(self) -> float:
        return self.value


def estimate_Nd(grid: DomainSpec, iterations: int, rng: PathRng, members: Sequence[VelocityField] = ()) -> NdEstimate:
    """Running maximum of ||u||_inf / ||E(u)||_4 over a search sequence.

    Even iterations draw a fresh random smooth divergence-free field, odd
    iterations perturb the current best field (coordinate ascent). The
    sequence of draws is fixed by ``rng``, so the estimate is monotone in
    ``iterations``. Extra ``members`` are scored first.
    """
    if iterations < 100:
        raise AnalysisError(f"need at least 100 iterations, got {iterations}")
    gen = rng.generator
    best_val, best = 0.0, None
    history = []
    for f in members:
        r = sup_strain_ratio(f)
        if r > best_val:
            best_val, best = r, f
    slopes = (0.5, 1.0, 2.0, 3.0)
    for i in range(iterations):
        if i % 2 == 0 or best is None:
            kmax = 1 + (i // 2) % 4
            cand = random_field(grid, gen, kmax=kmax, slope=slopes[(i // 2) % len(slopes)])
        else:
            cand = _perturb(best, gen, 0.3 * 0.98 ** (i // 2))
        r = sup_strain_ratio(cand)
        if r > best_val:
            best_val, best = r, cand
        history.append(best_val)
    if best_val <= 0.0 or not math.isfinite(best_val):
        raise AnalysisError("degenerate ensemble: no field with nonzero strain")
    return NdEstimate(best_val, iterations, tuple(history))


# -- decay fits -------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    t_a: float
    t_b: float
    r2: float
    n_points: int
    floored: bool = False
    method: str = "least squares on log(value)"


def fit_decay_rate(t, values, burn_in: float = 0.0, t_end: float | None = None) -> DecayFit:
    """Least-squares line through (t, log value) for t >= burn_in."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = t >= burn_in
    if t_end is not None:
        sel &= t <= t_end
    t, v = t[sel], v[sel]
    if len(t) < 10:
        raise AnalysisError(f"need at least 10 points after burn-in, got {len(t)}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise AnalysisError("series must be finite and non-negative")
    floored = bool(np.any(v < LOG_FLOOR))
    y = np.log(np.maximum(v, LOG_FLOOR))
    tm, ym = t.mean(), y.mean()
    dt, dy = t - tm, y - ym
    sxx = float(np.dot(dt, dt))
    if sxx == 0.0:
        raise AnalysisError("fit range has zero width")
    slope = float(np.dot(dt, dy)) / sxx
    intercept = float(ym - slope * tm)
    ss_tot = float(np.dot(dy, dy))
    resid = dy - slope * dt
    ss_res = float(np.dot(resid, resid))
    # a spread at rounding level of log(value) is a flat series: perfect fit
    flat = ss_tot <= len(t) * (4 * np.finfo(float).eps * max(1.0, abs(ym))) ** 2
    if flat:
        slope, intercept, r2 = 0.0, float(ym), 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return DecayFit(slope, intercept, float(t[0]), float(t[-1]), r2, len(t), floored)


# -- constants ledger -------------------------------------------------------


@dataclass(frozen=True)
class ConstantsLedger:
    lambda1: float
    Nd_hat: float
    Nd_used: float
    c0_hat: float
    M: float
    epsilon0: float
    L: float
    kappa_min: float
    kappa_max: float
    window_nonempty: bool
    mode: str  # "mean-square" (multiplicative) or "pathwise" (additive)
    nu: float
    varpi: float
    envelope_coeff: float
    advisory: bool
    provenance: dict = field(default_factory=dict)

    def window(self) -> KappaWindow:
        return KappaWindow(self.kappa_min, self.kappa_max)

    def check(self, kappa: float) -> bool:
        return self.window().contains(kappa)

    def auto_kappa(self) -> float:
        """min(kappa_max, 4 kappa_min), the default gain of the experiments."""
        return min(self.kappa_max, 4.0 * self.kappa_min)

    def to_dict(self) -> dict:
        return asdict(self)


def build_ledger(
    grid: DomainSpec,
    fluid: FluidParams,
    interpolant: InterpolantSpec,
    Nd_hat: float,
    c0_hat: float,
    noise: NoiseModel | None = None,
    coefficient: NoiseCoefficient | None = None,
    forcing: VelocityField | None = None,
    c0_provenance: str = "estimated",
    Nd_provenance: str = "estimated",
    margin: float = ND_MARGIN,
    overrides: dict | None = None,
) -> ConstantsLedger:
    """Assemble every constant entering the window and the pathwise envelope.

    Multiplicative noise uses the drift constant M and the Lipschitz
    constant; additive noise uses the pathwise bracket with L = 0.
    ``overrides`` may replace M, lambda1, epsilon0 or L; replaced values are
    tagged as given.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"M", "lambda1", "epsilon0", "L"}
    if unknown:
        raise AnalysisError(f"unknown constant override(s): {sorted(unknown)}")
    coefficient = coefficient or NoiseCoefficient()
    if noise is not None:
        K, Kt, L = coefficient.constants(noise)
        hs0 = hs_norm(coefficient, noise, VelocityField.zeros(grid))
    else:
        K = Kt = L = hs0 = 0.0
    h = dual_norm(forcing) if forcing is not None else 0.0
    Nd_used = Nd_hat * margin if Nd_provenance == "estimated" else Nd_hat
    additive = coefficient.kind is NoiseKind.ADDITIVE
    if additive:
        M = additive_bracket(hs0, grid.area, fluid.alpha, fluid.beta, h)
        L = 0.0
    else:
        M = drift_bound_M(K, Kt, grid.lambda1, grid.area, fluid.alpha, fluid.beta, h)
    lam = grid.lambda1
    eps = fluid.epsilon0
    M = float(overrides.get("M", M))
    lam = float(overrides.get("lambda1", lam))
    eps = float(overrides.get("epsilon0", eps))
    L = float(overrides.get("L", L))
    varpi = interpolant.effective_varpi(grid)
    win = kappa_window(Nd_used, M, fluid.beta, lam, fluid.nu, eps, L, c0_hat, varpi)
    prov = {
        "lambda1": "analytic",
        "Nd": Nd_provenance if Nd_provenance != "estimated" else f"estimated (x{margin} margin)",
        "c0": c0_provenance,
        "M": "analytic (additive bracket)" if additive else "analytic",
        "epsilon0": "analytic",
        "L": "analytic",
    }
    for key in overrides:
        prov[key] = "given"
    return ConstantsLedger(
        lambda1=lam,
        Nd_hat=float(Nd_hat),
        Nd_used=float(Nd_used),
        c0_hat=float(c0_hat),
        M=float(M),
        epsilon0=eps,
        L=float(L),
        kappa_min=win.kappa_min,
        kappa_max=win.kappa_max,
        window_nonempty=win.nonempty,
        mode="pathwise" if additive else "mean-square",
        nu=fluid.nu,
        varpi=varpi,
        envelope_coeff=envelope_coefficient(Nd_used, lam, fluid.nu, eps),
        advisory="estimated" in (Nd_provenance, c0_provenance),
        provenance=prov,
    )


def analytic_c0(spec: InterpolantSpec) -> float | None:
    """Fourier truncation satisfies the inequality with c0 = 1 exactly."""
    return 1.0 if spec.kind is InterpolantKind.FOURIER_MODES else None


# -- envelope audit ---------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeReport:
    n_records: int
    violations: int
    compliance: float
    max_ratio: float
    passed: bool


def envelope_audit(records, kappa: float, constants: ConstantsLedger, threshold: float = 0.99, floor: float = 1e-24) -> EnvelopeReport:
    """Compare each ||X - xi||^2 with err0 exp(-kappa t + c accum).

    ``floor`` is an absolute tolerance (relative to err0 when err0 > 0)
    absorbing roundoff; the run passes when the compliance fraction reaches
    ``threshold``.
    """
    if not records:
        raise AnalysisError("no records to audit")
    t = np.array([r.t for r in records])
    err = np.array([r.err_sq for r in records])
    acc = np.array([r.accum for r in records])
    if np.any(np.isnan(acc)):
        raise AnalysisError("missing accumulator column")
    if np.any(np.isnan(err)):
        raise AnalysisError("missing error column")
    err0 = err[0]
    expo = np.minimum(-kappa * t + constants.envelope_coeff * acc, 700.0)
    env = err0 * np.exp(expo)
    tol = floor * max(err0, 1.0)
    ok = err <= env * (1.0 + 1e-12) + tol
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(env > 0, err / env, np.where(err > tol, np.inf, 0.0))
    n = len(records)
    viol = int(n - np.count_nonzero(ok))
    comp = 1.0 - viol / n
    return EnvelopeReport(n, viol, comp, float(np.max(ratio)), comp >= threshold)
