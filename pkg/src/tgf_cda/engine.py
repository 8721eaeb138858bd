"""Semi-implicit Euler-Maruyama integration of the truth and nudged systems.

The state of one or many paths is carried as a batch of spectra of shape
(P, 2, n, n//2+1). Viscosity is treated implicitly per mode, the nonlinear
drift, forcing and noise explicitly. Nudging with a Fourier-mode interpolant
is folded into the implicit solve; a volume-element interpolant is applied
explicitly.
"""

from __future__ import annotations

import ctypes
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .constants import drift_bound_M, envelope_value, moment_constant
from .grid import DomainSpec, VelocityField, dual_norm, fwd, inv
from .interpolant import InterpolantKind, InterpolantSpec, volume_element_array
from .operators import FluidParams, project_hat, spectral_drift
from .stochastic import NoiseCoefficient, NoiseModel, PathRng

__all__ = [
    "CdaParams",
    "RunConfig",
    "ConfigError",
    "DiagnosticsRecord",
    "TwinState",
    "TwinResult",
    "MonteCarloResult",
    "NumericalAbort",
    "MonteCarloFailure",
    "step_truth",
    "step_assimilated",
    "run_twin",
    "run_truth",
    "simulate",
    "run_monte_carlo",
    "CFL_LIMIT",
]

CFL_LIMIT = 0.5
EXPLICIT_NUDGE_LIMIT = 0.5
MAX_EXCLUDED = 0.10


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NumericalAbort(RuntimeError):
    """Blow-up or CFL violation; carries the step index and the partial series."""

    def __init__(self, step: int, t: float, reason: str, records=None, path: int | None = None):
        where = f" (path {path})" if path is not None else ""
        super().__init__(f"numerical abort at step {step}, t = {t:.6g}{where}: {reason}")
        self.step = step
        self.t = t
        self.reason = reason
        self.records = list(records or [])
        self.path = path


class MonteCarloFailure(NumericalAbort):
    """More than the tolerated fraction of Monte-Carlo paths aborted."""


@dataclass(frozen=True)
class CdaParams:
    kappa: float = 0.0
    interpolant: InterpolantSpec | None = None
    c0: float | None = None

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ConfigError("cda.kappa", f"must be non-negative, got {self.kappa}")
        if self.kappa > 0 and self.interpolant is None:
            raise ConfigError("cda.interpolant", "required when kappa > 0")

    @property
    def active(self) -> bool:
        return self.kappa > 0


@dataclass(frozen=True, eq=False)
class RunConfig:
    grid: DomainSpec
    fluid: FluidParams
    xi0: VelocityField
    X0: VelocityField
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0
    noise: NoiseModel | None = None
    coefficient: NoiseCoefficient = field(default_factory=NoiseCoefficient)
    forcing: VelocityField | None = None
    cda: CdaParams = field(default_factory=CdaParams)
    record_every: int = 1
    snapshot_times: tuple = ()
    envelope_coeff: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt", f"must be positive, got {self.dt}")
        if not self.T >= self.dt:
            raise ConfigError("T", f"must be at least dt = {self.dt}, got {self.T}")
        if self.record_every < 1:
            raise ConfigError("record_every", "must be at least 1")
        for key in ("xi0", "X0"):
            f = getattr(self, key)
            if f.domain != self.grid:
                raise ConfigError(key, "field lives on a different grid")
        if self.forcing is not None:
            if self.forcing.domain != self.grid:
                raise ConfigError("forcing", "field lives on a different grid")
        if self.noise is not None and self.noise.domain != self.grid:
            raise ConfigError("noise", "noise model lives on a different grid")
        cda = self.cda
        if cda.active:
            cda.interpolant.validate(self.grid)
            if (
                cda.interpolant.kind is InterpolantKind.VOLUME_ELEMENT
                and self.dt * cda.kappa > EXPLICIT_NUDGE_LIMIT
            ):
                raise ConfigError(
                    "cda.kappa",
                    f"explicit nudging needs dt * kappa <= {EXPLICIT_NUDGE_LIMIT}, "
                    f"got {self.dt * cda.kappa}",
                )

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    def replace(self, **changes) -> "RunConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return RunConfig(**kw)

    def forcing_hat(self) -> np.ndarray | None:
        if self.forcing is None:
            return None
        return project_hat(self.forcing.spectral(), self.grid)

    def moment_constant(self) -> float:
        """Reference constant for the fourth-moment sanity bound."""
        dom, fl = self.grid, self.fluid
        if self.noise is not None:
            K, Kt, _ = self.coefficient.constants(self.noise)
        else:
            K = Kt = 0.0
        h = 0.0
        if self.forcing is not None:
            h = dual_norm(VelocityField.from_spectral(self.forcing_hat(), dom))
        M = drift_bound_M(K, Kt, dom.lambda1, dom.area, fl.alpha, fl.beta, h)
        return moment_constant(M, fl.nu, dom.lambda1)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    e_truth: float
    e_assim: float
    err_sq: float
    grad_sq: float
    strain_l4_4: float
    accum: float
    envelope: float

    def row(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


CSV_HEADER = tuple(f.name for f in fields(DiagnosticsRecord))


@dataclass
class TwinState:
    t: float
    xi: VelocityField
    X: VelocityField
    accum: float = 0.0

    @property
    def error(self) -> VelocityField:
        return self.X - self.xi


@dataclass
class TwinResult:
    records: list
    state: TwinState


# -- single-field steps -----------------------------------------------------


def _noise_hat(cfg: RunConfig, stack: np.ndarray, dw_coef) -> np.ndarray | float:
    if cfg.noise is None or dw_coef is None:
        return 0.0
    coeff = cfg.coefficient
    state = cfg.noise.project_hat(stack) if coeff.state_dependent else None
    return coeff.apply_hat(cfg.noise, state, dw_coef)


def _explicit_rhs(cfg: RunConfig, stack: np.ndarray, dw_coef, hhat):
    fl = cfg.fluid
    drift, e4, vmax = spectral_drift(stack, cfg.grid, fl.alpha, fl.beta)
    rhs = stack + cfg.dt * drift
    if hhat is not None:
        rhs = rhs + cfg.dt * hhat
    rhs = rhs + _noise_hat(cfg, stack, dw_coef)
    return rhs, e4, vmax


def _denominator(cfg: RunConfig) -> np.ndarray:
    return 1.0 + cfg.fluid.nu * cfg.dt * cfg.grid.k2


def _nudge_mask(cfg: RunConfig) -> np.ndarray:
    return (cfg.cda.interpolant.mask(cfg.grid) & cfg.grid.retained).astype(float)


def _explicit_nudge(cfg: RunConfig, Xh: np.ndarray, xih: np.ndarray) -> np.ndarray:
    dom = cfg.grid
    diff = inv(Xh - xih, dom.n)
    obs = volume_element_array(diff, dom, cfg.cda.interpolant)
    return cfg.cda.kappa * cfg.dt * project_hat(fwd(obs), dom)


def _finish(uh: np.ndarray, dom: DomainSpec) -> np.ndarray:
    return project_hat(uh, dom)


def _dw_coef(cfg: RunConfig, dW: VelocityField | None):
    if dW is None or cfg.noise is None:
        return None
    if dW.domain != cfg.grid:
        raise ConfigError("noise", "increment lives on a different grid")
    return cfg.noise.coefficients(dW)


def _guard(cfg, vmax, rhs, step=0, t=0.0):
    h = cfg.grid.h
    for p in range(len(vmax)):
        if not np.isfinite(vmax[p]) or not np.all(np.isfinite(rhs[p])):
            raise NumericalAbort(step, t, "non-finite state")
        if vmax[p] * cfg.dt / h > CFL_LIMIT:
            raise NumericalAbort(step, t, f"CFL number {vmax[p] * cfg.dt / h:.3g} exceeds {CFL_LIMIT}")


def step_truth(state: VelocityField, cfg: RunConfig, dW: VelocityField | None) -> VelocityField:
    """Advance the truth system by one step of size ``cfg.dt``."""
    dom = cfg.grid
    uh = project_hat(state.spectral(), dom)[None]
    dw = _dw_coef(cfg, dW)
    rhs, _, vmax = _explicit_rhs(cfg, uh, None if dw is None else dw[None], cfg.forcing_hat())
    _guard(cfg, vmax, rhs)
    return VelocityField.from_spectral(_finish(rhs / _denominator(cfg), dom)[0], dom)


def step_assimilated(
    state: VelocityField, obs_source: VelocityField, cfg: RunConfig, dW: VelocityField | None
) -> VelocityField:
    """Advance the nudged system by one step.

    ``obs_source`` is the truth the observations are taken from. With a
    Fourier-mode interpolant the nudging is implicit, so pass the truth at
    the new time level; with volume elements it is explicit, so pass the
    truth at the current level.
    """
    dom = cfg.grid
    Xh = project_hat(state.spectral(), dom)[None]
    xih = project_hat(obs_source.spectral(), dom)[None]
    dw = _dw_coef(cfg, dW)
    rhs, _, vmax = _explicit_rhs(cfg, Xh, None if dw is None else dw[None], cfg.forcing_hat())
    _guard(cfg, vmax, rhs)
    den = _denominator(cfg)
    cda = cfg.cda
    if not cda.active:
        out = _finish(rhs / den, dom)
    elif cda.interpolant.kind is InterpolantKind.FOURIER_MODES:
        # (rhs + kd xi) / (den + kd) written as a correction to the free step,
        # taken in physical space so X = xi gives an exactly zero correction
        kd = cda.kappa * cfg.dt * _nudge_mask(cfg)
        free = _finish(rhs / den, dom)
        gap = project_hat(fwd(obs_source.data - inv(free[0], dom.n)), dom)
        out = free + kd / (den + kd) * gap
    else:
        out = _finish((rhs - _explicit_nudge(cfg, Xh, xih)) / den, dom)
    return VelocityField.from_spectral(out[0], dom)


# -- batched integrator -----------------------------------------------------

_ALLOCATOR_TUNED = False


def tune_allocator() -> bool:
    """Keep large temporaries on the glibc heap instead of fresh mmaps.

    Each step allocates several multi-megabyte arrays; returning them to the
    OS and faulting them back in costs as much as the FFTs on some kernels.
    Set ``TGF_CDA_NO_MALLOPT=1`` to skip.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED or not sys.platform.startswith("linux"):
        return _ALLOCATOR_TUNED
    if os.environ.get("TGF_CDA_NO_MALLOPT", "") not in ("", "0"):
        return False
    try:
        libc = ctypes.CDLL(None)
        m_trim, m_top_pad, m_mmap = -1, -2, -3
        ok = libc.mallopt(m_mmap, 32 << 20) and libc.mallopt(m_trim, 256 << 20)
        libc.mallopt(m_top_pad, 64 << 20)
    except (OSError, AttributeError):
        return False
    _ALLOCATOR_TUNED = bool(ok)
    return _ALLOCATOR_TUNED



def _energy(uh: np.ndarray, dom: DomainSpec) -> np.ndarray:
    return dom.area * np.sum(dom.weights * (uh.real**2 + uh.imag**2), axis=(-3, -2, -1))


def _grad_energy(uh: np.ndarray, dom: DomainSpec) -> np.ndarray:
    return dom.area * np.sum(dom.weights * dom.k2 * (uh.real**2 + uh.imag**2), axis=(-3, -2, -1))


class _Batch:
    """P independent paths advanced in lock-step; aborted lanes are frozen at zero."""

    def __init__(self, cfg: RunConfig, streams: Sequence[int], twin: bool):
        tune_allocator()
        self.cfg = cfg
        self.twin = twin
        dom = cfg.grid
        P = len(streams)
        self.P = P
        self.streams = list(streams)
        self.rngs = [PathRng(cfg.seed, s) for s in streams]
        xi0 = project_hat(cfg.xi0.spectral(), dom)
        X0 = project_hat(cfg.X0.spectral(), dom)
        self.xi = np.repeat(xi0[None], P, axis=0)
        self.X = np.repeat(X0[None], P, axis=0) if twin else None
        self.hhat = cfg.forcing_hat()
        self.den = _denominator(cfg)
        if twin and cfg.cda.active and cfg.cda.interpolant.kind is InterpolantKind.FOURIER_MODES:
            self.kd = cfg.cda.kappa * cfg.dt * _nudge_mask(cfg)
            self.gain = self.kd / (self.den + self.kd)
        else:
            self.kd = None
        self.alive = np.ones(P, dtype=bool)
        self.aborts: list[tuple[int, int, float, str]] = []
        self.accum = np.zeros(P)
        self.err0 = _energy(self.X - self.xi, dom) if twin else np.zeros(P)
        self.rows: list[np.ndarray] = []  # each (P, 8)

    def _increments(self):
        cfg = self.cfg
        if cfg.noise is None:
            return None
        out = np.empty((self.P, cfg.noise.size))
        sq = np.sqrt(cfg.noise.eigenvalues * cfg.dt)
        for p, rng in enumerate(self.rngs):
            out[p] = sq * rng.normal(cfg.noise.size)
        return out

    def _kill(self, p: int, step: int, t: float, reason: str):
        self.alive[p] = False
        self.aborts.append((self.streams[p], step, t, reason))
        self.xi[p] = 0.0
        if self.X is not None:
            self.X[p] = 0.0

    def _record(self, t: float, e4: np.ndarray):
        cfg, dom = self.cfg, self.cfg.grid
        P = self.P
        e_truth = _energy(self.xi, dom)
        grad = _grad_energy(self.xi, dom)
        if self.twin:
            e_assim = _energy(self.X, dom)
            err = _energy(self.X - self.xi, dom)
        else:
            e_assim = np.full(P, np.nan)
            err = np.full(P, np.nan)
        env = np.full(P, np.nan)
        if self.twin and cfg.envelope_coeff is not None:
            env = np.array(
                [
                    envelope_value(self.err0[p], cfg.cda.kappa, t, cfg.envelope_coeff, self.accum[p])
                    for p in range(P)
                ]
            )
        row = np.stack([np.full(P, t), e_truth, e_assim, err, grad, e4[:P], self.accum.copy(), env], axis=1)
        row[~self.alive] = np.nan
        self.rows.append(row)

    def run(self, snapshot_cb: Callable | None = None, strict: bool = True):
        cfg, dom = self.cfg, self.cfg.grid
        P, N, dt = self.P, cfg.n_steps, cfg.dt
        snaps = sorted(cfg.snapshot_times)
        snap_steps = {int(round(s / dt)): s for s in snaps if 0 <= s <= N * dt + 1e-12}
        h = dom.h
        for step in range(N + 1):
            t = step * dt
            stack = np.concatenate([self.xi, self.X]) if self.twin else self.xi
            fl = cfg.fluid
            drift, e4, vmax = spectral_drift(stack, dom, fl.alpha, fl.beta)
            bad = ~np.isfinite(vmax) | (vmax * dt / h > CFL_LIMIT)
            bad = bad[:P] | (bad[P:] if self.twin else False)
            for p in np.flatnonzero(bad & self.alive):
                reason = "non-finite state" if not np.isfinite(vmax[p]) else "CFL limit exceeded"
                if strict:
                    raise NumericalAbort(step, t, reason, self.records(0), path=self.streams[p])
                self._kill(p, step, t, reason)
            if step in snap_steps and snapshot_cb is not None:
                for p in range(P):
                    xi = VelocityField.from_spectral(self.xi[p], dom)
                    X = VelocityField.from_spectral(self.X[p], dom) if self.twin else None
                    snapshot_cb(snap_steps[step], self.streams[p], xi, X)
            if step % cfg.record_every == 0 or step == N:
                self._record(t, e4)
            if step == N:
                break
            self.accum = self.accum + e4[:P] * dt
            dw = self._increments()
            rhs = stack + dt * drift
            if self.hhat is not None:
                rhs = rhs + dt * self.hhat
            if dw is not None:
                rhs = rhs + _noise_hat(cfg, stack, np.concatenate([dw, dw]) if self.twin else dw)
            xi_new = _finish(rhs[:P] / self.den, dom)
            if self.twin:
                Xr = rhs[P:]
                if not cfg.cda.active:
                    self.X = _finish(Xr / self.den, dom)
                elif self.kd is not None:
                    free = _finish(Xr / self.den, dom)
                    self.X = free + self.gain * (xi_new - free)
                else:
                    self.X = _finish((Xr - _explicit_nudge(cfg, self.X, self.xi)) / self.den, dom)
            self.xi = xi_new
            self.xi[~self.alive] = 0.0
            if self.twin:
                self.X[~self.alive] = 0.0

    def table(self) -> np.ndarray:
        """(P, n_records, 8) array of diagnostics."""
        return np.stack(self.rows, axis=1)

    def records(self, p: int) -> list[DiagnosticsRecord]:
        if not self.rows:
            return []
        return [DiagnosticsRecord(*map(float, r)) for r in self.table()[p]]

    def state(self, p: int) -> TwinState:
        dom = self.cfg.grid
        xi = VelocityField.from_spectral(self.xi[p], dom)
        X = VelocityField.from_spectral(self.X[p], dom) if self.twin else xi
        return TwinState(self.cfg.n_steps * self.cfg.dt, xi, X, float(self.accum[p]))


def simulate(cfg: RunConfig, twin: bool = True, stream: int = 0, snapshot_cb=None) -> TwinResult:
    """Integrate one path and return its records and final state."""
    b = _Batch(cfg, [stream], twin)
    b.run(snapshot_cb=snapshot_cb, strict=True)
    return TwinResult(b.records(0), b.state(0))


def run_twin(cfg: RunConfig, snapshot_cb=None) -> list[DiagnosticsRecord]:
    """Truth and nudged systems driven by the same Wiener path."""
    return simulate(cfg, True, 0, snapshot_cb).records


def run_truth(cfg: RunConfig, snapshot_cb=None) -> list[DiagnosticsRecord]:
    """Truth system alone; same noise path as ``run_twin`` for the same seed."""
    return simulate(cfg, False, 0, snapshot_cb).records


# -- Monte Carlo ------------------------------------------------------------


@dataclass
class MonteCarloResult:
    t: np.ndarray
    mean_err: np.ndarray
    se_err: np.ndarray
    mean_e4: np.ndarray  # E ||xi||^4
    se_e4: np.ndarray
    paths: np.ndarray  # (P, n_records, 8) diagnostics, NaN rows for excluded paths
    streams: list
    excluded: list = field(default_factory=list)  # (stream, step, t, reason)
    zero_width: bool = False
    moment_constant: float = float("nan")

    @property
    def n_paths(self) -> int:
        return len(self.streams)

    @property
    def n_used(self) -> int:
        return self.n_paths - len(self.excluded)

    def column(self, name: str) -> np.ndarray:
        return self.paths[:, :, CSV_HEADER.index(name)]


def _run_chunk(args):
    cfg, streams, twin = args
    b = _Batch(cfg, streams, twin)
    b.run(strict=False)
    return b.table(), b.aborts


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("TGF_CDA_THREADS", "1")))
    except ValueError:
        return 1


def run_monte_carlo(
    cfg: RunConfig, n_paths: int, twin: bool = True, batch_size: int = 8, workers: int | None = None
) -> MonteCarloResult:
    """Independent paths with per-path streams; mean-square error with standard errors.

    Paths are grouped into batches; results do not depend on the grouping.
    Aborted paths are excluded and listed; more than 10% exclusions fail.
    """
    if n_paths < 1:
        raise ConfigError("paths", f"need at least one path, got {n_paths}")
    streams = list(range(n_paths))
    chunks = [streams[i : i + batch_size] for i in range(0, n_paths, batch_size)]
    jobs = [(cfg, c, twin) for c in chunks]
    workers = _workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    table = np.concatenate([r[0] for r in results], axis=0)
    aborts = sorted([a for r in results for a in r[1]])
    if len(aborts) > MAX_EXCLUDED * n_paths:
        first = aborts[0]
        raise MonteCarloFailure(
            first[1], first[2], f"{len(aborts)} of {n_paths} paths aborted ({first[3]})", path=first[0]
        )
    ok = np.ones(n_paths, dtype=bool)
    ok[[a[0] for a in aborts]] = False
    used = table[ok]
    k = used.shape[0]
    err = used[:, :, CSV_HEADER.index("err_sq")]
    e4 = used[:, :, CSV_HEADER.index("e_truth")] ** 2

    def mean_se(a):
        m = a.mean(axis=0)
        if k < 2:
            return m, np.zeros_like(m)
        return m, a.std(axis=0, ddof=1) / math.sqrt(k)

    me, se = mean_se(err)
    m4, s4 = mean_se(e4)
    return MonteCarloResult(
        t=used[0, :, 0].copy(),
        mean_err=me,
        se_err=se,
        mean_e4=m4,
        se_e4=s4,
        paths=table,
        streams=streams,
        excluded=aborts,
        zero_width=k < 2,
        moment_constant=cfg.moment_constant(),
    )
