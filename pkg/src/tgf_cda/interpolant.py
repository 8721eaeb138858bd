"""Coarse observation operators and empirical certification of their constant c0.

Two operators are provided. ``volume_element`` replaces a field by its means
over a uniform grid of square cells of side about ``varpi``. ``fourier_modes``
keeps the Fourier coefficients with ``|k| <= 1 / varpi``. Both satisfy

    ||f - R f||^2 <= c0 varpi^2 ||f||_{H^1}^2,

and ``estimate_c0`` searches for the smallest ``c0`` consistent with a
random plus adversarial ensemble.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid import (
    DomainSpec,
    GridError,
    VelocityField,
    fwd,
    h1_seminorm,
    inv,
    norm_l2,
    random_field,
)
from .stochastic import PathRng

__all__ = [
    "InterpolantKind",
    "InterpolantSpec",
    "InterpolantError",
    "C0Certificate",
    "volume_element",
    "fourier_modes",
    "apply_interpolant",
    "estimate_c0",
    "approximation_ratio",
]


class InterpolantError(ValueError):
    pass


class InterpolantKind(str, enum.Enum):
    VOLUME_ELEMENT = "volume_element"
    FOURIER_MODES = "fourier_modes"


@dataclass(frozen=True)
class InterpolantSpec:
    kind: InterpolantKind
    varpi: float

    def __post_init__(self):
        object.__setattr__(self, "kind", InterpolantKind(self.kind))
        if not self.varpi > 0:
            raise InterpolantError(f"varpi must be positive, got {self.varpi}")

    @property
    def cutoff(self) -> float:
        """Largest retained physical wavenumber for the Fourier interpolant."""
        return 1.0 / self.varpi

    def validate(self, domain: DomainSpec) -> None:
        if not self.varpi < domain.L:
            raise InterpolantError(f"varpi = {self.varpi} must be below L = {domain.L}")

    def cells(self, domain: DomainSpec) -> int:
        """Cells per axis: ceil(L / varpi) snapped up to a divisor of n."""
        self.validate(domain)
        want = math.ceil(domain.L / self.varpi - 1e-9)
        for c in range(want, domain.n + 1):
            if domain.n % c == 0:
                return c
        return domain.n

    def effective_varpi(self, domain: DomainSpec) -> float:
        """Observation length actually realised on this grid."""
        if self.kind is InterpolantKind.VOLUME_ELEMENT:
            return domain.L / self.cells(domain)
        return self.varpi

    def mask(self, domain: DomainSpec) -> np.ndarray:
        """Boolean mask of retained coefficients in the rfft layout."""
        return np.sqrt(domain.k2) <= self.cutoff * (1.0 + 1e-12)

    def describe(self, domain: DomainSpec) -> dict:
        out = {"kind": self.kind.value, "varpi": self.varpi}
        if self.kind is InterpolantKind.VOLUME_ELEMENT:
            c = self.cells(domain)
            out.update(cells=c, cell_side=domain.L / c, snapped=c != math.ceil(domain.L / self.varpi - 1e-9))
        else:
            out.update(cutoff=self.cutoff, modes=int(np.count_nonzero(self.mask(domain) & domain.retained)))
        return out


def _cell_means(data: np.ndarray, n: int, c: int) -> np.ndarray:
    b = n // c
    lead = data.shape[:-2]
    blocks = data.reshape(lead + (c, b, c, b))
    means = blocks.mean(axis=(-3, -1))
    return np.repeat(np.repeat(means, b, axis=-2), b, axis=-1)


def volume_element(f: VelocityField, spec: InterpolantSpec) -> VelocityField:
    """Piecewise-constant field of cell means."""
    if spec.kind is not InterpolantKind.VOLUME_ELEMENT:
        raise InterpolantError("volume_element needs a volume_element spec")
    dom = f.domain
    c = spec.cells(dom)
    if dom.n % c:
        raise InterpolantError(f"{c} cells do not divide n = {dom.n}")
    return VelocityField(_cell_means(f.data, dom.n, c), dom)


def volume_element_array(data: np.ndarray, domain: DomainSpec, spec: InterpolantSpec) -> np.ndarray:
    """Batched cell means for arrays of shape (..., n, n)."""
    return _cell_means(data, domain.n, spec.cells(domain))


def fourier_modes(f: VelocityField, spec: InterpolantSpec) -> VelocityField:
    """Orthogonal projection onto modes with |k_phys| <= 1/varpi."""
    if spec.kind is not InterpolantKind.FOURIER_MODES:
        raise InterpolantError("fourier_modes needs a fourier_modes spec")
    dom = f.domain
    return VelocityField(inv(fwd(f.data) * spec.mask(dom), dom.n), dom)


def apply_interpolant(f: VelocityField, spec: InterpolantSpec) -> VelocityField:
    if spec.kind is InterpolantKind.VOLUME_ELEMENT:
        return volume_element(f, spec)
    return fourier_modes(f, spec)


def approximation_ratio(f: VelocityField, spec: InterpolantSpec) -> float:
    """||f - R f||^2 / (varpi^2 ||f||_{H^1}^2) with the full H^1 norm.

    Uses the realised observation length, so snapped cell counts enter the
    constant the same way they enter the gain window.
    """
    h1 = norm_l2(f) ** 2 + h1_seminorm(f) ** 2
    if h1 == 0.0:
        return 0.0
    r = norm_l2(f - apply_interpolant(f, spec)) ** 2
    return r / (spec.effective_varpi(f.domain) ** 2 * h1)


@dataclass(frozen=True)
class C0Certificate:
    interpolant: InterpolantSpec
    c0_hat: float
    ensemble_size: int
    smoothness: dict = field(default_factory=dict)
    max_ratio: float = 0.0
    worst_member: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interpolant"] = {"kind": self.interpolant.kind.value, "varpi": self.interpolant.varpi}
        return d

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "C0Certificate":
        d = dict(d)
        d["interpolant"] = InterpolantSpec(**d["interpolant"])
        return cls(**d)

    @classmethod
    def from_json(cls, text_or_path) -> "C0Certificate":
        p = Path(text_or_path) if not str(text_or_path).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else str(text_or_path)
        return cls.from_dict(json.loads(text))


def _mode_field(domain: DomainSpec, k1: int, k2: int, phase: float) -> VelocityField:
    """Unit divergence-free single Fourier mode k_perp/|k| cos(k.x + phase)."""
    x, y = domain.coords
    kx, ky = 2.0 * np.pi / domain.L * k1, 2.0 * np.pi / domain.L * k2
    kn = math.hypot(k1, k2)
    wave = np.cos(kx * x + ky * y + phase)
    return VelocityField(np.stack([-k2 / kn * wave, k1 / kn * wave]), domain)


def _adversarial_modes(spec: InterpolantSpec, domain: DomainSpec):
    """Single modes in a shell around the observation scale."""
    kmax = domain.n // 2 - 1
    unit = 2.0 * np.pi / domain.L
    lo, hi = 0.5 / spec.effective_varpi(domain), 4.0 / spec.effective_varpi(domain)
    for k2 in range(0, kmax + 1):
        for k1 in range(-kmax, kmax + 1):
            if k2 == 0 and k1 <= 0:
                continue
            kp = unit * math.hypot(k1, k2)
            if k1 in (1, 0) and k2 in (0, 1) or lo <= kp <= hi:
                for phase in (0.0, 0.5 * np.pi):
                    yield f"mode({k1},{k2},{phase:.3f})", _mode_field(domain, k1, k2, phase)


def estimate_c0(
    spec: InterpolantSpec,
    grid: DomainSpec,
    samples: int,
    rng: PathRng,
    ensemble: list[VelocityField] | None = None,
    adversarial: bool = True,
) -> C0Certificate:
    """Empirical c0 as the largest approximation ratio over an ensemble.

    The default ensemble has ``samples`` random smooth divergence-free fields
    with varied spectral slopes plus single modes around the observation
    scale. A caller-supplied ``ensemble`` replaces both.
    """
    spec.validate(grid)
    members: list[tuple[str, VelocityField]] = []
    slopes = (1.0, 1.5, 2.0, 3.0)
    if ensemble is not None:
        members = [(f"member{i}", f) for i, f in enumerate(ensemble)]
        smooth = {"source": "caller"}
    else:
        if samples < 50:
            raise InterpolantError(f"need at least 50 samples, got {samples}")
        gen = rng.generator
        for i in range(samples):
            s = slopes[i % len(slopes)]
            members.append((f"random(slope={s})", random_field(grid, gen, slope=s)))
        if adversarial:
            members.extend(_adversarial_modes(spec, grid))
        smooth = {"slopes": list(slopes), "kmax": grid.n // 2 - 1, "adversarial": adversarial}
    if not members:
        raise InterpolantError("degenerate ensemble: no members")
    for _, f in members:
        grid.check(f.domain)
    ratios = np.array([approximation_ratio(f, spec) for _, f in members])
    if not np.all(np.isfinite(ratios)):
        raise InterpolantError("non-finite approximation ratio in ensemble")
    if np.max(ratios) <= 0.0:
        raise InterpolantError("degenerate ensemble: every approximation ratio is zero")
    j = int(np.argmax(ratios))
    return C0Certificate(
        interpolant=spec,
        c0_hat=float(ratios[j]),
        ensemble_size=len(members),
        smoothness=smooth,
        max_ratio=float(ratios[j]),
        worst_member=members[j][0],
    )


def check_cells(domain: DomainSpec, spec: InterpolantSpec) -> None:
    if spec.kind is InterpolantKind.VOLUME_ELEMENT and domain.n % spec.cells(domain):
        raise GridError("cell grid does not divide the resolution")
