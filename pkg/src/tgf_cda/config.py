"""JSON run configuration: schema validation, defaults and object construction."""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import ConstantsLedger, analytic_c0, build_ledger, estimate_Nd
from .engine import CdaParams, ConfigError, RunConfig
from .grid import DomainSpec, GridError, VelocityField, random_field, read_snapshot
from .interpolant import C0Certificate, InterpolantKind, InterpolantSpec, estimate_c0
from .operators import FluidParams, ParameterError, leray_project
from .stochastic import NoiseCoefficient, PathRng, build_noise

__all__ = ["load_config", "build_scenario", "Scenario", "parse_length", "build_field", "schema"]

# RNG streams used for constant estimation, disjoint from path streams
ND_STREAM = 1 << 40
C0_STREAM = (1 << 40) + 1

DEFAULTS = {
    "seed": 0,
    "noise": None,
    "forcing": None,
    "initial": {"truth": {"preset": "zero"}, "assimilated": {"preset": "zero"}},
    "cda": {"kappa": 0.0, "c0": "auto"},
    "time": {"dt": 1e-3, "T": 1.0, "record_every": 1, "snapshots": []},
    "constants": {"Nd": "auto", "Nd_iterations": 200, "c0_samples": 100},
    "mc": {"paths": 8, "batch_size": 8, "burn_in": 1.0},
}
NOISE_DEFAULTS = {"a": 1.0, "s": 2.0, "sigma0": 0.0, "sigma1": 0.0}


def schema() -> dict:
    text = resources.files("tgf_cda").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def parse_length(value, key: str = "length") -> float:
    """Accept a positive number or strings such as "2pi" and "8*pi"."""
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(r"\s*([0-9.eE+-]+)?\s*\*?\s*pi\s*", str(value))
    if not m:
        raise ConfigError(key, f"cannot parse length {value!r}")
    return float(m.group(1) or 1.0) * math.pi


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(source) -> dict:
    """Read, validate and default-fill a configuration (path or dict)."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"no such file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        raw.setdefault("_base_dir", str(path.parent.resolve()))
    base_dir = raw.pop("_base_dir", None)
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        key = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(key, exc.message) from None
    cfg = _merge(DEFAULTS, raw)
    if cfg["noise"] is not None:
        cfg["noise"] = _merge(NOISE_DEFAULTS, cfg["noise"])
    if base_dir is not None:
        cfg["_base_dir"] = base_dir
    return cfg


def build_field(spec: dict | None, domain: DomainSpec, key: str, base_dir: str | None = None) -> VelocityField:
    """Field from a named preset, a snapshot file or a sum of those, Leray-projected."""
    if spec is None:
        return VelocityField.zeros(domain)
    if "sum" in spec:
        total = VelocityField.zeros(domain)
        for i, part in enumerate(spec["sum"]):
            total = total + build_field(part, domain, f"{key}.sum.{i}", base_dir)
        return total
    if "snapshot" in spec:
        p = Path(spec["snapshot"])
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        try:
            f = read_snapshot(p)
        except (OSError, GridError) as exc:
            raise ConfigError(f"{key}.snapshot", str(exc)) from None
        if f.domain != domain:
            raise ConfigError(f"{key}.snapshot", "snapshot grid differs from the configured grid")
        return leray_project(f)
    preset = spec["preset"]
    x, y = domain.coords
    kk = 2.0 * np.pi / domain.L * spec.get("k", 1)
    amp = spec.get("amplitude", 1.0)
    if preset == "zero":
        return VelocityField.zeros(domain)
    if preset in ("shear", "kolmogorov"):
        f = VelocityField(np.stack([amp * np.sin(kk * y), np.zeros_like(y)]), domain)
    elif preset == "taylor_green":
        f = VelocityField(
            np.stack([amp * np.sin(kk * x) * np.cos(kk * y), -amp * np.cos(kk * x) * np.sin(kk * y)]), domain
        )
    elif preset == "random":
        rng = np.random.default_rng(spec.get("seed", 0))
        f = random_field(
            domain, rng, kmax=spec.get("kmax", 4), slope=spec.get("slope", 2.0), energy=spec.get("energy", 1.0)
        )
    else:  # pragma: no cover - schema rejects other names
        raise ConfigError(f"{key}.preset", f"unknown preset {preset!r}")
    return leray_project(f)


@dataclass
class Scenario:
    raw: dict
    run: RunConfig
    ledger: ConstantsLedger | None
    certificate: C0Certificate | None
    Nd_hat: float | None

    @property
    def kappa(self) -> float:
        return self.run.cda.kappa


def _constants(raw, grid, fluid, noise, coeff, forcing, spec, seed):
    cons = raw["constants"]
    cert = None
    if cons["Nd"] == "auto":
        nd = estimate_Nd(grid, cons["Nd_iterations"], PathRng(seed, ND_STREAM)).value
        nd_prov = "estimated"
    else:
        nd, nd_prov = float(cons["Nd"]), "given"
    c0 = raw["cda"].get("c0", "auto")
    if c0 == "auto":
        exact = analytic_c0(spec)
        if exact is not None:
            c0, c0_prov = exact, "analytic"
        else:
            cert = estimate_c0(spec, grid, cons["c0_samples"], PathRng(seed, C0_STREAM))
            c0, c0_prov = cert.c0_hat, "estimated"
    else:
        c0, c0_prov = float(c0), "given"
    overrides = {k: cons[k] for k in ("M", "lambda1", "epsilon0", "L") if k in cons}
    ledger = build_ledger(
        grid,
        fluid,
        spec,
        nd,
        c0,
        noise,
        coeff,
        forcing,
        c0_provenance=c0_prov,
        Nd_provenance=nd_prov,
        overrides=overrides,
    )
    return ledger, cert, nd


def build_scenario(raw: dict, seed: int | None = None) -> Scenario:
    """Turn a validated configuration into a RunConfig plus its constants."""
    if seed is not None:
        raw = dict(raw, seed=int(seed))
    seed = raw["seed"]
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {seed}")
    base_dir = raw.get("_base_dir")
    try:
        g = raw["grid"]
        grid = DomainSpec(g["n"], parse_length(g["L"], "grid.L"))
    except GridError as exc:
        raise ConfigError("grid", str(exc)) from None
    try:
        f = raw["fluid"]
        fluid = FluidParams(f["nu"], f["alpha"], f["beta"])
    except ParameterError as exc:
        raise ConfigError("fluid", str(exc)) from None
    noise = None
    coeff = NoiseCoefficient()
    if raw["noise"] is not None:
        nz = raw["noise"]
        try:
            noise = build_noise(nz["k_max"], nz["a"], nz["s"], grid)
            coeff = NoiseCoefficient(nz["kind"], nz["sigma0"], nz["sigma1"])
        except ValueError as exc:
            raise ConfigError("noise", str(exc)) from None
    forcing = None
    if raw["forcing"] is not None:
        forcing = build_field(raw["forcing"], grid, "forcing", base_dir)
    xi0 = build_field(raw["initial"].get("truth"), grid, "initial.truth", base_dir)
    X0 = build_field(raw["initial"].get("assimilated"), grid, "initial.assimilated", base_dir)
    cda_raw = raw["cda"]
    spec = None
    ledger = cert = nd = None
    if "interpolant" in cda_raw:
        it = cda_raw["interpolant"]
        try:
            spec = InterpolantSpec(InterpolantKind(it["kind"]), parse_length(it["varpi"], "cda.interpolant.varpi"))
            spec.validate(grid)
        except ValueError as exc:
            raise ConfigError("cda.interpolant", str(exc)) from None
        try:
            ledger, cert, nd = _constants(raw, grid, fluid, noise, coeff, forcing, spec, seed)
        except ValueError as exc:
            raise ConfigError("constants", str(exc)) from None
    kappa = cda_raw.get("kappa", 0.0)
    if kappa == "auto":
        if ledger is None:
            raise ConfigError("cda.kappa", "'auto' needs an interpolant")
        kappa = ledger.auto_kappa()
    t = raw["time"]
    run = RunConfig(
        grid=grid,
        fluid=fluid,
        xi0=xi0,
        X0=X0,
        dt=t["dt"],
        T=t["T"],
        seed=seed,
        noise=noise,
        coefficient=coeff,
        forcing=forcing,
        cda=CdaParams(float(kappa), spec, None if ledger is None else ledger.c0_hat),
        record_every=t["record_every"],
        snapshot_times=tuple(t.get("snapshots", ())),
        envelope_coeff=None if ledger is None else ledger.envelope_coeff,
    )
    return Scenario(raw, run, ledger, cert, nd)
