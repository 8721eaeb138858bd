"""Command-line interface: ``tgf-cda <subcommand> --config run.json --out dir``.

Exit codes: 0 success, 1 usage or configuration error, 2 nudging gain outside
the admissible window (check-params), 3 numerical abort or a failed identity
check (verify-ops).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .analysis import AnalysisError, envelope_audit, fit_decay_rate
from .config import build_scenario, load_config
from .engine import CSV_HEADER, ConfigError, NumericalAbort, run_monte_carlo, simulate
from .grid import write_snapshot
from .verify import format_table, operator_identity_suite

EXIT_OK, EXIT_USAGE, EXIT_WINDOW, EXIT_ABORT = 0, 1, 2, 3
MANIFEST_SCHEMA = "tgf-cda/manifest/1"
TIMESTAMP_FIELDS = ("wall_time_s", "started_at", "finished_at")
MC_HEADER = ("t", "mean_err_sq", "se_err_sq", "mean_energy_sq", "se_energy_sq")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tgf-cda", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--quiet", action="store_true", help="print nothing on success")

    common(sub.add_parser("simulate", help="truth system only"))
    common(sub.add_parser("assimilate", help="truth and nudged twin run"))
    mc = sub.add_parser("mc", help="Monte-Carlo ensemble of twin runs")
    common(mc)
    mc.add_argument("--paths", type=int, default=None, help="number of paths")
    common(sub.add_parser("check-params", help="admissible nudging-gain window"))
    common(sub.add_parser("estimate-constants", help="estimate Nd and c0 and write the ledger"))
    v = sub.add_parser("verify-ops", help="operator identity residuals")
    common(v, config_required=False)
    v.add_argument("--samples", type=int, default=200)
    v.add_argument("-n", "--resolution", type=int, default=64)
    return p


# -- output helpers ---------------------------------------------------------


def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _clean(obj):
    """JSON-safe copy: NaN/inf to strings, numpy scalars to Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class _Run:
    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.quiet = getattr(args, "quiet", False)
        self.out = Path(args.out) if getattr(args, "out", None) else None
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()
        self.started = datetime.now(timezone.utc).isoformat()

    def say(self, *msg):
        if not self.quiet:
            print(*msg)

    def path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.out / name

    def manifest(self, scenario, status="ok", results=None, seed=0):
        p = self.path("manifest.json")
        if p is None:
            return
        doc = {
            "schema": MANIFEST_SCHEMA,
            "command": self.command,
            "version": __version__,
            "backend": kernels.get_backend(),
            "seed": int(seed),
            "config": scenario.raw if scenario is not None else {},
            "ledger": scenario.ledger.to_dict() if scenario is not None and scenario.ledger else None,
            "results": results or {},
            "outputs": sorted(set(self.outputs)),
            "status": status,
            "csv_header": list(CSV_HEADER),
            "wall_time_s": time.perf_counter() - self.t0,
            "started_at": self.started,
            "finished_at": datetime.now(timezone.utc).isoformat(),
        }
        p.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _scenario(args):
    raw = load_config(args.config)
    return build_scenario(raw, seed=args.seed)


def _snapshot_writer(run: _Run):
    if run.out is None:
        return None

    def cb(t, stream, xi, X):
        tag = f"t{t:.6f}_p{stream:04d}"
        (run.out / "snapshots").mkdir(parents=True, exist_ok=True)
        write_snapshot(xi, run.path(f"snapshots/truth_{tag}.bin"))
        if X is not None:
            write_snapshot(X, run.path(f"snapshots/assim_{tag}.bin"))

    return cb


def _window_summary(sc) -> dict:
    led = sc.ledger
    if led is None:
        return {}
    return {
        "kappa": sc.kappa,
        "kappa_min": led.kappa_min,
        "kappa_max": led.kappa_max,
        "window_nonempty": led.window_nonempty,
        "kappa_in_window": led.check(sc.kappa),
        "verdict": ("advisory" if led.advisory else "certified"),
    }


def _records_rows(records):
    return [r.row() for r in records]


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args, twin: bool) -> int:
    run = _Run(args, "assimilate" if twin else "simulate")
    sc = _scenario(args)
    cb = _snapshot_writer(run)
    try:
        res = simulate(sc.run, twin=twin, snapshot_cb=cb)
    except NumericalAbort as exc:
        p = run.path("diagnostics.csv")
        if p is not None:
            write_csv(p, CSV_HEADER, _records_rows(exc.records))
        run.manifest(sc, "numerical-abort", {"abort": str(exc), "step": exc.step}, sc.run.seed)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    recs = res.records
    p = run.path("diagnostics.csv")
    if p is not None:
        write_csv(p, CSV_HEADER, _records_rows(recs))
    results = {"final": dict(zip(CSV_HEADER, recs[-1].row())), "records": len(recs)}
    if twin:
        err0 = recs[0].err_sq
        results["final_error_ratio"] = recs[-1].err_sq / err0 if err0 > 0 else float("nan")
        results["window"] = _window_summary(sc)
        t = [r.t for r in recs]
        try:
            fit = fit_decay_rate(t, [r.err_sq for r in recs], burn_in=min(1.0, sc.run.T / 2))
            results["decay_fit"] = fit.__dict__
        except AnalysisError as exc:
            results["decay_fit"] = {"error": str(exc)}
        if sc.ledger is not None and err0 > 0:
            rep = envelope_audit(recs, sc.kappa, sc.ledger)
            results["envelope_audit"] = rep.__dict__
    run.manifest(sc, "ok", results, sc.run.seed)
    last = recs[-1]
    if twin:
        run.say(f"t = {last.t:g}: |X - xi|^2 = {last.err_sq:.6e} (ratio {results['final_error_ratio']:.3e})")
    else:
        run.say(f"t = {last.t:g}: |xi|^2 = {last.e_truth:.6e}")
    return EXIT_OK


def cmd_mc(args) -> int:
    run = _Run(args, "mc")
    sc = _scenario(args)
    paths = args.paths if args.paths is not None else sc.raw["mc"]["paths"]
    try:
        mc = run_monte_carlo(sc.run, paths, batch_size=sc.raw["mc"]["batch_size"])
    except NumericalAbort as exc:
        run.manifest(sc, "numerical-abort", {"abort": str(exc)}, sc.run.seed)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    p = run.path("mc_summary.csv")
    if p is not None:
        rows = zip(mc.t, mc.mean_err, mc.se_err, mc.mean_e4, mc.se_e4)
        write_csv(p, MC_HEADER, rows)
        rows = [(s,) + tuple(r) for s, tab in zip(mc.streams, mc.paths) for r in tab]
        write_csv(run.path("mc_paths.csv"), ("path",) + CSV_HEADER, rows)
    results = {
        "paths": paths,
        "excluded": [list(a) for a in mc.excluded],
        "zero_width_bands": mc.zero_width,
        "moment_constant": mc.moment_constant,
        "max_mean_energy_sq": float(np.max(mc.mean_e4)),
        "window": _window_summary(sc),
    }
    try:
        fit = fit_decay_rate(mc.t, mc.mean_err, burn_in=sc.raw["mc"]["burn_in"])
        results["decay_fit"] = fit.__dict__
    except AnalysisError as exc:
        results["decay_fit"] = {"error": str(exc)}
    run.manifest(sc, "ok", results, sc.run.seed)
    run.say(f"{mc.n_used}/{paths} paths; mean |X - xi|^2 at T = {mc.mean_err[-1]:.6e}")
    return EXIT_OK


def cmd_check(args) -> int:
    run = _Run(args, "check-params")
    sc = _scenario(args)
    led = sc.ledger
    if led is None:
        raise ConfigError("cda.interpolant", "check-params needs an interpolant")
    kappa = sc.kappa
    inside = led.check(kappa)
    label = "advisory" if led.advisory else "certified"
    run.say(f"window: ({led.kappa_min:.10g}, {led.kappa_max:.10g}]")
    run.say(f"mode: {led.mode}; verdict {label}")
    for k, v in led.provenance.items():
        run.say(f"  {k}: {v}")
    if not led.window_nonempty:
        run.say("window is empty")
    run.say(f"kappa = {kappa:.10g}: {'inside' if inside else 'OUTSIDE'} the window")
    p = run.path("ledger.json")
    if p is not None:
        p.write_text(json.dumps(_clean(led.to_dict()), indent=2, sort_keys=True) + "\n")
    status = "ok" if inside else "window-violation"
    run.manifest(sc, status, _window_summary(sc), sc.run.seed)
    return EXIT_OK if inside else EXIT_WINDOW


def cmd_estimate(args) -> int:
    run = _Run(args, "estimate-constants")
    sc = _scenario(args)
    led = sc.ledger
    if led is None:
        raise ConfigError("cda.interpolant", "estimate-constants needs an interpolant")
    run.say(f"Nd_hat = {led.Nd_hat:.6g} (used {led.Nd_used:.6g}); c0 = {led.c0_hat:.6g} ({led.provenance['c0']})")
    run.say(f"M = {led.M:.6g}; window ({led.kappa_min:.6g}, {led.kappa_max:.6g}]")
    p = run.path("ledger.json")
    if p is not None:
        p.write_text(json.dumps(_clean(led.to_dict()), indent=2, sort_keys=True) + "\n")
        if sc.certificate is not None:
            sc.certificate.to_json(run.path("c0_certificate.json"))
    run.manifest(sc, "ok", {"Nd_hat": sc.Nd_hat, "c0_hat": led.c0_hat}, sc.run.seed)
    return EXIT_OK


def cmd_verify(args) -> int:
    run = _Run(args, "verify-ops")
    seed = args.seed if args.seed is not None else 0
    results = operator_identity_suite(n=args.resolution, samples=args.samples, seed=seed)
    run.say(format_table(results))
    ok = all(r.passed for r in results if not r.informational)
    p = run.path("identities.csv")
    if p is not None:
        write_csv(p, ("identity", "max_residual", "tolerance", "status"),
                  [(r.name, r.max_residual, r.tolerance, "info" if r.informational else ("ok" if r.passed else "fail"))
                   for r in results])
    summary = {r.name: {"max_residual": r.max_residual, "passed": r.passed} for r in results}
    run.manifest(None, "ok" if ok else "identity-failure", summary, seed)
    return EXIT_OK if ok else EXIT_ABORT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "simulate":
            return cmd_simulate(args, twin=False)
        if args.command == "assimilate":
            return cmd_simulate(args, twin=True)
        if args.command == "mc":
            return cmd_mc(args)
        if args.command == "check-params":
            return cmd_check(args)
        if args.command == "estimate-constants":
            return cmd_estimate(args)
        return cmd_verify(args)
    except ConfigError as exc:
        print(f"error: config key {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
