"""Command-line front end.

Commands: ``estimate``, ``marginal-effects``, ``simulate``, ``replicate-table``
and ``weakid``.  Every command writes a ``manifest.json`` describing the run;
``estimate`` also embeds it (and its digest) in ``result.json``.

Exit codes: 0 success, 1 estimation failure, 2 input validation failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baseline import BaselineError, tsls_wald
from .cdfreg import CdfError
from .criterion import WeightSpec, default_e_grid, default_u_grid
from .estimator import EstimationConfig, EstimationError, average_marginal_effect, estimate
from .inference import InferenceError, linear_hypothesis_test
from .model import ModelError, ObservationSample, make_family
from .quantile import QuantileError, estimate_support
from .simulate import (DgpConfig, MonteCarloAbort, SimulationError, default_jobs, figure3_config,
                       run_monte_carlo, weak_id_config)

log = logging.getLogger("frdct")

EXIT_OK, EXIT_ESTIMATION, EXIT_VALIDATION = 0, 1, 2
REQUIRED_COLUMNS = ("y", "t", "r")


class ValidationError(ValueError):
    """Bad user input; maps to exit code 2."""


# -- manifest --------------------------------------------------------------
@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    code_version: str = __version__
    input_digest: Optional[str] = None
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, s: str) -> "RunManifest":
        return cls.from_dict(json.loads(s))

    def digest(self) -> str:
        """SHA-256 of the deterministic fields (timings excluded)."""
        d = self.to_dict()
        d.pop("timings")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# -- input -----------------------------------------------------------------
def read_sample_csv(path, cutoff: float) -> ObservationSample:
    """Read columns y, t, r (extra columns ignored) into a sample."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing required column(s) {', '.join(missing)} "
                                  f"(header: {', '.join(header)})")
        idx = {c: header.index(c) for c in REQUIRED_COLUMNS}
        cols = {c: [] for c in REQUIRED_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            for c, j in idx.items():
                if j >= len(row):
                    raise ValidationError(f"{path}: row {lineno} has no value for column {c}")
                try:
                    v = float(row[j])
                except ValueError:
                    raise ValidationError(f"{path}: row {lineno}, column {c}: cannot parse {row[j]!r}") from None
                if not math.isfinite(v):
                    raise ValidationError(f"{path}: row {lineno}, column {c}: non-finite value {row[j]!r}")
                cols[c].append(v)
    try:
        return ObservationSample(np.array(cols["y"]), np.array(cols["t"]), np.array(cols["r"]), cutoff)
    except ModelError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def load_config(path) -> dict:
    if path is None:
        return {}
    import tomli
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"config file {path}: {exc}") from exc


def _merge(args: argparse.Namespace, section: dict, defaults: dict) -> dict:
    """Flags override the config section, which overrides the defaults."""
    unknown = set(section) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else section.get(key, default)
    return out


_WEIGHTS = {
    "normal": lambda e: np.exp(-0.5 * np.asarray(e, float) ** 2) / np.sqrt(2 * np.pi),
    "uniform": lambda e: np.ones_like(np.asarray(e, float)),
}

ESTIMATE_DEFAULTS = {
    "cutoff": None, "model": "quadratic", "tnorm": None, "intercept": 0.0,
    "bandwidth_scale": 2.0, "bandwidth_exponent": 0.2, "weights": "normal",
    "e_grid": 41, "u_grid": 101, "restarts": 20, "seed": 0, "infer": False,
    "me_grid": None,
}


def _estimation_config(opts: dict) -> EstimationConfig:
    if opts["weights"] not in _WEIGHTS:
        raise ValidationError(f"unknown weights {opts['weights']!r}; choose from {sorted(_WEIGHTS)}")
    if int(opts["e_grid"]) < 2 or int(opts["u_grid"]) < 2:
        raise ValidationError("grids need at least 2 points")
    w = WeightSpec(e_weight=_WEIGHTS[opts["weights"]], e_grid=default_e_grid(int(opts["e_grid"])),
                   u_grid=default_u_grid(int(opts["u_grid"])))
    try:
        return EstimationConfig(bandwidth_constant=float(opts["bandwidth_scale"]),
                                bandwidth_exponent=float(opts["bandwidth_exponent"]), weights=w,
                                restarts=int(opts["restarts"]), seed=int(opts["seed"]),
                                covariance=bool(opts["infer"]))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _floats(s) -> Optional[list]:
    if s is None:
        return None
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    try:
        return [float(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse number list {s!r}") from None


# -- commands --------------------------------------------------------------
def cmd_estimate(args, marginal_only: bool = False) -> int:
    opts = _merge(args, load_config(args.config).get("estimate", {}), ESTIMATE_DEFAULTS)
    if opts["cutoff"] is None:
        raise ValidationError("--cutoff is required (flag or [estimate] cutoff in the config file)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    sample = read_sample_csv(args.csv, float(opts["cutoff"]))
    config = _estimation_config(opts)
    if opts["tnorm"] is None:
        # default normalization point: midpoint of the estimated support overlap
        ov = estimate_support(sample, config.bandwidths(sample.n)[2]).overlap
        opts["tnorm"] = 0.5 * (ov[0] + ov[1])
    try:
        family = make_family(opts["model"], float(opts["tnorm"]), float(opts["intercept"]))
    except ModelError as exc:
        raise ValidationError(str(exc)) from exc
    me_grid = _floats(opts["me_grid"])
    res = estimate(sample, family, config)
    diagnostics = dict(res.diagnostics)
    seconds = diagnostics.pop("seconds")
    payload = {"gamma_hat": res.gamma_hat.tolist(), "criterion": res.criterion_at_min,
               "bandwidths": list(res.bandwidths), "n": res.n, "family": family.describe(),
               "support": {"below": list(res.support.below), "above": list(res.support.above)},
               "diagnostics": diagnostics}
    if res.covariance is not None:
        se = res.standard_errors()
        tests = []
        for j in range(len(res.gamma_hat)):
            H = np.eye(len(res.gamma_hat))[j:j + 1]
            stat, dof, p = linear_hypothesis_test(res, H, [0.0])
            tests.append({"hypothesis": f"gamma{j + 1} = 0", "stat": stat, "dof": dof, "p_value": p})
        payload["inference"] = {"vcov": res.covariance.tolist(), "standard_errors": se.tolist(),
                                "tests": tests, "diagnostics": res.inference.diagnostics}
    written = []
    u = res.problem.weights.u_grid
    _write_csv(out / "curves.csv", ["u", "h0", "h1"],
               zip(u, res.curves[0](u), res.curves[1](u)))
    written.append("curves.csv")
    if me_grid is not None or marginal_only:
        tg = me_grid if me_grid is not None else np.quantile(sample.t, np.linspace(0.1, 0.9, 9)).tolist()
        lo, hi = res.support.union()
        bad = [v for v in tg if not lo <= v <= hi]
        if bad:
            raise ValidationError(f"marginal-effect grid points {bad} outside the estimated support [{lo:.4g}, {hi:.4g}]")
        ame = average_marginal_effect(res, family, tg)
        try:
            wald = tsls_wald(sample, res.bandwidths[0]).value
        except BaselineError:
            wald = float("nan")
        _write_csv(out / "marginal_effects.csv", ["t", "semiparametric", "tsls"],
                   [(t, a, wald) for t, a in zip(tg, ame)])
        written.append("marginal_effects.csv")
    written.append("result.json")
    manifest = RunManifest("marginal-effects" if marginal_only else "estimate",
                           {k: v for k, v in opts.items()} | {"estimation": config.describe()},
                           int(opts["seed"]), input_digest=_file_digest(Path(args.csv)),
                           timings={"estimate_seconds": seconds, "total_seconds": time.perf_counter() - t_start},
                           outputs=written)
    payload["manifest"] = manifest.to_dict()
    payload["manifest_digest"] = manifest.digest()
    _write_json(out / "result.json", payload)
    _write_json(out / "manifest.json", manifest.to_dict())
    print(json.dumps({"gamma_hat": payload["gamma_hat"], "criterion": payload["criterion"],
                      "weak_identification": diagnostics["weak_identification"]}))
    return EXIT_OK


SIM_DEFAULTS = {"dgp": "base", "n": 1000, "reps": 100, "rho_u": 0.3, "rho_r": 0.3,
                "r_marginal": "uniform01", "seed": 0, "jobs": None,
                "bandwidth_scale": 2.0, "bandwidth_exponent": 0.2}


def _dgp(name: str, n: int, seed: int, rho_u: float, rho_r: float, r_marginal: str) -> DgpConfig:
    try:
        if name == "base":
            return DgpConfig(n=n, seed=seed, rho_u=rho_u, rho_r=rho_r, r_marginal=r_marginal)
        if name == "weakid":
            return weak_id_config(n, seed, rho_u=rho_u, rho_r=rho_r, r_marginal=r_marginal)
        if name == "figure3":
            return figure3_config(n, seed, rho_u=rho_u, rho_r=rho_r, r_marginal=r_marginal)
    except SimulationError as exc:
        raise ValidationError(f"invalid cell: {exc}") from exc
    raise ValidationError(f"unknown dgp {name!r}; choose base, weakid or figure3")


def _mc_config(opts) -> EstimationConfig:
    return EstimationConfig(bandwidth_constant=float(opts["bandwidth_scale"]),
                            bandwidth_exponent=float(opts["bandwidth_exponent"]))


def _check_reps(reps: int) -> None:
    if reps < 10:
        raise ValidationError("--reps must be at least 10")


def _run_cells(cells, opts, estimators=("semiparametric", "tsls"), me_quantiles=None):
    jobs = int(opts["jobs"]) if opts["jobs"] is not None else default_jobs()
    est_config = _mc_config(opts)
    reports = []
    for cfg in cells:
        reports.append(run_monte_carlo(cfg, int(opts["reps"]), estimators, jobs, est_config,
                                       me_quantiles=me_quantiles))
    return reports


def _emit_reports(out: Path, command: str, opts: dict, reports, started: float, extra_outputs=()) -> None:
    header = ["r_marginal", "rho_u", "rho_r", "n"] + reports[0].table_header()
    rows = [_cell_label_from(r) + r.table_row() for r in reports]
    _write_csv(out / "table.csv", header, rows)
    body = {"cells": [r.to_dict() for r in reports]}
    for c in body["cells"]:
        c.pop("wall_time")
    _write_json(out / "report.json", body)
    manifest = RunManifest(command, dict(opts), int(opts["seed"]),
                           timings={"total_seconds": time.perf_counter() - started,
                                    "cells": [r.wall_time for r in reports]},
                           outputs=["table.csv", "report.json", *extra_outputs, "manifest.json"])
    _write_json(out / "manifest.json", manifest.to_dict())


def _cell_label_from(report) -> list:
    d = report.config["dgp"]
    return [d["r_marginal"], d["rho_u"], d["rho_r"], d["n"]]


def cmd_simulate(args) -> int:
    opts = _merge(args, load_config(args.config).get("simulate", {}), SIM_DEFAULTS)
    _check_reps(int(opts["reps"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    cfg = _dgp(opts["dgp"], int(opts["n"]), int(opts["seed"]), float(opts["rho_u"]), float(opts["rho_r"]),
               opts["r_marginal"])
    reports = _run_cells([cfg], opts)
    _emit_reports(out, "simulate", opts, reports, started)
    print(json.dumps({"bias": reports[0].bias.tolist(), "sd": reports[0].sd.tolist(),
                      "failures": reports[0].failures}))
    return EXIT_OK


TABLE_DEFAULTS = {"n": [1000], "reps": 100, "rho_u": [0.3], "rho_r": [0.3], "r_marginal": ["uniform01"],
                  "seed": 0, "jobs": None, "bandwidth_scale": 2.0, "bandwidth_exponent": 0.2}


def cmd_replicate_table(args) -> int:
    opts = _merge(args, load_config(args.config).get("replicate-table", {}), TABLE_DEFAULTS)
    _check_reps(int(opts["reps"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    cells = [_dgp("base", int(n), int(opts["seed"]), float(ru), float(rr), rm)
             for rm in opts["r_marginal"] for ru in opts["rho_u"] for rr in opts["rho_r"] for n in opts["n"]]
    reports = _run_cells(cells, opts, estimators=("semiparametric",))
    _emit_reports(out, "replicate-table", opts, reports, started)
    print(f"wrote {len(reports)} row(s) to {out / 'table.csv'}")
    return EXIT_OK


WEAKID_DEFAULTS = {"n": 1000, "reps": 100, "rho_u": 0.3, "rho_r": 0.3, "r_marginal": "uniform01",
                   "seed": 0, "jobs": None, "bandwidth_scale": 2.0, "bandwidth_exponent": 0.2}


def cmd_weakid(args) -> int:
    opts = _merge(args, load_config(args.config).get("weakid", {}), WEAKID_DEFAULTS)
    _check_reps(int(opts["reps"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    cfg = _dgp("weakid", int(opts["n"]), int(opts["seed"]), float(opts["rho_u"]), float(opts["rho_r"]),
               opts["r_marginal"])
    rep = _run_cells([cfg], opts)[0]
    # estimates are stored for successful replications only, in index order
    ok = iter(rep.estimates[:, 0])
    rows = [[o["index"], o["seed"], float("nan") if "error" in o else float(next(ok)),
             o.get("tsls", float("nan"))] for o in rep.extras]
    _write_csv(out / "weakid_estimates.csv", ["rep", "seed", "semiparametric", "tsls"], rows)
    _emit_reports(out, "weakid", opts, [rep], started, extra_outputs=["weakid_estimates.csv"])
    sp = np.array([r[2] for r in rows], float)
    ts = np.array([r[3] for r in rows], float)
    print(json.dumps({"rmse_semiparametric": float(np.sqrt(np.nanmean((sp - 1) ** 2))),
                      "rmse_tsls": float(np.sqrt(np.nanmean((ts - 1) ** 2))),
                      "tsls_failures": rep.tsls_failures}))
    return EXIT_OK


# -- parser ----------------------------------------------------------------
def _add_common(p, with_jobs: bool = True) -> None:
    p.add_argument("--config", help="TOML file; its section for this command mirrors the flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="frdct_out", help="output directory")
    p.add_argument("--bandwidth-scale", dest="bandwidth_scale", type=float,
                   help="constant c in b = c * n^(-exponent)")
    p.add_argument("--bandwidth-exponent", dest="bandwidth_exponent", type=float)
    if with_jobs:
        p.add_argument("--jobs", type=int, help="worker processes (default: $FRDCT_JOBS or 1)")
        p.add_argument("--reps", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frdct", description="Fuzzy RD with a continuous treatment")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, helptext in (("estimate", "estimate the structural parameters from a CSV"),
                           ("marginal-effects", "estimate and write marginal effects on a treatment grid")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("csv", help="CSV with header columns y,t,r")
        p.add_argument("--cutoff", type=float)
        p.add_argument("--model", choices=["quadratic", "shifted_quadratic", "linear"])
        p.add_argument("--tnorm", type=float, help="normalization point (default: midpoint of the support overlap)")
        p.add_argument("--intercept", type=float, help="intercept of the shifted families")
        p.add_argument("--weights", choices=sorted(_WEIGHTS), help="weight on the error grid")
        p.add_argument("--e-grid", dest="e_grid", type=int, help="number of error-grid points")
        p.add_argument("--u-grid", dest="u_grid", type=int, help="number of rank-grid points")
        p.add_argument("--restarts", type=int)
        p.add_argument("--infer", action="store_const", const=True, help="estimate the covariance")
        p.add_argument("--me-grid", dest="me_grid", help="comma-separated treatment levels for marginal effects")
        _add_common(p, with_jobs=False)

    p = sub.add_parser("simulate", help="Monte Carlo for one design cell")
    p.add_argument("--dgp", choices=["base", "weakid", "figure3"])
    p.add_argument("--n", type=int)
    p.add_argument("--rho-u", dest="rho_u", type=float)
    p.add_argument("--rho-r", dest="rho_r", type=float)
    p.add_argument("--r-marginal", dest="r_marginal", choices=["uniform01", "standard_normal"])
    _add_common(p)

    p = sub.add_parser("replicate-table", help="bias/sd/mse table over design cells")
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--rho-u", dest="rho_u", type=float, nargs="+")
    p.add_argument("--rho-r", dest="rho_r", type=float, nargs="+")
    p.add_argument("--r-marginal", dest="r_marginal", nargs="+", choices=["uniform01", "standard_normal"])
    _add_common(p)

    p = sub.add_parser("weakid", help="semiparametric vs Wald ratio under weak identification")
    p.add_argument("--n", type=int)
    p.add_argument("--rho-u", dest="rho_u", type=float)
    p.add_argument("--rho-r", dest="rho_r", type=float)
    p.add_argument("--r-marginal", dest="r_marginal", choices=["uniform01", "standard_normal"])
    _add_common(p)
    return ap


_COMMANDS = {
    "estimate": cmd_estimate,
    "marginal-effects": lambda a: cmd_estimate(a, marginal_only=True),
    "simulate": cmd_simulate,
    "replicate-table": cmd_replicate_table,
    "weakid": cmd_weakid,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ModelError) as exc:
        print(f"frdct: input error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MonteCarloAbort as exc:
        print(f"frdct: simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (EstimationError, CdfError, QuantileError, InferenceError, SimulationError) as exc:
        print(f"frdct: estimation failed ({type(exc).__module__.split('.')[-1]}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
