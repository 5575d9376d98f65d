"""Config-driven experiment runner.

    plgs run CONFIG.json [--out DIR] [--threads K] [--seed S]

Exit status: 0 when every enabled check passes, 2 when a check fails or the
numerics give up (reports are still written), 1 on configuration or I/O
errors.  The output directory defaults to ``$PLGS_OUTPUT_ROOT/<config
stem>`` (or ``./runs/<config stem>`` when the variable is unset).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import subprocess
import sys
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import asymptotics as asy
from .calculus import sample_radial
from .exceptions import ConfigError, DomainError, PlgsError
from .gn import random_field_inequality_test, sharp_constant_check, write_reports_csv
from .io import emit_plot, write_csv, write_field_csv, write_json_atomic
from .limit_solver import ShootingOpts, find_Q, pohozaev_residuals
from .minimizer import FlowOpts, el_residual, minimize, rayleigh_multiplier
from .model import CartesianGrid2D, PotentialSpec, RadialGrid, make_params

logger = logging.getLogger("plgs")

ENV_OUTPUT_ROOT = "PLGS_OUTPUT_ROOT"
COMMANDS = ("limit-solve", "gn-check", "minimize", "sweep", "verify-asymptotics")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command", "params"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "required": ["p", "n"],
            "properties": {
                "p": _num,
                "n": {"type": "integer"},
                "a": _num,
                "a-over-a-star": _num,
                "relaxed": {"type": "boolean"},
            },
        },
        "potential": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["zero", "radial_power", "multi_well"]},
                "q": _pos,
                "h": _pos,
                "wells": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["x", "q"],
                        "properties": {"x": {"type": "array", "items": _num}, "q": _pos},
                    },
                },
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["radial", "cartesian"]},
                "r-max": _pos,
                "h": _pos,
                "half-width": _pos,
                "nodes": {"type": "integer", "minimum": 3},
                "center": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt0": _pos,
                "dt-min": _pos,
                "max-iters": {"type": "integer", "minimum": 1},
                "tol-energy": _pos,
                "tol-residual": _pos,
                "divergence-floor": _num,
                "eps-reg": _pos,
                "newton": {"type": "boolean"},
                "shooting-h": _pos,
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gap-min": _pos,
                "gap-max": _pos,
                "per-decade": {"type": "integer", "minimum": 1},
                "a-over-a-star": {"type": "array", "items": _num, "minItems": 1},
                "continuation": {"type": "boolean"},
                "divergence-probe": {"type": "array", "items": _num},
            },
        },
        "gn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "tol": _pos,
                "tol-extremal": _pos,
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "refinement": {"type": "boolean"},
                "laws": {"type": "boolean"},
                "tol-pohozaev": _pos,
            },
        },
        "output": {"type": "string"},
        "seed": {"type": "integer"},
    },
}


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    prm = cfg["params"]
    if "a" in prm and "a-over-a-star" in prm:
        raise ConfigError("params: give either 'a' or 'a-over-a-star', not both")
    if cfg["command"] in ("minimize", "sweep", "verify-asymptotics") and "potential" not in cfg:
        raise ConfigError(f"command {cfg['command']!r} needs a 'potential' block")
    if cfg["command"] in ("minimize", "sweep", "verify-asymptotics") and "grid" not in cfg:
        raise ConfigError(f"command {cfg['command']!r} needs a 'grid' block")
    if cfg["command"] == "minimize" and not ({"a", "a-over-a-star"} & set(prm)):
        raise ConfigError("command 'minimize' needs params 'a' or 'a-over-a-star'")


def _grid(block: dict, n: int):
    if block["kind"] == "radial":
        if "r-max" not in block or "h" not in block:
            raise ConfigError("radial grid needs 'r-max' and 'h'")
        return RadialGrid.with_spacing(block["r-max"], block["h"], n)
    if "half-width" not in block or "nodes" not in block:
        raise ConfigError("cartesian grid needs 'half-width' and 'nodes'")
    if n != 2:
        raise ConfigError("cartesian grids are planar; n must be 2")
    return CartesianGrid2D(block["half-width"], block["nodes"], tuple(block.get("center", (0.0, 0.0))))


def _flow_opts(block: dict) -> FlowOpts:
    names = {"dt0": "dt0", "dt-min": "dt_min", "max-iters": "max_iters", "tol-energy": "tol_energy",
             "tol-residual": "tol_residual", "divergence-floor": "divergence_floor",
             "eps-reg": "eps_reg", "newton": "newton"}
    return FlowOpts(**{names[k]: v for k, v in block.items() if k in names})


def _version() -> str:
    try:
        v = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        v = "unknown"
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            v += "+" + rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return v


class Run:
    """State for one execution: output paths, timings, scalars and checks."""

    def __init__(self, cfg: dict, out: Path, threads: int, seed: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.seed = seed
        self.timings = {}
        self.scalars = {}
        self.checks = {}
        self.files = []
        self.enabled = cfg.get("checks", {}).get("enabled", True)

    def stage(self, name, fn, *args, **kw):
        t = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[name] = time.perf_counter() - t

    def check(self, name: str, passed: bool, value=None, target=None, tol=None):
        self.checks[name] = {"passed": bool(passed), "value": value, "target": target, "tolerance": tol}

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def plot(self, name: str, series, **kw):
        if not any(len(xy[0]) for xy in series.values()):
            logger.warning("plot %s skipped: nothing to draw", name)
            return
        self.path(f"plots/{name}.svg").write_text(emit_plot(series, **kw), encoding="utf-8", newline="\n")

    @property
    def ok(self) -> bool:
        return (not self.enabled) or all(c["passed"] for c in self.checks.values())


def _limit(run: Run, params):
    h = run.cfg.get("solver", {}).get("shooting-h", ShootingOpts().h)
    Q = run.stage("limit-solve", find_Q, params, ShootingOpts(h=h))
    res = pohozaev_residuals(Q)
    run.scalars.update({
        "alpha": Q.alpha, "a_star": Q.a_star, "I_grad": Q.I_grad, "I_p": Q.I_p, "I_s": Q.I_s,
        "decay_rate": Q.delta, "pohozaev_residual_s": res[0], "pohozaev_residual_grad": res[1],
    })
    return Q, res


def cmd_limit_solve(run: Run):
    prm = run.cfg["params"]
    params = make_params(prm["p"], prm["n"], 0.0, relaxed=prm.get("relaxed", False))
    Q, res = _limit(run, params)
    chk = run.cfg.get("checks", {})
    tol = chk.get("tol-pohozaev", ShootingOpts().tol_poho)
    run.check("pohozaev", max(abs(r) for r in res) <= tol, max(abs(r) for r in res), 0.0, tol)
    if chk.get("refinement", True):
        h = run.cfg.get("solver", {}).get("shooting-h", ShootingOpts().h)
        Qf = run.stage("limit-solve-refined", find_Q, params, ShootingOpts(h=h / 2))
        rf = pohozaev_residuals(Qf)
        run.scalars.update({"pohozaev_residual_s_refined": rf[0], "pohozaev_residual_grad_refined": rf[1]})
        shrink = all(abs(b) < abs(a) for a, b in zip(res, rf))
        run.check("pohozaev_refinement", shrink, max(abs(r) for r in rf), None, None)
    if not params.relaxed:
        rep = sharp_constant_check(Q)
        run.scalars.update({"gn_sharp_bound": rep.sharp_bound, "gn_quotient_Q": rep.quotient})
        run.check("gn_extremal", rep.passed, rep.quotient, rep.sharp_bound, 1e-3)
    if "gn" in run.cfg and not params.relaxed:
        _gn_random(run, params, Q)
    write_field_csv(run.path("Q.csv"), Q.profile, "Q")
    r = Q.profile.grid.nodes
    keep = r <= min(r[-1], 20.0)
    run.plot("Q", {"Q": (r[keep], Q.profile.values[keep])}, title="ground state", xlabel="r", ylabel="Q")


def cmd_gn_check(run: Run):
    prm = run.cfg["params"]
    params = make_params(prm["p"], prm["n"])
    Q, _ = _limit(run, params)
    g = run.cfg.get("gn", {})
    rep = sharp_constant_check(Q, tol=g.get("tol-extremal", 1e-3))
    run.check("gn_extremal", rep.passed, rep.quotient, rep.sharp_bound, g.get("tol-extremal", 1e-3))
    run.scalars.update({"gn_sharp_bound": rep.sharp_bound, "gn_quotient_Q": rep.quotient})
    _gn_random(run, params, Q)


def _gn_random(run: Run, params, Q):
    g = run.cfg.get("gn", {})
    tol = g.get("tol", 5e-3)
    reports = run.stage("gn-random", random_field_inequality_test, run.seed, g.get("count", 1000), params,
                        Q.a_star, tol=tol, threads=run.threads)
    write_reports_csv(reports, run.path("gn_report.csv"))
    worst = max(r.quotient / r.sharp_bound for r in reports)
    viol = sum(not r.passed for r in reports)
    run.scalars.update({"gn_max_ratio": worst, "gn_violations": viol, "gn_count": len(reports)})
    run.check("gn_random", viol == 0, worst, 1.0, tol)
    ratios = [r.quotient / r.sharp_bound for r in reports]
    run.plot("gn_quotients", {"quotient / bound": (list(range(len(ratios))), ratios)},
             markers=("quotient / bound",), title="GN quotients", xlabel="field", ylabel="ratio")


def _a_value(prm: dict, a_star: float) -> float:
    if "a-over-a-star" in prm:
        return prm["a-over-a-star"] * a_star
    return prm.get("a", 0.0)


def cmd_minimize(run: Run):
    cfg = run.cfg
    prm = cfg["params"]
    base = make_params(prm["p"], prm["n"])
    Q, _ = _limit(run, base)
    a = _a_value(prm, Q.a_star)
    params = base.with_a(a)
    V = PotentialSpec.from_dict(cfg["potential"])
    grid = _grid(cfg["grid"], params.n)
    opts = _flow_opts(cfg.get("solver", {}))
    res = run.stage("minimize", minimize, params, V, grid, opts, raise_on_failure=False)
    run.scalars.update({
        "a": a, "e_a": res.e_a, "mu_a": res.mu_a, "eps_a": res.eps_a, "z_bar": res.z_bar,
        "residual": res.residual, "iters": res.iters, "newton_iters": res.newton_iters,
        "diverged": res.diverged, "converged": res.converged, "grid_h": grid.h,
    })
    write_field_csv(run.path("u_a.csv"), res.u_a, "u")
    if a > Q.a_star:
        run.check("divergence_flagged", res.diverged, res.e_a, opts.divergence_floor, None)
    elif a < Q.a_star:
        run.check("converged", res.converged, res.residual, 0.0, opts.tol_residual)
        if res.converged:
            lb = (1 - a / Q.a_star) * res.grad_integral
            run.check("lower_bound", res.e_a >= lb - 1e-9 * max(1.0, abs(res.e_a)), res.e_a, lb, 1e-9)
            mr = rayleigh_multiplier(res)
            run.scalars["mu_a_rayleigh"] = mr
            run.scalars["el_residual"] = el_residual(res)
            run.check("multiplier_routes", abs(mr - res.mu_a) <= 10 * opts.tol_residual * max(1.0, abs(res.mu_a)),
                      mr, res.mu_a, 10 * opts.tol_residual)
    if res.u_a.is_radial:
        run.plot("u_a", {"u_a": (grid.nodes, res.u_a.values)}, title="minimiser", xlabel="r", ylabel="u")
    else:
        x, _ = grid.axes()
        mid = int(np.argmin(np.abs(grid.axes()[1] - res.z_bar[1])))
        run.plot("u_a", {"u_a(x, y=z_y)": (x, res.u_a.values[:, mid])}, title="minimiser slice",
                 xlabel="x", ylabel="u")


def _schedule(cfg: dict, a_star: float) -> list:
    sch = cfg.get("schedule", {})
    if "a-over-a-star" in sch:
        return sorted(f * a_star for f in sch["a-over-a-star"])
    return asy.gap_schedule(a_star, sch.get("gap-min", 1e-3), sch.get("gap-max", 1e-1), sch.get("per-decade", 10))


def _sweep(run: Run):
    cfg = run.cfg
    prm = cfg["params"]
    params = make_params(prm["p"], prm["n"])
    Q, _ = _limit(run, params)
    V = PotentialSpec.from_dict(cfg["potential"])
    grid = _grid(cfg["grid"], params.n)
    opts = _flow_opts(cfg.get("solver", {}))
    a_values = _schedule(cfg, Q.a_star)
    cont = cfg.get("schedule", {}).get("continuation", True)
    recs = run.stage("sweep", asy.sweep, params, V, a_values, grid, opts, Q=Q, continuation=cont,
                     threads=run.threads)
    rows = []
    for r in recs:
        z = np.zeros(2)
        z[: min(2, len(r.z_bar))] = np.asarray(r.z_bar, dtype=float)[:2]
        rows.append((r.a, r.gap, r.e_a, r.eps_a, r.mu_a, z[0], z[1], r.profile_distance, r.resolved))
    write_csv(run.path("sweep.csv"),
              ["a", "gap", "e_a", "eps_a", "mu_a", "zbar_x", "zbar_y", "profile_distance", "resolved"], rows)
    run.scalars["grid_h"] = grid.h
    run.scalars["sweep_points"] = len(recs)
    run.scalars["sweep_usable"] = sum(r.usable for r in recs)
    run.scalars["sweep_failures"] = [{"a": r.a, "error": r.error} for r in recs if r.error]
    usable = [r for r in recs if r.usable]
    e = [r.e_a for r in usable]
    eps = [r.eps_a for r in usable]
    run.check("energy_positive", all(x > 0 for x in e), min(e) if e else None, 0.0, None)
    run.check("energy_decreasing", all(b < a for a, b in zip(e, e[1:])), None, None, None)
    run.check("eps_decreasing", all(b < a for a, b in zip(eps, eps[1:])), None, None, None)
    run.check("no_failures", not run.scalars["sweep_failures"], len(run.scalars["sweep_failures"]), 0, None)
    probes = cfg.get("schedule", {}).get("divergence-probe", [])
    for k, f in enumerate(probes):
        if not f > 1:
            raise ConfigError("schedule/divergence-probe: entries must exceed 1 (a above a*)")
        res = run.stage(f"divergence-probe-{k}", minimize, params.with_a(f * Q.a_star), V, grid, opts,
                        raise_on_failure=False)
        run.scalars[f"probe_{k}"] = {"a_over_a_star": f, "e_a": res.e_a, "iters": res.iters,
                                     "diverged": res.diverged}
        run.check(f"divergence_probe_{k}", res.diverged, res.e_a, opts.divergence_floor, None)
    gaps = [r.gap for r in usable]
    run.plot("sweep_energy", {"e(a)": (gaps, e)}, loglog=True, markers=("e(a)",),
             title="energy along the sweep", xlabel="a* - a", ylabel="e(a)")
    return params, Q, V, grid, recs


def cmd_sweep(run: Run):
    _sweep(run)


def cmd_verify(run: Run):
    params, Q, V, grid, recs = _sweep(run)
    lam = asy.lambda_of(Q, V)
    run.scalars.update({"lambda": lam.lam, "lambda_list": list(lam.lambda_list), "Z": list(lam.Z),
                        "q": lam.q, "moment": lam.moment})
    if V.kind == "multi_well":
        _site(run, recs, lam, V, grid)
    if not run.cfg.get("checks", {}).get("laws", True):
        return
    checks = run.stage("checks", asy.asymptotic_checks, recs, Q, lam, params, V, grid)
    fits = checks.pop("_fits")
    rows = []
    for obs, (f, expo, pref) in fits.items():
        rows.append((obs, f.exponent, expo, f.prefactor, pref, f.r_squared, f.window[0], f.window[1]))
    write_csv(run.path("fits.csv"), ["observable", "exponent", "exponent_predicted", "prefactor",
                                     "prefactor_predicted", "r_squared", "window_lo", "window_hi"], rows)
    for name, c in checks.items():
        run.check(name, c["passed"], c["value"], c["target"], None)
    run.scalars["tolerances"] = asy.TOLERANCES
    usable = [r for r in recs if r.usable]
    gaps = np.array([r.gap for r in usable])
    for obs, key in (("energy", "e_a"), ("epsilon", "eps_a")):
        f, expo, pref = fits[obs]
        data = [getattr(r, key) for r in usable]
        run.plot(f"fit_{obs}", {"data": (gaps, data), "fit": (gaps, f.prefactor * gaps**f.exponent),
                                "predicted law": (gaps, pref * gaps**expo)},
                 loglog=True, markers=("data",), title=f"{obs} vs gap", xlabel="a* - a", ylabel=obs)


def _site(run: Run, recs, lam, V, grid):
    try:
        site = asy.site_selection(recs, lam, V, grid.h)
    except PlgsError as exc:
        run.check("site_selection", False, str(exc), None, None)
        return
    run.scalars.update({"site_point": site.point, "site_well": site.well, "site_distance": site.distance,
                        "site_distance_over_h": site.distance / grid.h, "site_tie": site.tie})
    run.check("site_selection", site.within, site.distance, 0.0, 2 * grid.h)
    usable = [r for r in recs if r.usable]
    well = V.centers[site.well]
    dist = [float(np.linalg.norm(np.asarray(r.z_bar) - well)) / grid.h for r in usable]
    run.plot("site_distance", {"|z_bar - x_i| / h": ([r.gap for r in usable], dist)},
             markers=("|z_bar - x_i| / h",), title=f"peak distance to well {site.well}",
             xlabel="a* - a", ylabel="grid spacings")
    if len(lam.Z) > 1:
        run.check("site_tie_recorded", site.tie, site.tie, True, None)


HANDLERS = {
    "limit-solve": cmd_limit_solve,
    "gn-check": cmd_gn_check,
    "minimize": cmd_minimize,
    "sweep": cmd_sweep,
    "verify-asymptotics": cmd_verify,
}


def output_dir(config_path, cfg: dict, out: str | None) -> Path:
    if out:
        return Path(out)
    if cfg.get("output"):
        return Path(cfg["output"])
    root = os.environ.get(ENV_OUTPUT_ROOT) or "runs"
    return Path(root) / Path(config_path).stem


def run(config_path, out: str | None = None, threads: int = 1, seed: int | None = None) -> int:
    """Execute one config; returns the process exit status."""
    try:
        cfg = load_config(config_path)
        out_dir = output_dir(config_path, cfg, out)
        out_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if seed is None:
        seed = cfg.get("seed", 0)
    state = Run(cfg, out_dir, max(1, threads), seed)
    status = 0
    failure = None
    try:
        HANDLERS[cfg["command"]](state)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PlgsError as exc:
        failure = f"{type(exc).__name__}: {exc}"
        print(f"failed: {failure}", file=sys.stderr)
        status = 2
    if status == 0 and not state.ok:
        status = 2
        bad = [k for k, c in state.checks.items() if not c["passed"]]
        print(f"checks failed: {', '.join(bad)}", file=sys.stderr)
    manifest = {
        "config": cfg,
        "version": _version(),
        "platform": platform.platform(),
        "seed": seed,
        "threads": state.threads,
        "scalars": state.scalars,
        "checks": state.checks,
        "timings_seconds": state.timings,
        "files": sorted(set(state.files)),
        "failure": failure,
        "exit_status": status,
    }
    try:
        write_json_atomic(out_dir / "manifest.json", manifest)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return 1
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plgs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="action", required=True)
    p_run = sub.add_parser("run", help="execute a run configuration")
    p_run.add_argument("config", help="path to the JSON run configuration")
    p_run.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT_ROOT}/<config stem>)")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads for independent work")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
