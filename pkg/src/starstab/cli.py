"""Command-line driver: ``starstab <subcommand> [--config FILE] [--out DIR] [--seed N]``.

Every subcommand reads one JSON config (a bundled default when ``--config``
is omitted), writes JSON/CSV artifacts into its output directory and a
``manifest.json`` with content hashes.  Exit codes: 0 ok, 2 config error,
3 invariant violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
import traceback
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .eos import build_enthalpy, check_law, fenchel_check, law_from_config
from .errors import (ConfigError, IndeterminateError, InvariantError, NumericalError, StarstabError)
from .family import classify, i_mu, sweep
from .functionals import (NodeLayout, decomposition_check, distance, duality_gap, random_state)
from .hydro import HydroConfig, Perturbation, energy_tolerance, run, stability_experiment
from .spectral import converged_inertia, kernel_study, spectrum_L_Z, spectrum_tildeL
from .star import SolverOptions, solve_star

SUBCOMMANDS = ("eos", "star", "family", "classify", "spectrum", "distance", "evolve", "experiment", "verify")
EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ENV = "STARSTAB_OUTPUT"


def bundled_config(name: str) -> Path:
    return Path(resources.files("starstab") / "configs" / f"{name}.json")


def _require(cfg, key, where=""):
    if key not in cfg:
        raise ConfigError(f"{where}{key}: missing required field")
    return cfg[key]


def _number(cfg, key, default=None, where=""):
    val = cfg.get(key, default) if default is not None else _require(cfg, key, where)
    try:
        return float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key}: expected a number, got {val!r}") from None


def _law(cfg, base):
    law = law_from_config(_require(cfg, "eos"), base)
    return law, build_enthalpy(law, cfg.get("tabulation"))


def _solver(cfg):
    return SolverOptions.from_dict(cfg.get("solver"))


class Context:
    """Output directory bookkeeping for one run."""

    def __init__(self, outdir: Path, cfg: dict, base: Path, seed: int):
        self.out = outdir
        self.cfg = cfg
        self.base = base
        self.seed = seed
        self.files = []
        outdir.mkdir(parents=True, exist_ok=True)

    def json(self, name, obj):
        self.files.append(io.write_json(self.out / name, obj))

    def csv(self, name, kind, cols):
        self.files.append(io.write_csv(self.out / name, kind, cols))


# ---------------------------------------------------------------------------
# subcommands


def cmd_eos(ctx):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    grid = cfg.get("rho", {"min": 1e-6, "max": 1e4, "n": 101})
    if isinstance(grid, dict):
        rho = np.geomspace(_number(grid, "min", where="rho."), _number(grid, "max", where="rho."),
                           int(grid.get("n", 101)))
    else:
        rho = np.asarray(grid, dtype=float)
    ctx.csv("eos.csv", "eos", {"rho": rho, "P": law.P(rho), "dP": law.dP(rho), "Phi": h.phi(rho),
                               "dPhi": h.dphi(rho), "d2Phi": h.d2phi(rho)})
    problems = check_law(law)
    n_f = int(cfg.get("fenchel_samples", 0))
    rep = {"label": law.label, "exponents": law.exponents, "provenance": h.provenance,
           "problems": problems}
    if n_f:
        rep["fenchel_max_violation"] = max(fenchel_check(rb, n_f, h, ctx.seed) for rb in (1e-2, 1.0, 1e2))
    ctx.json("eos.json", rep)
    if problems:
        raise InvariantError("pressure law fails admissibility checks: " + "; ".join(problems))


def cmd_star(ctx):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    mus = cfg.get("mu", 1.0)
    mus = mus if isinstance(mus, list) else [mus]
    summary = []
    for k, mu in enumerate(mus):
        p = solve_star(law, float(mu), h, _solver(cfg))
        stem = "profile" if len(mus) == 1 else f"profile_{k:03d}"
        ctx.files.extend(io.write_profile(ctx.out / stem, p))
        summary.append({"mu": p.mu, "R": p.R, "M": p.M, "residual": p.residual,
                        "sound_crossing_time": p.sound_crossing_time()})
    ctx.json("star.json", {"stars": summary})


def _family(ctx, with_nu):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    curve = sweep(law, _number(cfg, "mu_min"), _number(cfg, "mu_max"), int(cfg.get("n", 33)), h,
                  _solver(cfg))
    cols = {"mu": curve.mu, "M": curve.M, "R": curve.R, "dM_dmu": curve.dM, "dR_dmu": curve.dR,
            "dMR_dmu": curve.dMR, "slope_M": curve.slope_M}
    out = {"label": law.label, "events": curve.events, "truncated": curve.truncated,
           "failure": curve.failure, "degenerate": curve.degenerate, "zero_tol": curve.zero_tol}
    if with_nu:
        gamma0 = float(cfg.get("gamma0", law.gamma0))
        classify(curve, gamma0, cfg.get("seed_count"))
        cols["n_u"] = curve.nu
        cols["i_mu"] = [i_mu(curve, k) for k in range(curve.mu.size)]
        out["n_u"] = curve.nu
    ctx.csv("family.csv", "family", cols)
    ctx.json("family.json", out)
    return curve, law, h


def cmd_family(ctx):
    _family(ctx, False)


def cmd_classify(ctx):
    _family(ctx, True)


def cmd_spectrum(ctx):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    mus = cfg.get("mu", 1.0)
    mus = mus if isinstance(mus, list) else [mus]
    n_el = tuple(cfg.get("n_el", [80, 160]))
    ops = cfg.get("operators", ["L_Z", "tildeL_l0", "tildeL_l1"])
    rows = []
    for mu in mus:
        p = solve_star(law, float(mu), h, _solver(cfg))
        row = {"mu": p.mu}
        for op in ops:
            if op == "L_Z":
                rep = converged_inertia(spectrum_L_Z, p, n_el)
            elif op == "L":
                rep = converged_inertia(spectrum_L_Z, p, n_el, constrained=False)
            elif op.startswith("tildeL_l"):
                rep = converged_inertia(spectrum_tildeL, p, n_el, l=int(op[len("tildeL_l"):]),
                                        R_out=cfg.get("R_out_factor", 1.5) * p.R)
            else:
                raise ConfigError(f"operators: unknown operator {op!r}")
            row[op] = rep.to_dict()
        if cfg.get("kernel", False):
            row["kernel"] = kernel_study(p)
        rows.append(row)
    ctx.json("spectrum.json", {"label": law.label, "results": rows})


def cmd_distance(ctx):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    p = solve_star(law, _number(cfg, "mu", 1.0), h, _solver(cfg))
    rng = np.random.default_rng(ctx.seed)
    n = int(cfg.get("n_states", 20))
    lay = NodeLayout(p.R, cfg.get("R_dom_factor", 1.5) * p.R, int(cfg.get("n_in", 2000)),
                     int(cfg.get("n_out", 1000)))
    amp = _number(cfg, "amplitude", 0.1)
    cols = {k: [] for k in ("d", "d1", "d2", "d3", "d4", "d5", "dH", "residual", "slack")}
    for _ in range(n):
        s = random_state(p, rng, lay, amp)
        b = distance(s)
        gap = duality_gap(s)
        for k, val in zip(("d", "d1", "d2", "d3", "d4", "d5", "dH"), (b.total, *b.terms, b.dH)):
            cols[k].append(val)
        cols["residual"].append(decomposition_check(s))
        cols["slack"].append(gap.slack)
    ctx.csv("distance.csv", "distance", cols)
    worst = float(np.max(cols["residual"]))
    min_slack = float(np.min(cols["slack"]))
    tol = float(cfg.get("residual_tol", 1e-8))
    ctx.json("distance.json", {"mu": p.mu, "n_states": n, "max_residual": worst, "min_slack": min_slack})
    if worst > tol or min_slack < -1e-9:
        raise InvariantError(f"distance identity residual {worst:.2e} (tol {tol:g}), min slack {min_slack:.2e}")


def _hydro_config(cfg, over=None):
    d = dict(cfg.get("hydro", {}))
    if over:
        d.update(over)
    return HydroConfig.from_dict(d)


def _write_trajectory(ctx, name, tr, profile=None):
    ctx.csv(name, "trajectory", tr.arrays())
    if tr.snapshots and profile is not None:
        for k, s in enumerate(tr.snapshots):
            lay = s.layout
            n = lay.w.size // lay.n_cells
            ctx.csv(f"{Path(name).stem}_snap{k:04d}.csv", "profile",
                    {"r": 0.5 * (lay.faces[:-1] + lay.faces[1:]), "rho": s.rho[::n], "v": s.v[::n]})


def _traj_summary(tr, p, q):
    return {"status": tr.status, "message": tr.message, "n_steps": tr.meta["n_steps"],
            "time_unit": tr.meta["time_unit"], "d0": float(tr.d[0]), "sup_d": float(np.max(tr.d)),
            "mass_drift": tr.mass_drift(), "energy_excess": tr.energy_excess(),
            "energy_tolerance": energy_tolerance(tr.meta["n_cells"], tr.E[0]),
            "amplification": tr.amplification(p.M, q), "growth_factor": tr.growth_factor()}


def cmd_evolve(ctx):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    p = solve_star(law, _number(cfg, "mu", 1.0), h, _solver(cfg))
    hc = _hydro_config(cfg)
    try:
        tr = run(p, hc)
    except NumericalError as exc:
        tr = getattr(exc, "trajectory", None)
        if tr is not None:
            _write_trajectory(ctx, "trajectory.csv", tr, p)
            ctx.json("evolve.json", _traj_summary(tr, p, hc.q))
        raise
    _write_trajectory(ctx, "trajectory.csv", tr, p)
    summ = _traj_summary(tr, p, hc.q)
    ctx.json("evolve.json", summ)
    if summ["mass_drift"] > 1e-12:
        raise InvariantError(f"mass drift {summ['mass_drift']:.2e} exceeds 1e-12")


def cmd_experiment(ctx):
    cfg = ctx.cfg
    law, h = _law(cfg, ctx.base)
    p = solve_star(law, _number(cfg, "mu", 1.0), h, _solver(cfg))
    runs = _require(cfg, "runs")
    if not isinstance(runs, list) or not runs:
        raise ConfigError("runs: expected a non-empty list of perturbation records")
    configs = [_hydro_config(cfg, {"perturbation": Perturbation(**r)}) for r in runs]
    rep = stability_experiment(p, configs, int(cfg.get("workers", 1)))
    for k, tr in enumerate(rep.pop("trajectories")):
        _write_trajectory(ctx, f"trajectory_{k:03d}.csv", tr)
    ctx.json("experiment.json", rep)


# ---------------------------------------------------------------------------
# verify


def _check(results, name, ok, **values):
    results.append({"check": name, "ok": bool(ok), **values})


def cmd_verify(ctx):
    """Cross-module consistency suite; any failed check gives exit 3."""
    cfg = ctx.cfg
    results = []
    rng = np.random.default_rng(ctx.seed)
    for fam in cfg.get("families", []):
        law = law_from_config(fam["eos"], ctx.base)
        h = build_enthalpy(law)
        curve = sweep(law, float(fam["mu_min"]), float(fam["mu_max"]), int(fam.get("n", 17)), h)
        classify(curve, float(fam.get("gamma0", law.gamma0)))
        expect = fam.get("expect_n_u")
        if expect is not None:
            _check(results, f"classifier[{law.label}]", np.all(curve.nu == expect), n_u=curve.nu)
        idx = np.linspace(0, curve.mu.size - 1, int(fam.get("spectral_samples", 3))).round().astype(int)
        for k in idx:
            p = solve_star(law, curve.mu[k], h)
            a = converged_inertia(spectrum_L_Z, p, tuple(fam.get("n_el", [60, 120])))
            b = converged_inertia(spectrum_tildeL, p, tuple(fam.get("n_el", [60, 120])), l=0)
            _check(results, f"inertia_vs_classifier[{law.label}, mu={p.mu:.4g}]",
                   a.n_minus == curve.nu[k] and a.n_minus + a.n_zero == b.n_minus + b.n_zero,
                   n_minus_LZ=a.n_minus, n_le0_tildeL=b.n_minus + b.n_zero, n_u=int(curve.nu[k]))
    for dc in cfg.get("decomposition", []):
        law = law_from_config(dc["eos"], ctx.base)
        p = solve_star(law, float(dc.get("mu", 1.0)))
        lay = NodeLayout(p.R, 1.5 * p.R)
        res, slack = [], []
        for _ in range(int(dc.get("n_states", 10))):
            s = random_state(p, rng, lay)
            res.append(decomposition_check(s))
            slack.append(duality_gap(s).slack)
        _check(results, f"decomposition[{law.label}]", max(res) <= 1e-8 and min(slack) >= -1e-9,
               max_residual=max(res), min_slack=min(slack))
    for kc in cfg.get("kernel", []):
        law = law_from_config(kc["eos"], ctx.base)
        p = solve_star(law, float(kc.get("mu", 1.0)))
        ks = kernel_study(p, tuple(kc.get("n_el", [40, 80, 160])))
        l0 = spectrum_tildeL(p, 0, int(kc.get("n_el_l0", 120)))
        ok = min(ks["ratios"]) >= 4.0 and ks["vector_error"][-1] <= 1e-3 and l0.n_zero == 0
        _check(results, f"kernel[{law.label}]", ok, ratios=ks["ratios"],
               vector_error=ks["vector_error"][-1], l0_n_zero=l0.n_zero)
    for fc in cfg.get("fenchel", []):
        law = law_from_config(fc["eos"], ctx.base)
        h = build_enthalpy(law, force_tabulated=bool(fc.get("tabulated", False)))
        worst = max(fenchel_check(rb, int(fc.get("n", 1000)), h, ctx.seed) for rb in fc.get("rho_b", [1.0]))
        _check(results, f"fenchel[{law.label}, {h.provenance}]", worst <= float(fc.get("tol", 1e-9)),
               max_violation=worst)
    failed = [r["check"] for r in results if not r["ok"]]
    ctx.json("verify.json", {"checks": results, "failed": failed})
    if failed:
        raise InvariantError("verify failed: " + ", ".join(failed))


COMMANDS = {
    "eos": cmd_eos, "star": cmd_star, "family": cmd_family, "classify": cmd_classify,
    "spectrum": cmd_spectrum, "distance": cmd_distance, "evolve": cmd_evolve,
    "experiment": cmd_experiment, "verify": cmd_verify,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="starstab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).splitlines()[0])
        sp.add_argument("--config", type=Path, help="JSON config (default: bundled)")
        sp.add_argument("--out", type=Path, help=f"output directory (default: ${OUTPUT_ENV}/{name})")
        sp.add_argument("--seed", type=int, help="seed for randomized suites (overrides config)")
        sp.add_argument("--quiet", action="store_true")
    return ap


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    name = args.command
    t0 = time.perf_counter()
    status, code, message = "ok", EXIT_OK, ""
    try:
        path = args.config or bundled_config(name)
        cfg = io.load_config(path)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        root = Path(os.environ.get(OUTPUT_ENV, "starstab_out"))
        outdir = args.out or Path(cfg.get("output", root / name))
        ctx = Context(Path(outdir), cfg, Path(path).resolve().parent, seed)
    except StarstabError as exc:
        print(f"starstab {name}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[name](ctx)
    except ConfigError as exc:
        status, code, message = "config_error", EXIT_CONFIG, str(exc)
    except (InvariantError, IndeterminateError) as exc:
        status, code, message = "invariant_violation", EXIT_INVARIANT, str(exc)
    except NumericalError as exc:
        status, code, message = "numerical_failure", EXIT_NUMERICAL, str(exc)
    except (ValueError, KeyError, TypeError) as exc:
        status, code, message = "config_error", EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
        if os.environ.get("STARSTAB_DEBUG"):
            traceback.print_exc()
    cfg_out = dict(ctx.cfg)
    cfg_out["seed"] = ctx.seed
    io.write_manifest(ctx.out, cfg_out, ctx.files, time.perf_counter() - t0, status,
                      {"command": name, "message": message})
    if code:
        print(f"starstab {name}: {status}: {message}", file=sys.stderr)
    elif not args.quiet:
        print(f"starstab {name}: ok -> {ctx.out}")
    return code


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
