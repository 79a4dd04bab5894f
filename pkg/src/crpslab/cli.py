"""Command-line runner: ``crpslab <subcommand> --config <path> [--out <dir>] [--seed <int>]``.

Exit codes: 0 all checks pass, 2 checks ran with failures (report written), 1 operational error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .battery import geometry_battery
from .estimates import (CheckRecord, EstimateReport, alpha, barrier_check, curved_hessian_diagnostics,
                        energy_budget_check, exponent_law_check, kappa0_bound, linfty_predictor, mean_value_check, nu,
                        pbar_check, phi_field, r0, subsolution_check)
from .fields import CylinderField, TorusField, read_snapshot, write_snapshot
from .fueter import SolverConfig, default_sgrid, energy, solve_bvp, truncation_margin
from .geometry import ChartDomainError, DegenerationError, make_chart
from .grids import TorusGrid
from .hamiltonians import FAMILIES, CutoffFamily, HamiltonianSpec, Perturbation, perturbation_norms

SCHEMA = "crpslab-report/1"
log = logging.getLogger("crpslab")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration: flat key = value text, typed, unknown keys rejected


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split()) if text.strip() else ()


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA_KEYS = {
    # target and grids
    "chart": (str, "flat"), "n": (int, 1), "margin": (float, 1e-3),
    "ns": (int, 128), "nx": (int, 16), "ny": (int, 16), "S": (float, 22.0),
    "s_density": (float, 6.0), "s_tail": (float, 0.0), "s_tail_density": (float, 2.0),
    "q_base": (_floats, ()),
    # Hamiltonian
    "family": (str, "mixed"), "amplitude": (float, 0.04), "tau": (float, 1.0), "kinetic": (_bool, True),
    "norm_samples": (int, 4096),
    # solver
    "newton_tol": (float, 1e-10), "max_iter": (int, 30), "krylov_tol": (float, 1e-2),
    "krylov_restart": (int, 60), "krylov_maxiter": (int, 20), "line_search": (_bool, True),
    "preconditioner": (str, "flat_modes"), "continuation": (_floats, (1.0,)),
    # harmonic flow
    "flow_grid": (int, 64), "flow_steps": (int, 2000), "flow_dt": (float, 0.5), "flow_tol": (float, 1e-7),
    "flow_amplitude": (float, 0.2), "winding": (_floats, ()),
    # geometry battery
    "geometry_samples": (int, 200), "xi_max": (float, 0.45),
    # estimates
    "input": (str, ""), "window_mu": (float, 1.0), "mv_balls": (int, 50), "barrier_n": (int, 400),
    # sweep and report
    "ladder": (_floats, (1e-1, 1e-2, 1e-3, 1e-4)), "calibration_rung": (int, 0), "inputs": (str, ""),
    "seed": (int, 0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}


def parse_config(text: str, seed=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    if cp.sections() != ["experiment"]:
        raise ConfigError("config must be flat key = value lines without sections")
    raw = dict(cp["experiment"])
    unknown = sorted(set(raw) - set(SCHEMA_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    vals = {}
    for key, (conv, default) in SCHEMA_KEYS.items():
        if key in raw:
            try:
                vals[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            vals[key] = default
    if seed is not None:
        vals["seed"] = int(seed)
    _validate(vals)
    return ExperimentConfig(vals)


def _validate(v):
    if v["chart"] not in ("flat", "hyperbolic"):
        raise ConfigError("chart must be 'flat' or 'hyperbolic'")
    if v["family"] not in FAMILIES:
        raise ConfigError(f"family must be one of {', '.join(FAMILIES)}")
    for key in ("n", "ns", "nx", "ny", "flow_grid", "norm_samples", "geometry_samples", "mv_balls", "barrier_n"):
        if v[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if v["ns"] < 4:
        raise ConfigError("ns must be at least 4")
    for key in ("S", "flow_dt", "flow_tol", "newton_tol", "krylov_tol", "window_mu"):
        if not v[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if v["amplitude"] < 0 or v["tau"] < 0:
        raise ConfigError("amplitude and tau must be nonnegative")
    if v["S"] <= v["tau"] + 1:
        raise ConfigError("S must exceed tau + 1 so the cutoff support fits in the cylinder")
    if not 0 < v["xi_max"] < 0.5:
        raise ConfigError("xi_max must lie in (0, 1/2)")
    if v["q_base"] and len(v["q_base"]) != 2 * v["n"]:
        raise ConfigError("q_base needs 2n entries")
    if v["winding"] and len(v["winding"]) != 4 * v["n"]:
        raise ConfigError("winding needs 2n x 2 entries")
    if any(c <= 0 for c in v["ladder"]):
        raise ConfigError("ladder entries must be positive")
    if not 0 <= v["calibration_rung"] < max(1, len(v["ladder"])):
        raise ConfigError("calibration_rung outside the ladder")
    try:
        SolverConfig(**_solver_kwargs(v))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _solver_kwargs(v):
    return dict(newton_tol=v["newton_tol"], max_iter=v["max_iter"], krylov_tol=v["krylov_tol"],
                krylov_restart=v["krylov_restart"], krylov_maxiter=v["krylov_maxiter"],
                line_search=v["line_search"], preconditioner=v["preconditioner"], continuation=v["continuation"])


def load_config(path, seed=None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), seed)


# ---------------------------------------------------------------------------
# deterministic output


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_report(path, subcommand, cfg: ExperimentConfig, body: dict, passed: bool):
    doc = {"schema": SCHEMA, "subcommand": subcommand, "seed": cfg.seed, "config": cfg.to_dict(),
           "passed": bool(passed), "body": body}
    Path(path).write_text(json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# builders


def build_hamiltonian(cfg, amplitude=None, norms=True):
    chart = make_chart(cfg.chart, cfg.n, cfg.margin)
    amp = cfg.amplitude if amplitude is None else amplitude
    unit = Perturbation(cfg.family, cfg.n, 1.0)
    nr = None
    if norms:
        nr = perturbation_norms(unit, chart, samples=cfg.norm_samples, seed=cfg.seed).scaled(amp)
    return HamiltonianSpec(chart, unit.scaled(amp), CutoffFamily(cfg.tau), cfg.kinetic, nr)


def build_initial(cfg, chart):
    sg = default_sgrid(cfg.S, cfg.ns, cfg.tau, cfg.s_density, cfg.s_tail, cfg.s_tail_density)
    grid = TorusGrid(cfg.nx, cfg.ny)
    qb = np.array(cfg.q_base) if cfg.q_base else None
    return CylinderField.zero_section(chart, sg, grid, qb, {"tau": cfg.tau})


def solve_from_config(cfg, amplitude=None):
    ham = build_hamiltonian(cfg, amplitude)
    Z0 = build_initial(cfg, ham.chart)
    Z, rep = solve_bvp(Z0, ham, SolverConfig(**_solver_kwargs(cfg.values)))
    Z.meta.update({"family": cfg.family, "amplitude": ham.perturbation.amplitude, "converged": rep.converged})
    return Z, ham, rep


# ---------------------------------------------------------------------------
# subcommands


def cmd_geometry_check(cfg, out):
    rep = EstimateReport()
    rep.extend(geometry_battery("hyperbolic", max(cfg.n, 2), cfg.geometry_samples, cfg.xi_max, cfg.seed), "ball_")
    rep.extend(geometry_battery("flat", cfg.n, cfg.geometry_samples, cfg.xi_max, cfg.seed), "flat_")
    write_report(out / "geometry-check.json", "geometry-check", cfg, rep.to_dict(), rep.passed)
    return rep.passed


def _initial_map(cfg, chart, grid, rng):
    X, Y = grid.mesh()
    d = chart.dim
    q = np.zeros(grid.shape + (d,))
    for i in range(d):
        for kx, ky in ((1, 0), (0, 1), (1, 1), (2, -1)):
            a, b = rng.normal(size=2) * cfg.flow_amplitude / (kx * kx + ky * ky)
            q[..., i] += a * np.cos(kx * X + ky * Y) + b * np.sin(kx * X + ky * Y)
    if chart.kind != "flat":
        r = np.linalg.norm(q, axis=-1).max()
        if r > 0.6:
            q *= 0.6 / r
    winding = np.array(cfg.winding).reshape(d, 2) if cfg.winding else None
    return TorusField(chart, grid, q, winding)


def cmd_harmonic_flow(cfg, out):
    from .action import el_residual
    from .harmonic import dirichlet_energy, heat_flow, lift_momentum

    chart = make_chart(cfg.chart, cfg.n, cfg.margin)
    grid = TorusGrid(cfg.flow_grid, cfg.flow_grid)
    rng = np.random.default_rng(cfg.seed)
    q0 = _initial_map(cfg, chart, grid, rng)
    res = heat_flow(q0, cfg.flow_steps, cfg.flow_dt, tol=cfg.flow_tol)
    lift = lift_momentum(res.field)
    h0 = HamiltonianSpec(chart, Perturbation("zero", cfg.n))
    el = float(np.max(np.abs(el_residual(lift, h0))))
    write_snapshot(res.field, out / "harmonic-base.snap")
    write_snapshot(lift, out / "harmonic-lift.snap")
    rep = EstimateReport(data={"flow": res.report(), "energy_history": res.energies,
                               "tension_history": res.tensions, "dirichlet_energy": dirichlet_energy(res.field)})
    rep.add(CheckRecord.leq("tension", "terminal tension sup-norm below flow_tol", res.tensions[-1], cfg.flow_tol, 0.0,
                            [cfg.flow_grid, cfg.flow_grid]))
    rep.add(CheckRecord.leq("lift_residual", "critical-point residual of the momentum lift", el, 10 * cfg.flow_tol, 0.0,
                            [cfg.flow_grid, cfg.flow_grid]))
    write_report(out / "harmonic-flow.json", "harmonic-flow", cfg, rep.to_dict(), rep.passed)
    return rep.passed


def _solve_body(Z, ham, rep, cfg):
    en = energy(Z, ham, window=cfg.window_mu)
    return {"solver": rep.to_dict(), "energy": en, "norms": ham.norms.to_dict() if ham.norms else None,
            "truncation_margin": truncation_margin(cfg.S, cfg.tau, Z.grid),
            "sup_phi": float(phi_field(Z).max())}


def cmd_fueter_solve(cfg, out):
    Z, ham, rep = solve_from_config(cfg)
    write_snapshot(Z, out / "fueter.snap")
    body = _solve_body(Z, ham, rep, cfg)
    checks = EstimateReport()
    checks.add(CheckRecord.leq("newton_residual", "final sup residual <= newton_tol", rep.residual_history[-1],
                               cfg.newton_tol, 0.0, [cfg.ns, cfg.nx, cfg.ny]))
    body["checks"] = checks.to_dict()
    write_report(out / "fueter-solve.json", "fueter-solve", cfg, body, checks.passed)
    return checks.passed


def estimate_battery(Z, ham, cfg) -> EstimateReport:
    nr = ham.norms
    c1, c2 = nr.c1, nr.c2
    a = alpha(c2)
    rep = EstimateReport(data={"alpha": a, "R0": r0(a), "c1": c1, "c2": c2, "kappa0_bound": kappa0_bound()})
    rep.extend(energy_budget_check(Z, ham, c1, nr.oscillation, mu=cfg.window_mu), "budget_")
    if Z.chart.kind == "flat":
        rep.extend(subsolution_check(Z, a, ham), "step1_")
        rep.extend(mean_value_check(Z, a, count=cfg.mv_balls, seed=cfg.seed), "step2_")
        try:
            pred = linfty_predictor(c1, c2)
            r = pred["r_star"] if pred["r_star"] > 0 else r0(a)
            rep.data["predictor_unit_c_inf"] = pred
        except ValueError as exc:
            r = r0(a)
            rep.data["predictor_error"] = str(exc)
        r = min(r, r0(a))
        rep.extend(pbar_check(Z, ham, c1, energy_E=energy(Z)["E"], r=r), "step3_")
        mu = r * r * (0.25 - a)
        if mu < 0:
            # r <= R0 keeps mu >= -pi^2/8 up to rounding
            rep.extend(barrier_check(max(mu, -math.pi**2 / 8), r, "radial", cfg.barrier_n), "step2_")
        else:
            rep.data["step2_barrier"] = "mu >= 0: direct comparison, no barrier needed"
        rep.data["sup_phi"] = float(phi_field(Z).max())
    else:
        rep.data["curved_diagnostics"] = curved_hessian_diagnostics(Z)
    return rep


def cmd_estimates(cfg, out):
    if cfg.input:
        path = Path(cfg.input)
        if not path.is_file():
            raise FileNotFoundError(f"input snapshot not found: {path}")
        Z = read_snapshot(path)
        if not isinstance(Z, CylinderField):
            raise ConfigError("estimates needs a cylinder snapshot")
        amp = float(Z.meta.get("amplitude", cfg.amplitude))
        family = Z.meta.get("family", cfg.family)
        if family != cfg.family:
            raise ConfigError(f"snapshot family {family!r} differs from config {cfg.family!r}")
        ham = build_hamiltonian(cfg, amp)
        ham = HamiltonianSpec(Z.chart, ham.perturbation, CutoffFamily(float(Z.meta.get("tau", cfg.tau))),
                              cfg.kinetic, ham.norms)
    else:
        Z, ham, _ = solve_from_config(cfg)
    rep = estimate_battery(Z, ham, cfg)
    write_report(out / "estimates.json", "estimates", cfg, rep.to_dict(), rep.passed)
    return rep.passed


def run_sweep(cfg):
    """Amplitude ladder at fixed shape; amplitudes are set so that ||h||_C1 hits each rung."""
    chart = make_chart(cfg.chart, cfg.n, cfg.margin)
    unit = perturbation_norms(Perturbation(cfg.family, cfg.n, 1.0), chart, samples=cfg.norm_samples, seed=cfg.seed)
    rows = []
    Zprev = None
    for target in cfg.ladder:
        amp = target / unit.c1
        Z, ham, rep = solve_from_config(cfg, amp)
        rows.append({"c1": ham.norms.c1, "c2": ham.norms.c2, "amplitude": amp, "sup_phi": float(phi_field(Z).max()),
                     "sup_p": rep.sup_p, "energy": rep.energy, "iterations": rep.iterations,
                     "converged": rep.converged})
        Zprev = Z
    law = exponent_law_check([r["c1"] for r in rows], [r["c2"] for r in rows], [r["sup_phi"] for r in rows],
                             cfg.calibration_rung)
    for r, b in zip(rows, law.data["budget"]):
        r["budget"] = b
    for k, r in enumerate(rows):
        law.add(CheckRecord.leq(f"converged_{k}", "Newton converged on this rung", 0.0 if r["converged"] else 1.0,
                                0.0, 0.0, [cfg.ns, cfg.nx, cfg.ny]))
    return rows, law, Zprev


def cmd_sweep(cfg, out):
    rows, law, _ = run_sweep(cfg)
    c_inf = law.data["C_inf"]
    for r in rows:
        r["nu_relative"] = nu(1.0, r["c2"], c_inf)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c1", "c2", "amplitude", "sup_phi", "budget"])
        for r in rows:
            w.writerow([repr(float(r[k])) for k in ("c1", "c2", "amplitude", "sup_phi", "budget")])
    write_report(out / "sweep.json", "sweep", cfg, {"rows": rows, "exponent_law": law.to_dict()}, law.passed)
    return law.passed


PLOT_SCRIPT = """# gnuplot script generated by crpslab report
set datafile separator ','
set logscale xy
set key top left
set xlabel '||h||_{C^1}'
set ylabel 'sup Phi'
set terminal pngcairo size 800,600
set output 'exponent_law.png'
plot 'exponent_law.csv' every ::1 using 1:4 with linespoints title 'measured sup Phi', \\
     'exponent_law.csv' every ::1 using 1:5 with lines title 'frozen budget'
set output 'residuals.png'
set xlabel 'Newton iteration'
set ylabel 'sup residual'
unset logscale x
plot 'residuals.csv' every ::1 using 2:3 with linespoints title 'residual'
"""


def cmd_report(cfg, out):
    paths = []
    for item in (cfg.inputs.replace(",", " ").split() if cfg.inputs else []):
        p = Path(item)
        if p.is_dir():
            paths += sorted(p.glob("*.json"))
        elif p.is_file():
            paths.append(p)
        else:
            raise FileNotFoundError(f"report input not found: {p}")
    if not paths:
        raise ConfigError("report needs 'inputs' pointing at JSON reports or directories")
    summary, sweep_rows, residuals = [], [], []
    for p in sorted(set(paths), key=lambda q: str(q)):
        doc = json.loads(p.read_text())
        if doc.get("schema") != SCHEMA:
            continue
        summary.append({"file": p.name, "subcommand": doc["subcommand"], "passed": doc["passed"]})
        body = doc["body"]
        if doc["subcommand"] == "sweep":
            sweep_rows += body["rows"]
        if doc["subcommand"] == "fueter-solve":
            for k, r in enumerate(body["solver"]["residual_history"]):
                residuals.append((p.name, k, r))
    with open(out / "exponent_law.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c1", "c2", "amplitude", "sup_phi", "budget"])
        for r in sorted(sweep_rows, key=lambda r: -r["c1"]):
            w.writerow([repr(float(r[k])) for k in ("c1", "c2", "amplitude", "sup_phi", "budget")])
    with open(out / "residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "iteration", "residual"])
        for row in residuals:
            w.writerow([row[0], row[1], repr(float(row[2]))])
    (out / "plot.gp").write_text(PLOT_SCRIPT)
    passed = all(s["passed"] for s in summary)
    write_report(out / "report.json", "report", cfg, {"inputs": summary}, passed)
    return passed


COMMANDS = {
    "geometry-check": cmd_geometry_check,
    "harmonic-flow": cmd_harmonic_flow,
    "fueter-solve": cmd_fueter_solve,
    "estimates": cmd_estimates,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="crpslab", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="flat key = value configuration file")
    ap.add_argument("--out", default="crpslab-out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with np.errstate(over="raise", invalid="ignore"):
            passed = COMMANDS[args.subcommand](cfg, out)
    except (ConfigError, FileNotFoundError, ChartDomainError, DegenerationError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"crpslab: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver and flow failures, reported with their diagnosis
        print(f"crpslab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0 if passed else 2


if __name__ == "__main__":
    sys.exit(main())
