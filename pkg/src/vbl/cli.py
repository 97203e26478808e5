"""Command line entry point: ``vbl <mode> <config> [--force] [--out DIR] [--seed N]``.

Exit codes: 0 success, 2 configuration error, 3 gate failure (without
``--force``), 4 numerical abort, 5 property-suite failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import euler, fixed_point as fp, transport
from .analytic_norms import table_from_closed_form, table_from_field
from .config import AUTO, MODES, RunConfig, load_config
from .errors import ConfigError, GateError, VblError
from .phase_space import GridSpec, PhaseField, weight_values
from .profiles import gauss_v_trig_x
from .suites import norm_suite

log = logging.getLogger("vbl")

EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_NUMERICAL, EXIT_SUITE = 0, 2, 3, 4, 5
CLOSED_FORM_CAPS = (20, 40)


class SuiteFailure(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


class Run:
    """Resolved objects for one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, seed: int, force: bool):
        self.cfg, self.out, self.seed, self.force = cfg, out, seed, force
        g, p, i = cfg.grid, cfg.params, cfg.initial
        self.grid = GridSpec(g["nx"], g["nv"], g["L"], g["V"], g["dt"], g["T"])
        if i["profile"] == "file":
            loaded = transport.import_binary(i["path"]).fields[0]
            lg = loaded.grid
            self.grid = GridSpec(lg.nx, lg.nv, lg.x_period, lg.v_halfwidth, g["dt"], g["T"])
            self.f0 = PhaseField(loaded.values, self.grid)
            self.g0 = fp.g0_from_f0(self.f0)
            self.g0_table = table_from_field(self.g0, *fp.Z_CAPS)
        else:
            prof = gauss_v_trig_x(i["amplitude"], i["epsilon"], i["mode"])
            self.g0 = PhaseField(prof.sample(self.grid), self.grid)
            self.f0 = PhaseField(self.g0.values * weight_values(self.grid.v), self.grid)
            self.g0_table = table_from_closed_form(prof, *CLOSED_FORM_CAPS, g["L"])
        M = p["M"]
        if M == AUTO:
            M = fp.find_M(p["lambda0"], p["K"], p["T"], p["q"]) or fp.M_STEP
        self.params = fp.SolverParams(p["lambda0"], p["K"], p["T"], M, p["q"],
                                      p["picard_tol"], p["max_iter"])

    def gate(self) -> tuple[fp.GateReport, dict]:
        rep = fp.gate(self.params, self.g0_table)
        block = {"gate": rep.as_dict(), "kappa": fp.kappa(self.params), "params": self.params.as_dict()}
        if not rep.passed:
            if not self.force:
                raise GateError("gate conditions fail (use --force to continue)")
            log.warning("gate conditions fail; continuing because --force was given")
            block["forced"] = True
        return rep, block


def _drifts(values: list[float]) -> float:
    v0 = values[0]
    return max(abs(v / v0 - 1) for v in values) if v0 != 0 else max(abs(v) for v in values)


def mode_simulate(run: Run) -> dict:
    q = run.params.q
    traj = transport.solve_nonlinear(run.f0, q, run.grid)
    masses = [transport.mass(f) for f in traj.fields]
    energies = [transport.kinetic_energy(f, q) for f in traj.fields]
    mp = transport.max_principle_residual(traj)
    transport.export_binary(traj, run.out / "trajectory.vbl")
    transport.export_csv(traj, run.out / "final.csv")
    with open(run.out / "timeseries.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mass", "energy", "sup"])
        for t, m, e, f in zip(traj.times, masses, energies, traj.fields):
            w.writerow([repr(float(t)), repr(m), repr(e), repr(f.sup())])
    stationarity = max(float(np.max(np.abs(f.values - run.f0.values))) for f in traj.fields)
    return {
        "mass_drift": _drifts(masses),
        "energy_drift": _drifts(energies),
        "max_change_from_initial": stationarity,
        "max_principle": {"margin": mp.margin, "allowance": mp.allowance, "pass": mp.passed},
        "under_resolved_steps": traj.under_resolved_steps,
        "steps": run.grid.nsteps,
    }


def mode_gate(run: Run) -> dict:
    return run.gate()[1]


def mode_picard(run: Run) -> dict:
    rep, block = run.gate()
    res = fp.picard(run.f0, run.params, run.grid, gate_report=rep, force=run.force)
    transport.export_binary(res.f, run.out / "picard_f.vbl")
    block.update({
        "iterations": res.iterations_report(),
        "membership": [m.as_dict() for m in res.membership],
        "converged": res.converged,
        "diagnosis": res.diagnosis,
    })
    if not res.converged:
        raise _NumericalWithReport(res.diagnosis, block)
    return block


def mode_contract(run: Run) -> dict:
    _, block = run.gate()
    rng = np.random.default_rng(run.seed)
    amp = 0.25 * run.g0.sup()
    pairs = []
    for k in range(run.cfg.params["pairs"]):
        h1 = fp.random_admissible_trajectory(run.g0, rng, amp, run.grid)
        h2 = fp.random_admissible_trajectory(run.g0, rng, amp, run.grid)
        m1, m2 = fp.membership_X(h1, run.params), fp.membership_X(h2, run.params)
        res = fp.contraction_rate(h1, h2, run.f0, run.params)
        pairs.append(res.as_dict() | {"pair": k, "members": bool(m1.passed and m2.passed)})
    block["pairs"] = pairs
    block["all_pass"] = all(p["pass"] for p in pairs)
    if not block["all_pass"]:
        raise _SuiteWithReport("contraction quotient exceeds kappa + allowance", block)
    return block


def mode_norms(run: Run) -> dict:
    records = norm_suite(run.seed)
    failed = [r for r in records if not r["pass"]]
    block = {"checks": len(records), "failed": len(failed), "records": records}
    if failed:
        raise _SuiteWithReport(f"{len(failed)} norm checks failed", block)
    return block


def mode_euler_check(run: Run) -> dict:
    r = run.cfg.run
    q = run.params.q
    gamma = q + 2
    nx, dt, T, amp = r["euler_nx"], r["euler_dt"], r["euler_T"], r["euler_amplitude"]
    L = run.grid.x_period
    lib = euler.test_function_library(L)
    levels = []
    for level in range(2):
        n = nx * 2 ** level
        h = dt / 2 ** level
        steps = int(round(T / h))
        traj = euler.euler_run(euler.acoustic_pulse(n, gamma, amp, L), h, steps)
        levels.append(traj)
    coarse, fine = levels
    res_c = [euler.weak_residual(coarse, q, phi) for phi in lib]
    res_f = [euler.weak_residual(fine, q, phi) for phi in lib]
    orders = [math.log2(a / b) if a > 0 and b > 0 else math.inf for a, b in zip(res_c, res_f)]
    mass = [s.mass() for s in fine]
    mom = [s.momentum() for s in fine]
    en = [euler.energy_total(s, q) for s in fine]
    series = {phi.name: euler.weak_residual_series(fine, q, phi) for phi in lib}
    with open(run.out / "euler_timeseries.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mass", "momentum", "energy"] + [f"residual_{phi.name}" for phi in lib])
        for j, s in enumerate(fine):
            row = [repr(s.t), repr(mass[j]), repr(mom[j]), repr(en[j])]
            for phi in lib:
                val = series[phi.name][j - 2] if 2 <= j < len(fine) - 2 else float("nan")
                row.append(repr(float(val)))
            w.writerow(row)
    block = {
        "gamma": gamma,
        "residuals": {phi.name: {"coarse": a, "fine": b, "order": o}
                      for phi, a, b, o in zip(lib, res_c, res_f, orders)},
        "mass_drift": _drifts(mass),
        "momentum_drift": max(abs(m - mom[0]) for m in mom) / max(abs(mom[0]), 1e-300),
        "energy_drift": _drifts(en),
    }
    ok = (all(o >= 2 for o in orders) and block["mass_drift"] <= 1e-10
          and block["momentum_drift"] <= 1e-10 and block["energy_drift"] <= 1e-8)
    block["pass"] = ok
    if not ok:
        raise _SuiteWithReport("weak-residual order or conservation check failed", block)
    return block


def mode_plot(run: Run) -> dict:
    src = Path(run.cfg.run["input"])
    if not src.is_file():
        raise ConfigError(f"plot input {str(src)!r} does not exist", section="run")
    dest = run.out / (src.stem + ".dat")
    with open(src) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    with open(dest, "w") as out:
        out.write(f"# source: {src.name}\n# columns: {' '.join(header)}\n")
        if header[:2] == ["x", "v"]:
            out.write("# blocks of constant x separated by blank lines (gnuplot splot/pm3d)\n")
            prev = None
            for row in body:
                if prev is not None and row[0] != prev:
                    out.write("\n")
                out.write(" ".join(row) + "\n")
                prev = row[0]
        else:
            for row in body:
                out.write(" ".join(row) + "\n")
    return {"figures": [dest.name], "rows": len(body)}


class _NumericalWithReport(VblError):
    def __init__(self, msg: str, block: dict):
        super().__init__(msg)
        self.block = block


class _SuiteWithReport(SuiteFailure):
    def __init__(self, msg: str, block: dict):
        super().__init__(msg)
        self.block = block


DISPATCH = {
    "simulate": mode_simulate,
    "picard": mode_picard,
    "contract": mode_contract,
    "gate": mode_gate,
    "norms": mode_norms,
    "euler-check": mode_euler_check,
    "plot": mode_plot,
}


def _write(out: Path, report: dict, wall: float) -> None:
    (out / "report.json").write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    (out / "meta.json").write_text(json.dumps({"wall_time": wall}, sort_keys=True) + "\n")


def run(mode: str, cfg: RunConfig, out: Path, seed: int, force: bool = False) -> int:
    start = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.as_dict()
    echo["run"] = dict(echo["run"], mode=mode, seed=seed)
    report = {"mode": mode, "config": echo}
    status = EXIT_OK
    try:
        r = Run(cfg, out, seed, force)
        report["result"] = DISPATCH[mode](r)
    except GateError as exc:
        status, report["error"] = EXIT_GATE, str(exc)
        report["result"] = {"gate": fp.gate(r.params, r.g0_table).as_dict(), "kappa": fp.kappa(r.params)}
    except _SuiteWithReport as exc:
        status, report["error"], report["result"] = EXIT_SUITE, str(exc), exc.block
    except _NumericalWithReport as exc:
        status, report["error"], report["result"] = EXIT_NUMERICAL, str(exc), exc.block
    except ConfigError:
        raise
    except (VblError, ArithmeticError, ValueError) as exc:
        # ValueError here is a violated numerical precondition (CFL, step parity, schedule)
        status, report["error"] = EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}"
    report["exit_status"] = status
    _write(out, report, time.perf_counter() - start)
    if "error" in report:
        print(f"vbl {mode}: {report['error']}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vbl", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("config")
    ap.add_argument("--force", action="store_true", help="continue when gate conditions fail")
    ap.add_argument("--out", help="output directory (default: [run] out)")
    ap.add_argument("--seed", type=int, help="seed for randomised sweeps (default: [run] seed)")
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.run["out"])
        seed = args.seed if args.seed is not None else cfg.run["seed"]
        return run(args.mode, cfg, out, seed, args.force)
    except ConfigError as exc:
        print(f"vbl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
