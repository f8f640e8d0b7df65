"""
Command line front end.

    ekfbound run <config>                   CSV records + JSON summary
    ekfbound verify-decomposition <config>  exactness residual report
    ekfbound compare <config>               nominal vs interval vs Monte Carlo

Exit codes: 0 success, 1 oracle violation (or residual failure), 2 SDP
infeasible / solver failure, 3 configuration error.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import BoundUnavailableError, ConfigurationError, DecompositionInvalidError, EkfBoundError
from .filter import run_scenario
from .oracle import bound_violation_report, run_ensemble, run_frozen_ensemble, simulate_truth
from .systems import decompose_dynamics, decompose_measurement, verify_decomposition

log = logging.getLogger("ekfbound")

EXIT_OK, EXIT_VIOLATION, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2, 3

CSV_COLUMNS = [
    "step", "phase", "i", "j", "lower", "upper", "ekf_nominal", "empirical",
    "solver_status", "xi_star", "solve_time_ms",
]
COMPARE_COLUMNS = ["step", "phase", "i", "j", "ekf_nominal", "lower", "upper", "empirical", "within"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------


def _execute(cfg, force_oracle=False):
    """Run filter (+ oracle). Returns (system, run, ensemble | None, report | None)."""
    system = cfg.build_system()
    truth = simulate_truth(system, cfg.x0_mean, cfg.P0, cfg.inputs, cfg.horizon, 1, cfg.seed)
    run = run_scenario(system, cfg.x0_mean, cfg.P0, truth.inputs, truth.y[:, 0, :], cfg.horizon, cfg.filter)
    ens = report = None
    oc = cfg.oracle
    if oc.enabled or force_oracle:
        if oc.mode == "frozen":
            ens = run_frozen_ensemble(system, run, cfg.P0, truth.inputs, oc.samples, oc.seed, oc.moment)
        else:
            ens = run_ensemble(system, cfg.x0_mean, cfg.P0, truth.inputs, cfg.horizon, oc.samples, oc.seed, oc.moment)
        intervals = [iv for iv in run.intervals("posterior") + run.intervals("prior") if iv.finite]
        report = bound_violation_report(intervals, ens, oc.confidence_sigma, oc.bootstrap, oc.seed)
        for r in run.records:
            r.empirical = float(ens.covariance(r.step, r.phase)[r.i, r.j])
    return system, run, ens, report


def _summary(cfg, run, ens, report, exit_code):
    steps = []
    for s in run.states[1:]:
        for phase, rep, P in (("prior", s.report.prior, s.P_nominal_prior), ("posterior", s.report.posterior, s.P_nominal)):
            row = dict(
                step=s.k, phase=phase,
                trace_lower=rep.trace_lower, trace_upper=rep.trace_upper,
                ekf_nominal_trace=float(np.trace(P)),
                gamma=rep.gamma, qc_min_form=rep.qc_min_value,
                validity_excursion=rep.validity_excursion,
            )
            if ens is not None:
                row["empirical_trace"] = float(np.trace(ens.covariance(s.k, phase)))
            steps.append(row)
    doc = dict(
        schema_version=1,
        scenario=cfg.name,
        system=cfg.system_id,
        horizon=cfg.horizon,
        seed=cfg.seed,
        steps=steps,
        failures=[dict(step=k, phase=ph, i=i, j=j, error=e) for k, ph, i, j, e in run.failures],
        qc_violations=sum(1 for r in steps if r["qc_min_form"] is not None and r["qc_min_form"] < -1e-12),
        validity_excursions=sum(1 for r in steps if r["validity_excursion"]),
        exit_code=exit_code,
    )
    if report is not None:
        doc["oracle"] = dict(report.to_dict(), mode=cfg.oracle.mode, moment=cfg.oracle.moment,
                             max_violation_rate=cfg.oracle.max_violation_rate)
    if cfg.filter.experimental_overbound:
        ob = []
        for s in run.states[1:]:
            if s.report.overbound is None:
                continue
            row = dict(step=s.k, overbound=s.report.overbound)
            if ens is not None:
                row["min_eig_minus_empirical"] = float(
                    np.linalg.eigvalsh(s.report.overbound - ens.covariance(s.k, "posterior")).min())
            ob.append(row)
        doc["experimental_overbound"] = ob
    return doc


def _run_or_exit(cfg, force_oracle=False):
    try:
        return _execute(cfg, force_oracle), None
    except BoundUnavailableError as exc:
        log.error("bound unavailable at step %s (%s) entry %s: %s", exc.step, exc.phase, exc.entry, exc)
        return None, EXIT_INFEASIBLE


def cmd_run(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out_dir, threads=args.threads)
    result, code = _run_or_exit(cfg)
    if result is None:
        return code
    system, run, ens, report = result
    code = EXIT_OK
    if report is not None and report.violation_rate > cfg.oracle.max_violation_rate:
        code = EXIT_VIOLATION
    out = Path(cfg.output.dir)
    write_csv(out / cfg.output.csv, CSV_COLUMNS, [r.__dict__ for r in run.records])
    write_json(out / cfg.output.summary, _summary(cfg, run, ens, report, code))
    if report is not None:
        log.info("oracle: %d/%d violations", len(report.violations), report.pairs_checked)
    print(f"wrote {out / cfg.output.csv} ({len(run.records)} rows); exit {code}")
    return code


def cmd_compare(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out_dir, threads=args.threads)
    result, code = _run_or_exit(cfg, force_oracle=True)
    if result is None:
        return code
    system, run, ens, report = result
    flagged = {(v.step, v.phase, v.i, v.j) for v in report.violations}
    rows = []
    for r in run.records:
        within = None
        if np.isfinite(r.lower) and np.isfinite(r.upper):
            within = (r.step, r.phase, r.i, r.j) not in flagged
        rows.append(dict(step=r.step, phase=r.phase, i=r.i, j=r.j, ekf_nominal=r.ekf_nominal,
                         lower=r.lower, upper=r.upper, empirical=r.empirical, within=within))
    code = EXIT_VIOLATION if report.violation_rate > cfg.oracle.max_violation_rate else EXIT_OK
    out = Path(cfg.output.dir)
    write_csv(out / cfg.output.compare_csv, COMPARE_COLUMNS, rows)
    print(f"wrote {out / cfg.output.compare_csv}; violation rate {report.violation_rate:.4f}; exit {code}")
    return code


def cmd_verify_decomposition(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out_dir, threads=args.threads)
    system = cfg.build_system()
    vcfg = cfg.verify
    npts = vcfg.get("points", 10)
    samples = vcfg.get("samples", 1000)
    tol = vcfg.get("tolerance", 1e-10)
    bump = vcfg.get("A_perturbation", 0.0)
    rng = np.random.default_rng(cfg.seed)
    pts = [cfg.x0_mean] + list(rng.multivariate_normal(cfg.x0_mean, cfg.P0, size=npts - 1, method="eigh"))
    u = np.zeros(system.input_dim) if cfg.inputs is None else cfg.inputs[0]
    results = []
    ok = True
    for p, x in enumerate(pts):
        dyn = decompose_dynamics(system, x, u)
        if not dyn.is_linear:
            dyn = replace(dyn, box=cfg.filter.dynamics_qc.make_box(dyn.C.shape[0]))
        if bump:
            dyn = replace(dyn, A=dyn.A + bump)
        meas = decompose_measurement(system, x)
        if not meas.is_linear:
            meas = replace(meas, box=cfg.filter.measurement_qc.make_box(meas.C.shape[0]))
        for label, d in (("dynamics", dyn), ("measurement", meas)):
            rep = verify_decomposition(system, d, x, u, samples, rng_seed=p, tol=tol, raise_on_failure=False)
            ok &= rep.passed
            results.append(dict(point=x, part=label, **rep.to_dict()))
    code = EXIT_OK if ok else EXIT_VIOLATION
    write_json(Path(cfg.output.dir) / cfg.output.verify_report,
               dict(system=cfg.system_id, results=results, passed=ok, exit_code=code))
    worst = max(r["max_scaled_residual"] for r in results)
    print(f"{len(results)} checks, worst scaled residual {worst:.3e}; exit {code}")
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="ekfbound", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads for per-entry SDPs")
    common.add_argument("--out-dir", default=None, help="override the output directory")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (
        ("run", cmd_run, "propagate certified intervals and write records"),
        ("verify-decomposition", cmd_verify_decomposition, "check decomposition exactness"),
        ("compare", cmd_compare, "compare nominal EKF, interval bounds and Monte Carlo"),
    ):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("config")
        sp.set_defaults(func=fn)
    # global flags are also accepted before the subcommand
    for a in common._actions:
        p._add_action(a)
    return p


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("EKFBOUND_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DecompositionInvalidError as exc:
        print(f"decomposition error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except EkfBoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
