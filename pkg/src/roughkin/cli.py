"""Command line entry point: ``roughkin <subcommand> ...``.

Every subcommand accepts ``--scenario FILE`` and repeated ``--set key=value``
overrides.  The exit code is 0 only when every invariant checked by the
subcommand holds.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .characteristics import composition_defect, forward_flow, inverse_flow, sign_preservation_check
from .coefficients import CoefficientError, assemble_characteristic_fields
from .harness import (
    Scenario,
    ScenarioError,
    build_driver,
    convergence_study,
    ensemble_contraction,
    jacobian_defect,
    run_scenario,
    validate_scenario,
)
from .kinetic import KineticError
from .reference import exact_riemann_burgers, godunov_solve
from .rough_path import RoughPathError, TimeGrid, check_defects, lift_smooth_path

TOL_JAC = 1e-3
TOL_INV = 1e-3


def _scenario(args) -> Scenario:
    if args.scenario:
        return Scenario.from_file(args.scenario, args.set)
    return Scenario.from_text("", args.set)


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def cmd_lift(args) -> int:
    t, vals = io.read_path_csv(args.input)
    r = args.resolution
    if (len(t) - 1) % r:
        raise RoughPathError(f"{len(t) - 1} sample intervals are not a multiple of resolution {r}")
    if np.ptp(np.diff(t)) > 1e-9 * max(1.0, abs(t[-1])):
        raise RoughPathError("sample times must be uniformly spaced")
    grid = TimeGrid(float(t[0]), float(t[-1]), (len(t) - 1) // r)
    rp = lift_smooth_path(vals, args.p, grid)
    io.write_rough_path(args.output, rp)
    d = check_defects(rp)
    print(
        f"lift dim={rp.dim} n_steps={rp.n_steps} chen_defect={d.chen_defect:.3e} "
        f"shuffle_defect={d.shuffle_defect:.3e} holder_norm={d.holder_norm:.4g} {_status(d.ok())}"
    )
    return 0 if d.ok() else 1


def cmd_flow(args) -> int:
    scn = _scenario(args)
    rp = io.read_rough_path(args.path, args.t0, args.t1)
    model = scn.model_obj()
    forced, unforced = assemble_characteristic_fields(model)
    if rp.dim == unforced.n_columns:
        fields, kind = unforced, "unforced"
    elif rp.dim == forced.n_columns:
        fields, kind = forced, "forced"
    else:
        raise ScenarioError(f"dump has {rp.dim} components; model {model.name} needs "
                            f"{unforced.n_columns} or {forced.n_columns}")
    s = rp.grid.t0 if args.s is None else args.s
    t = rp.grid.t1 if args.t is None else args.t
    g = scn.kinetic_grid()
    X, XI = g.mesh()
    flow_fn = inverse_flow if args.inverse else forward_flow
    fl = flow_fn(fields, rp, s, t, X, XI, True, scn.max_increment)
    io.write_csv(
        args.output, ("x", "xi", "phi_x", "phi_xi", "jac"),
        zip(X.ravel(), XI.ravel(), fl.maps[..., 0].ravel(), fl.maps[..., 1].ravel(), fl.jac.ravel()),
    )
    jd = fl.jacobian_defect()
    cd = composition_defect(fields, rp, s, t, X, XI, scn.max_increment)
    sv = sign_preservation_check(fl)
    ok = cd <= TOL_INV and sv == 0.0 and (kind == "forced" or jd <= TOL_JAC)
    print(
        f"flow {kind} s={s} t={t} jac_defect={jd:.3e} tol_jac={TOL_JAC:g} "
        f"composition_defect={cd:.3e} tol_inv={TOL_INV:g} sign_violation={sv:.3e} {_status(ok)}"
    )
    return 0 if ok else 1


def cmd_solve(args) -> int:
    scn = _scenario(args)
    res = run_scenario(scn, args.out)
    for k, v in res.summary.items():
        print(f"{k} = {v}")
    print(f"solve {_status(res.ok)} ({len(res.files)} files in {args.out})")
    return 0 if res.ok else 1


def cmd_ensemble(args) -> int:
    scn = _scenario(args)
    er = ensemble_contraction(scn)
    ex = er.excess()
    io.write_csv(
        args.output, ("t", "mean", "stderr", "excess", "n_paths"),
        zip(er.times, er.mean, er.stderr, ex, [scn.n_paths] * len(ex)),
    )
    print(
        f"ensemble n_paths={scn.n_paths} metric0={er.mean[0]:.6g} metricT={er.mean[-1]:.6g} "
        f"max_excess={np.max(ex[1:], initial=-np.inf):.3e} {_status(er.ok)}"
    )
    return 0 if er.ok else 1


def cmd_validate(args) -> int:
    scn = _scenario(args)
    checks = []
    rep = validate_scenario(scn)
    checks.append(("coefficients null_condition_defect", rep["null_condition_defect"], rep["null_condition_defect"] <= 1e-9))
    checks.append(("coefficients derivative_defect", rep["derivative_defect"], rep["derivative_defect"] <= 1e-6))
    rp = build_driver(scn)
    d = check_defects(rp)
    checks.append(("driver chen_defect", d.chen_defect, d.chen_defect <= d.tolerance()))
    checks.append(("driver shuffle_defect", d.shuffle_defect, d.shuffle_defect <= d.tolerance()))
    jd = jacobian_defect(scn, rp)
    checks.append(("unforced jac_defect", jd, jd <= TOL_JAC))
    model = scn.model_obj()
    forced, _ = assemble_characteristic_fields(model)
    g = scn.kinetic_grid()
    n = 16
    X, XI = np.meshgrid((np.arange(n) + 0.5) * g.torus / n, np.linspace(-g.L, g.L, n), indexing="ij")
    cd = composition_defect(forced, rp, rp.grid.t0, rp.grid.t1, X, XI, scn.max_increment)
    checks.append(("forced composition_defect", cd, cd <= TOL_INV))
    fl = forward_flow(forced, rp, rp.grid.t0, rp.grid.t1, X, XI, False, scn.max_increment)
    sv = sign_preservation_check(fl)
    checks.append(("forced sign_violation", sv, sv == 0.0))
    # Godunov oracle against the exact Riemann fan on a window away from the wrap
    nx = 512
    dx = 1.0 / nx
    x = (np.arange(nx) + 0.5) * dx
    ug = godunov_solve(np.where(x < 0.5, 1.0, 0.0), 0.25, dx)
    ue = np.where(x < 0.25, x / 0.25, exact_riemann_burgers(1.0, 0.0, x - 0.5, 0.25))
    gerr = float(np.abs(ug - ue).sum() * dx)
    checks.append(("godunov_vs_exact_riemann L1", gerr, gerr <= 2 * np.sqrt(dx)))
    for name, val, ok in checks:
        print(f"{name} = {val:.3e} {_status(ok)}")
    ok = all(c[2] for c in checks)
    print(f"validate {_status(ok)}")
    return 0 if ok else 1


def cmd_study(args) -> int:
    scn = _scenario(args)
    res = convergence_study(scn)
    orders = list(res.orders) + [float("nan")]
    io.write_csv(
        args.output, ("n_x", "dx", "eps", "dt", "error", "order", "seconds"),
        ([r["n_x"], r["dx"], r["eps"], r["dt"], r["error"], o, r["seconds"]] for r, o in zip(res.rows, orders)),
    )
    for r in res.rows:
        print(f"n_x={r['n_x']} eps={r['eps']:.4g} dt={r['dt']:.4g} L1_error={r['error']:.4e}")
    ok = res.strictly_decreasing
    print(f"study strictly_decreasing={ok} {_status(ok)}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughkin", description="Rough kinetic BGK solver")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", type=Path, default=None, help="key = value scenario file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scenario key (repeatable)")

    sp = sub.add_parser("lift", help="lift a sampled path (CSV t,components) to an RKRP1 dump")
    common(sp)
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--output", type=Path, required=True)
    sp.add_argument("--p", type=float, default=2.5)
    sp.add_argument("--resolution", type=int, default=4, help="samples per rough-path interval")
    sp.set_defaults(func=cmd_lift)

    sp = sub.add_parser("flow", help="characteristic flow of a dumped driver on the scenario grid")
    common(sp)
    sp.add_argument("--path", type=Path, required=True, help="RKRP1 dump")
    sp.add_argument("--t0", type=float, default=0.0, help="start of the dump's time interval")
    sp.add_argument("--t1", type=float, default=1.0, help="end of the dump's time interval")
    sp.add_argument("--s", type=float, default=None)
    sp.add_argument("--t", type=float, default=None)
    sp.add_argument("--inverse", action="store_true", help="evaluate the inverse flow")
    sp.add_argument("--output", type=Path, required=True)
    sp.set_defaults(func=cmd_flow)

    for name, fn, help_ in (
        ("solve", cmd_solve, "run one BGK solve and write CSV/dump outputs"),
        ("ensemble", cmd_ensemble, "coupled contraction ensemble over Brownian paths"),
        ("validate", cmd_validate, "coefficient, driver, flow and reference checks"),
        ("study", cmd_study, "refinement study against a reference solution"),
    ):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        if name == "solve":
            sp.add_argument("--out", type=Path, default=Path("out"))
        elif name in ("ensemble", "study"):
            sp.add_argument("--output", type=Path, default=Path(f"{name}.csv"))
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, RoughPathError, CoefficientError, KineticError, io.DumpFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
