"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 hypothesis failure (``--strict``,
or a vanishing coupling in single-control mode), 4 solver failure,
5 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .boundary import round_trip
from .carleman import check_alpha_gap, check_h0, check_h2, default_s
from .config import ConfigError, ExperimentConfig, json_schema, load_config
from .experiment import Experiment, build_experiment
from .fixedpoint import DataTooLargeError, FixedPointDivergence, solve_semilinear_null_control
from .hum import CouplingVanishesError, analyze_sweep, epsilon_sweep, minimize_j
from .solver import SolverError, StateTrajectory
from .verification import manufactured_error

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HYPOTHESIS = 3
EXIT_SOLVER = 4
EXIT_NONCONVERGENCE = 5

log = logging.getLogger("nlcontrol")


class Run:
    """Output directory plus manifest shared by every artifact of one command."""

    def __init__(self, exp: Experiment, out: Path, command: str):
        self.exp = exp
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        cfg = exp.config
        self.manifest = io.make_manifest(cfg.digest(), cfg.grid.n_interior, cfg.grid.n_steps,
                                         cfg.grid.T, command, cfg.seed)

    def path(self, name: str) -> Path:
        return self.out / name

    def json(self, name: str, payload: dict) -> None:
        io.write_json(self.path(name), payload, self.manifest)

    def table(self, name: str, rows) -> None:
        io.write_table(self.path(name), io.CSV_SCHEMAS[name], rows, self.manifest)

    def trajectory(self, traj: StateTrajectory, binary: bool = False) -> None:
        self.table("trajectory.csv", io.trajectory_rows(traj))
        if binary:
            g, tg = traj.grid, traj.time_grid
            io.write_binary(self.path("trajectory.bin"), np.stack([traj.y, traj.z]),
                            g.n_interior, tg.n_steps, tg.T, ["y", "z"], self.manifest)

    def control(self, nu) -> None:
        g, tg = self.exp.grid, self.exp.time_grid
        fields = ["nu_y"] if nu.z is None else ["nu_y", "nu_z"]
        io.write_binary(self.path("control.bin"), nu.as_array(), g.n_interior, tg.n_steps,
                        tg.T, fields, self.manifest)


def cmd_check(run: Run, strict: bool) -> int:
    exp, cfg = run.exp, run.exp.config
    car = cfg.carleman
    reports = [check_h0(k, exp.sigma_minus, exp.time_grid, car.refine) for k in exp.kernels]
    kbar = max(r.kbar for r in reports)
    if car.s is not None:
        s = car.s
    elif np.isfinite(kbar):
        s = default_s(exp.coeffs.a_max, exp.time_grid.T, kbar)
    else:
        s = default_s(exp.coeffs.a_max, exp.time_grid.T, 0.0)
        log.warning("Kbar is infinite; s sized without the kernel term")
    weights = exp.weights(s)
    gap = check_alpha_gap(weights)
    h2 = check_h2(exp.kernels[0], weights, car.deltabar, car.refine)
    worst = max(reports, key=lambda r: r.kbar)
    merged = worst.merge(h2)
    merged.pass_h0 = all(r.pass_h0 for r in reports)
    merged.argmax_t = h2.argmax_t if h2.h2_sup else worst.argmax_t
    passed = bool(merged.pass_h0 and merged.pass_h2 and gap.passed)
    run.json("check_report.json", {
        "hypotheses": merged.to_json(),
        "per_kernel_h0": [r.to_json() for r in reports],
        "alpha_gap": {"passed": gap.passed, "margin": gap.margin,
                      "sigma_margin": gap.sigma_margin},
        "kappa": weights.kappa, "s": s,
        "sigma_minus": weights.sigma_minus, "sigma_plus": weights.sigma_plus,
        "eta0": {"center": exp.profile.center,
                 "min_abs_derivative_outside": exp.profile.min_abs_derivative_outside()},
        "passed": passed,
    })
    run.table("weights.csv", weights.table_rows())
    print(f"H0 {'pass' if merged.pass_h0 else 'FAIL'}  H2 {'pass' if merged.pass_h2 else 'FAIL'}"
          f"  gap {'pass' if gap.passed else 'FAIL'}")
    return EXIT_HYPOTHESIS if strict and not passed else EXIT_OK


def _hum_problem(exp: Experiment, epsilon: float):
    cfg = exp.config
    prob = exp.problem()
    return prob.penalized(prob.linearized_at_zero(), epsilon, cfg.hum.tol, cfg.hum.max_iter)


def cmd_control_linear(run: Run) -> int:
    exp = run.exp
    res = minimize_j(_hum_problem(exp, exp.config.hum.epsilon))
    run.json("control_summary.json", {
        "epsilon": res.epsilon, "control_norm": res.control_norm,
        "terminal_norms": list(res.terminal_norms), "j_value": res.j_value,
        "cg_iterations": res.cg_iterations, "optimality_residual": res.optimality_residual,
        "converged": res.converged, "empirical_C": res.penalty_c,
    })
    run.table("cg_history.csv", enumerate(res.residual_history))
    run.control(res.nu)
    run.trajectory(res.trajectory, binary=True)
    print(f"|nu| = {res.control_norm:.6e}  |(y,z)(T)| = {res.trajectory.terminal_norm():.6e}"
          f"  CG iterations {res.cg_iterations}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGENCE


def cmd_sweep(run: Run, threads: int) -> int:
    exp = run.exp
    table = epsilon_sweep(_hum_problem(exp, exp.config.hum.epsilons[0]), exp.config.hum.epsilons,
                          threads)
    run.table("sweep.csv", table.records())
    failures = [{"epsilon": r.epsilon, "error": r.error} for r in table.rows if not r.ok]
    summary = {"rows": len(table.rows), "failures": failures, "fitted_C": None,
               "tail_ratio": None, "max_halving_ratio": None}
    try:
        an = analyze_sweep(table)
        summary.update(fitted_C=an.fitted_C, tail_ratio=an.tail_ratio,
                       max_halving_ratio=an.max_halving_ratio,
                       halving_ratios=list(an.halving_ratios), c_saturation=an.c_saturation,
                       bound_holds=an.bound_holds, gates_passed=an.passed())
    except ValueError as exc:
        log.error("sweep analysis skipped: %s", exc)
    run.json("sweep_summary.json", summary)
    for rec in table.records():
        print("eps={:.1e}  |nu|={:.6e}  |U(T)|^2={:.6e}  C={:.4e}  it={}".format(*rec))
    return EXIT_SOLVER if failures else EXIT_OK


def cmd_control_semilinear(run: Run) -> int:
    exp = run.exp
    try:
        res = solve_semilinear_null_control(exp.problem(), exp.fixed_point_config(),
                                            run.path("fixedpoint_log.jsonl.tmp"))
    except FixedPointDivergence as exc:
        log.error("%s", exc)
        _finish_log(run)
        run.json("fixedpoint_summary.json", {**exc.partial.summary(), "error": str(exc)})
        return EXIT_NONCONVERGENCE
    _finish_log(run)
    run.json("fixedpoint_summary.json", res.summary())
    run.control(res.nu)
    run.trajectory(res.validation.trajectory)
    print(f"outer iterations {res.iterations}  converged {res.converged}  "
          f"validation |(y,z)(T)| = {res.validation.terminal_norm:.6e}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGENCE


def _finish_log(run: Run) -> None:
    """Rewrite the raw iteration log with the manifest attached to every record."""
    tmp = run.path("fixedpoint_log.jsonl.tmp")
    if tmp.exists():
        records = [json.loads(line) for line in tmp.read_text().splitlines()]
        io.append_jsonl(run.path("fixedpoint_log.jsonl"), records, run.manifest)
        tmp.unlink()


def cmd_boundary(run: Run) -> int:
    exp, b = run.exp, run.exp.config.boundary
    controls, report, ext_run, traj = round_trip(
        exp.problem(), b.eps_ext, b.omega_bar, b.semilinear, b.epsilon, exp.fixed_point_config())
    run.table("boundary_controls.csv", zip(controls.t, controls.h1, controls.h2))
    run.json("boundary_report.json", {**report.to_json(), "extended_run": ext_run.details})
    run.trajectory(traj)
    print(f"round-trip relative L2(Q) error {report.relative_error:.3e}  "
          f"terminal norm {report.terminal_norm_round_trip:.6e}")
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    exp, sim = run.exp, run.exp.config.simulate
    prob = exp.problem()
    nu = None
    if sim.control == "hum":
        nu = minimize_j(_hum_problem(exp, exp.config.hum.epsilon)).nu
    if sim.semilinear:
        traj = prob.linear_system().forward_semilinear(prob.coupling, nu, prob.y0, prob.z0)
    else:
        traj = prob.linearized_at_zero().forward(nu, prob.y0, prob.z0)
    ref_err = None
    if sim.reference == "heat_mode":
        ref_err = _heat_reference_error(exp, traj)
    elif sim.reference == "manufactured":
        frozen = prob.linearized_at_zero().frozen
        consts = tuple(float(f[0, 0]) for f in (frozen.a, frozen.b, frozen.c, frozen.d))
        ref_err = manufactured_error(exp.grid.n_interior, exp.time_grid.n_steps, exp.coeffs,
                                     exp.kernels, consts, exp.time_grid.T).rel_error
    run.json("simulate_summary.json", {
        "terminal_norms": list(traj.terminal_norms()), "semilinear": sim.semilinear,
        "control": sim.control, "reference": sim.reference, "reference_error": ref_err,
    })
    run.trajectory(traj, binary=True)
    msg = f"|(y,z)(T)| = {traj.terminal_norm():.6e}"
    if ref_err is not None:
        msg += f"  relative reference error {ref_err:.3e}"
    print(msg)
    return EXIT_OK


def _heat_reference_error(exp: Experiment, traj: StateTrajectory) -> float:
    cfg = exp.config
    spec = cfg.initial_data.y0
    if (spec.kind != "sine" or cfg.initial_data.z0.kind != "zero" or cfg.coupling.name != "zero"
            or any(not k.is_zero for k in exp.kernels) or cfg.simulate.control != "none"
            or exp.coeffs.b1 != 0 or exp.coeffs.c1 != 0):
        raise ConfigError([("simulate.reference", None,
                            "heat_mode needs a sine y0, zero z0, no kernels, no coupling, "
                            "no drift or reaction in y and no control")])
    rate = exp.coeffs.a1 * (spec.mode * np.pi) ** 2
    exact = np.exp(-rate * exp.time_grid.T) * exp.y0
    return exp.grid.l2_norm(traj.y[-1] - exact) / exp.grid.l2_norm(exact)


COMMANDS = {
    "check": lambda run, args: cmd_check(run, args.strict),
    "control-linear": lambda run, args: cmd_control_linear(run),
    "sweep": lambda run, args: cmd_sweep(run, args.threads),
    "control-semilinear": lambda run, args: cmd_control_semilinear(run),
    "boundary": lambda run, args: cmd_boundary(run),
    "simulate": lambda run, args: cmd_simulate(run),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlcontrol", description="Null controls for coupled nonlocal parabolic systems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment file")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: output_dir from the config)")
        p.add_argument("--strict", action="store_true",
                       help="exit 3 when a hypothesis check fails")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="workers for sweep members")
    p = sub.add_parser("validate", help="check artifacts in a directory against their schemas")
    p.add_argument("directory", type=Path)
    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "schema":
        print(json.dumps(json_schema(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.command == "validate":
        problems = io.validate_output_dir(args.directory)
        for p in problems:
            print(p)
        return EXIT_OK if not problems else EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = ExperimentConfig.model_validate({**cfg.model_dump(), "seed": args.seed})
        exp = build_experiment(cfg)
        out = args.out if args.out is not None else Path(cfg.output_dir)
        return COMMANDS[args.command](Run(exp, out, args.command), args)
    except (ConfigError, DataTooLargeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CouplingVanishesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
