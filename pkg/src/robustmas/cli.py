"""Command-line interface.

Exit status: 0 success or verification pass, 1 usage or input error,
2 verification failure, 3 LMI not certified feasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from . import __version__
from .analysis import verify_attenuation, verify_stabilization
from .lmi import InfeasibleStartError
from .problemfile import ProblemError, ReportFile, load_problem
from .simulate import sample_uncertainty, simulate_ct, simulate_dt
from .synthesis import (
    Controller,
    SynthesisError,
    max_delta,
    synth_ct,
    synth_ct_hinf,
    synth_dt,
    synth_dt_hinf,
)

log = logging.getLogger("robustmas")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAIL = 2
EXIT_INFEASIBLE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", required=True, help="problem JSON file (or example1.json / example2.json)")
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the problem file)")
    p.add_argument("--tol", type=float, default=0.0, help="multiplicative tolerance on norm bounds")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustmas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a robust stabilizing gain")
    _common(p)
    p.add_argument("--kappa", type=float, help="eigenvalue radius for discrete synthesis")

    p = sub.add_parser("synth-hinf", help="synthesize a robust H-infinity gain")
    _common(p)
    p.add_argument("--kappa", type=float)

    for name in ("verify", "verify-hinf"):
        p = sub.add_parser(name, help="check a given gain")
        _common(p)
        p.add_argument("--gain", required=True, help="row-major gain entries separated by spaces")
        p.add_argument("--c", type=float, help="coupling strength (continuous problems)")
        if name == "verify-hinf":
            p.add_argument("--eps", type=float, required=True, help="scaling of the uncertainty channel")

    p = sub.add_parser("maxdelta", help="largest certified uncertainty bound")
    _common(p)
    p.add_argument("--kappa", type=float)
    p.add_argument("--cap", type=float, default=1e6)
    p.add_argument("--rtol", type=float, default=1e-3, help="relative bisection width")

    p = sub.add_parser("simulate", help="simulate the closed loop and write a CSV trajectory")
    _common(p)
    p.add_argument("--gain", help="gain to simulate (synthesized when omitted)")
    p.add_argument("--c", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--summary", help="path for the JSON summary (stdout when omitted)")
    return parser


def parse_gain(text: str, m: int, n: int) -> np.ndarray:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"--gain must contain numbers: {exc}") from exc
    if len(values) != m * n:
        raise UsageError(f"--gain needs {m * n} entries for a {m}x{n} gain, got {len(values)}")
    return np.array(values).reshape(m, n)


def _given_controller(args, problem, model, network) -> Controller:
    k = parse_gain(args.gain, model.m, model.n)
    if model.mode == "continuous":
        if args.c is None:
            raise UsageError("--c is required for continuous problems")
        return Controller(k, "continuous", network.pins, args.c)
    return Controller(k, "discrete", network.pins)


def controller_dict(ctrl: Controller) -> dict:
    out = {"K": ctrl.K.tolist(), "mode": ctrl.mode, "pins": ctrl.pins.as_mapping()}
    if ctrl.coupling_c is not None:
        out["c"] = ctrl.coupling_c
    if ctrl.kappa is not None:
        out["kappa"] = ctrl.kappa
    cert = ctrl.certificate
    if cert is not None:
        out["certificate"] = {cert.name: cert.matrix.tolist(), "tau": cert.tau, "margin": cert.margin}
        if cert.eps is not None:
            out["certificate"]["eps"] = cert.eps
        if cert.W is not None:
            out["certificate"]["W"] = cert.W.tolist()
    return out


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _kappa(args, problem):
    return args.kappa if getattr(args, "kappa", None) is not None else problem.kappa


def _synthesize(args, problem, model, network, hinf: bool) -> Controller:
    if model.mode == "continuous":
        return (synth_ct_hinf if hinf else synth_ct)(model, network)
    return (synth_dt_hinf if hinf else synth_dt)(model, network, _kappa(args, problem))


def _run(args, argv, timings) -> tuple[int, ReportFile | None]:
    t0 = time.perf_counter()
    problem = load_problem(args.problem)
    model, network = problem.model(), problem.network()
    timings["load"] = time.perf_counter() - t0
    report = ReportFile(list(argv), problem.digest(), __version__, "ok", {}, timings)
    body = report.body
    body["mode"] = problem.mode
    body["delta"] = problem.delta
    cmd = args.command

    if cmd in ("synth", "synth-hinf"):
        hinf = cmd == "synth-hinf"
        t0 = time.perf_counter()
        try:
            ctrl = _synthesize(args, problem, model, network, hinf)
        except SynthesisError as exc:
            timings["synthesis"] = time.perf_counter() - t0
            report.status = "infeasible"
            body["error"] = str(exc)
            body["solver"] = {"status": exc.result.status, "phase1_value": exc.result.phase1_value,
                              "reason": exc.result.diagnostics.get("reason")} if exc.result else None
            return EXIT_INFEASIBLE, report
        timings["synthesis"] = time.perf_counter() - t0
        body["controller"] = controller_dict(ctrl)
        if model.mode == "continuous":
            body["lambda_min"] = network.lambda_min()
        t0 = time.perf_counter()
        rep = (verify_attenuation(model, network, ctrl, tolerance=args.tol) if hinf
               else verify_stabilization(model, network, ctrl, tolerance=args.tol))
        timings["verification"] = time.perf_counter() - t0
        return _finish_verification(report, rep)

    if cmd in ("verify", "verify-hinf"):
        ctrl = _given_controller(args, problem, model, network)
        body["controller"] = controller_dict(ctrl)
        t0 = time.perf_counter()
        if cmd == "verify-hinf":
            if not model.has_disturbance:
                raise UsageError("verify-hinf needs B2, C and gamma in the problem")
            rep = verify_attenuation(model, network, ctrl, eps=args.eps, tolerance=args.tol)
        else:
            rep = verify_stabilization(model, network, ctrl, tolerance=args.tol)
        timings["verification"] = time.perf_counter() - t0
        return _finish_verification(report, rep)

    if cmd == "maxdelta":
        t0 = time.perf_counter()
        try:
            res = max_delta(model, network, _kappa(args, problem) if model.mode == "discrete" else None,
                            tol=args.rtol, cap=args.cap)
        except InfeasibleStartError as exc:
            report.status = "infeasible"
            body["error"] = str(exc)
            return EXIT_INFEASIBLE, report
        timings["search"] = time.perf_counter() - t0
        body["delta_max"] = res.value
        body["unbounded"] = res.unbounded
        body["infeasible_at"] = res.infeasible_at
        body["cap"] = res.cap
        body["history"] = [{"delta": d, "status": s, "phase1_value": v} for d, s, v in res.history]
        return EXIT_OK, report

    if cmd == "simulate":
        return _simulate(args, problem, model, network, report)
    raise UsageError(f"unknown command {cmd}")


def _finish_verification(report: ReportFile, rep) -> tuple[int, ReportFile]:
    report.body["verification"] = {
        "kind": rep.kind,
        "tolerance": rep.tolerance,
        "verdict": rep.verdict,
        "rows": rep.as_rows(),
        **rep.details,
    }
    report.status = "pass" if rep.verdict else "fail"
    return (EXIT_OK if rep.verdict else EXIT_VERIFY_FAIL), report


def _simulate(args, problem, model, network, report) -> tuple[int, ReportFile]:
    if not args.out:
        raise UsageError("simulate needs --out for the CSV trajectory")
    sim = problem.simulation
    if sim is None:
        raise UsageError("problem file has no simulation block")
    seed = sim.seed if args.seed is None else args.seed
    timings = report.timings
    t0 = time.perf_counter()
    if args.gain is not None:
        ctrl = _given_controller(args, problem, model, network)
    else:
        try:
            ctrl = _synthesize(args, problem, model, network, hinf=False)
        except SynthesisError as exc:
            report.status = "infeasible"
            report.body["error"] = str(exc)
            return EXIT_INFEASIBLE, report
        if args.c is not None and model.mode == "continuous":
            ctrl = ctrl.with_coupling(args.c)
    timings["controller"] = time.perf_counter() - t0
    schedule = sample_uncertainty(model.delta, (model.D.shape[1], model.E.shape[0]), network.n, seed, sim.period)
    x0 = sim.initial_state(network.n * model.n, seed)
    t0 = time.perf_counter()
    if model.mode == "continuous":
        if sim.T is None:
            raise UsageError("continuous simulation needs simulation.T")
        traj = simulate_ct(model, network, ctrl, schedule, x0, sim.T, sim.h)
    else:
        if sim.steps is None:
            raise UsageError("discrete simulation needs simulation.steps")
        traj = simulate_dt(model, network, ctrl, schedule, x0, sim.steps)
    timings["simulation"] = time.perf_counter() - t0
    traj.write_csv(args.out)
    report.body.update({
        "controller": controller_dict(ctrl),
        "seed": seed,
        "csv": args.out,
        "samples": int(traj.times.size),
        "final_time": float(traj.times[-1]),
        "decay_ratio": traj.decay_ratio(),
    })
    return EXIT_OK, report


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.tol < 0 or not math.isfinite(args.tol):
        parser.error("--tol must be a nonnegative number")
    timings: dict = {}
    try:
        code, report = _run(args, argv, timings)
    except (ProblemError, UsageError, FileNotFoundError) as exc:
        print(f"robustmas: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"robustmas: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = report.to_json()
    if args.command == "simulate":
        _emit(text, args.summary)
    else:
        _emit(text, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
