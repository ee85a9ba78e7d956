"""Command-line entry point: ``rattleback <command> [flags]``.

Every command writes its outputs and a ``manifest.json`` into
``<runs>/<timestamp>-<command>/``.  Exit status is 0 on success, 2 for
invalid input, 3 for numerical failure, 1 when ``report`` finds a damaged run.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import ecmap, heteroclinic as het, lax, stabilize as stab
from .errors import (BasinViolation, NonIntegerLambda, NumericalError, ParamMissing,
                     SingularPlane, ValidationError, WrongStratum)
from .integrate import IntegratorConfig, Method, integrate, measure_small_period, read_trajectory_csv, write_trajectory_csv
from .model import ModelParams, classify_equilibrium, equilibria, rhs
from .plot import PlotSpec, Projection, Series, emit_svg
from .runs import RunDir, verify_manifest

EXIT_OK, EXIT_DAMAGED, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValidationError):
    def __init__(self, flag: str, reason: str):
        super().__init__(f"{flag}: {reason}")
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# parsing helpers ------------------------------------------------------------

def _triple(text: str) -> list[float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3 or not all(math.isfinite(v) for v in parts):
        raise argparse.ArgumentTypeError(f"expected three finite numbers x,y,z, got {text!r}")
    return parts


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {text!r}")
    return v


def _positive(text: str) -> float:
    v = _finite(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [_finite(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _need(args, dest: str, flag: str):
    v = getattr(args, dest)
    if v is None:
        raise UsageError(flag, "is required")
    return v


def _params(args, integer: bool = True) -> ModelParams:
    lam = _need(args, "lam", "--lambda")
    try:
        p = ModelParams(lam)
    except ValueError as exc:
        raise UsageError("--lambda", str(exc)) from None
    if integer and not p.lambda_is_integer:
        raise UsageError("--lambda", f"this command needs an integer lambda >= 2, got {lam:g}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _g6(v) -> str:
    return format(float(v), ".6g")


def _run(args, command: str, params: dict) -> RunDir:
    return RunDir(command, params, root=args.out)


def _done(run: RunDir) -> None:
    run.finalize()
    print(f"run directory: {run.dir}")


# commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    p = _params(args, integer=False)
    s0 = _need(args, "from_", "--from")
    cfg = IntegratorConfig(Method(args.method), step=args.dt, t_end=args.t_end, record_every=args.record_every)
    traj = integrate(np.array(s0), rhs, cfg, p)
    run = _run(args, "simulate", {"lambda": p.lam, "from": s0, "t_end": args.t_end, "dt": args.dt,
                                  "method": args.method, "record_every": args.record_every})
    write_trajectory_csv(run.path("trajectory.csv"), traj, p)
    emit_svg(PlotSpec(Projection(args.projection), [Series("trajectory", traj.states)]),
             run.path("trajectory.svg"))
    summary = {"n_points": len(traj), "final_state": traj.final.tolist(),
               "drift_c": traj.drift_C, "drift_h": traj.drift_H}
    _write_json(run.path("summary.json"), summary)
    print(f"points {len(traj)}  drift_C {_g6(traj.drift_C)}"
          + (f"  drift_H {_g6(traj.drift_H)}" if traj.drift_H is not None else ""))
    _done(run)
    return EXIT_OK


def cmd_equilibria(args) -> int:
    p = _params(args)
    Ms = _need(args, "M", "--M")
    out = []
    for e in equilibria(Ms, p):
        rep = classify_equilibrium(e, p)
        rec = {"kind": e.kind.value, "M": e.M, "point": e.point.tolist(), "verdict": rep.verdict.value,
               "spectrum": [[float(z.real), float(z.imag)] for z in rep.spectrum]}
        if rep.arnold is not None:
            rec["arnold"] = {"mu": rep.arnold.mu, "restricted_hessian": rep.arnold.restricted_hessian.tolist(),
                             "positive_definite": rep.arnold.positive_definite}
        out.append(rec)
    run = _run(args, "equilibria", {"lambda": p.lam, "M": Ms})
    _write_json(run.path("equilibria.json"), out)
    for rec in out:
        print(f"{rec['kind']:<12} M={_g6(rec['M']):<8} {rec['verdict']}")
    _done(run)
    return EXIT_OK


def cmd_classify(args) -> int:
    p = _params(args)
    h, c = _need(args, "h", "--h"), _need(args, "c", "--c")
    st = ecmap.classify_value(ecmap.ECValue(h, c), p)
    rec = {"h": h, "c": c, "lambda": p.n, "stratum": st.value,
           "fiber_topology": ecmap.fiber_topology(st).value}
    run = _run(args, "classify", {"lambda": p.n, "h": h, "c": c})
    _write_json(run.path("classify.json"), rec)
    print(json.dumps(rec, sort_keys=True))
    _done(run)
    return EXIT_OK


def cmd_fiber(args) -> int:
    p = _params(args)
    h, c = _need(args, "h", "--h"), _need(args, "c", "--c")
    v = ecmap.ECValue(h, c)
    st = ecmap.classify_value(v, p)
    if st not in (ecmap.Stratum.SIGMA_P_MINUS, ecmap.Stratum.SIGMA_P_PLUS):
        raise UsageError("--h", f"(h, c) lies in {st.value}; only periodic strata are traced")
    trace = ecmap.trace_fiber(v, p, step=args.step)
    run = _run(args, "fiber", {"lambda": p.n, "h": h, "c": c, "step": args.step})
    ecmap.write_fiber_csv(run.path("fiber.csv"), trace)
    series = [Series(f"component {i}", comp, closed=True) for i, comp in enumerate(trace.components)]
    emit_svg(PlotSpec(Projection(args.projection), series), run.path("fiber.svg"))
    summary = {"stratum": st.value, "components": len(trace.components),
               "vertices": [len(c_) for c_ in trace.components], "residual": trace.residual}
    _write_json(run.path("summary.json"), summary)
    print(f"components {len(trace.components)}  residual {_g6(trace.residual)}")
    _done(run)
    return EXIT_OK


def cmd_heteroclinic(args) -> int:
    p = _params(args)
    M = _need(args, "M", "--M")
    if len(M) != 1 or M[0] == 0:
        raise UsageError("--M", "needs a single nonzero value")
    hp = het.HetParams(M[0], args.k)
    branches = list(het.HetBranch) if args.branch == "all" else [het.HetBranch(args.branch)]
    span = args.t_span / abs(hp.M)
    t = np.linspace(-span, span, args.samples)
    run = _run(args, "heteroclinic", {"lambda": p.n, "M": hp.M, "k": hp.k, "branch": args.branch,
                                      "t_span": args.t_span, "samples": args.samples})
    summary, series = {}, []
    for b in branches:
        het.write_heteroclinic_csv(run.path(f"heteroclinic_{b.value}.csv"), b, hp, p, t)
        dH, dC = het.het_fiber_check(b, hp, p, t)
        summary[b.value] = {"residual": het.het_residual(b, hp, p, t), "max_abs_h": dH, "max_c_deviation": dC}
        series.append(Series(b.value, het.het_state(b, hp, p, t)))
    emit_svg(PlotSpec(Projection(args.projection), series), run.path("heteroclinic.svg"))
    _write_json(run.path("summary.json"), summary)
    for name, rec in summary.items():
        print(f"{name:<10} residual {_g6(rec['residual'])}")
    _done(run)
    return EXIT_OK


def cmd_lax_check(args) -> int:
    p = _params(args)
    if args.trajectory:
        traj = read_trajectory_csv(args.trajectory)
    else:
        s0 = _need(args, "from_", "--from")
        traj = integrate(np.array(s0), rhs, IntegratorConfig(Method.RK4, step=args.dt, t_end=args.t_end), p)
    s = traj.states
    scaled = lax.lax_residual(s, p) / (1.0 + np.linalg.norm(s, axis=1) ** 3)
    trace_L2, eig = lax.isospectral_invariants(s, p)
    summary = {"max_scaled_residual": float(np.max(scaled)),
               "isospectral_drift": float(np.max(np.abs(eig - eig[0]))),
               "trace_l2_drift": float(np.max(np.abs(trace_L2 - trace_L2[0]))),
               "n_states": int(len(s))}
    run = _run(args, "lax-check", {"lambda": p.n, "trajectory": args.trajectory, "from": args.from_,
                                   "t_end": args.t_end, "dt": args.dt})
    _write_json(run.path("lax.json"), summary)
    print(f"max residual {_g6(summary['max_scaled_residual'])}  isospectral drift {_g6(summary['isospectral_drift'])}")
    _done(run)
    return EXIT_OK


def _spec_from_args(args) -> stab.PerturbationSpec:
    kind = stab.PerturbationKind(_need(args, "kind", "--kind"))
    eps = args.epsilon if args.epsilon is not None else stab.DEFAULT_EPSILON[kind]
    M = args.M[0] if args.M else None
    if kind is stab.PerturbationKind.PERIODIC_ORBIT:
        _need(args, "h", "--h")
        _need(args, "c", "--c")
    else:
        if M is None:
            raise UsageError("--M", f"is required for --kind {kind.value}")
    return stab.PerturbationSpec(kind, eps, M=M, h=args.h, c=args.c)


def cmd_stabilize(args) -> int:
    p = _params(args)
    seed = _need(args, "seed", "--seed")
    spec = _spec_from_args(args)
    rng = np.random.default_rng(seed)
    s0 = np.array(args.from_) if args.from_ is not None else stab.sample_initial_state(spec, p, rng)
    cfg = IntegratorConfig(Method(args.method), step=args.dt, t_end=args.t_end)
    rec = stab.run_convergence(spec, s0, cfg, p)
    run = _run(args, "stabilize", {"lambda": p.n, "kind": spec.kind.value, "epsilon": spec.epsilon,
                                   "M": spec.M, "h": spec.h, "c": spec.c, "t_end": args.t_end,
                                   "seed": seed, "from": args.from_, "method": args.method})
    stab.write_convergence_csv(run.path("convergence.csv"), rec)
    summary = {"final_distance": rec.final_distance, "monotone_violations": rec.monotone_violations(),
               "casimir_drift": rec.casimir_drift, "initial_state": rec.initial_state.tolist(),
               "final_state": rec.final_state.tolist()}
    _write_json(run.path("summary.json"), summary)
    print(f"final distance {_g6(rec.final_distance)}  monotone violations {summary['monotone_violations']}"
          f"  casimir drift {_g6(rec.casimir_drift)}")
    _done(run)
    return EXIT_OK


def _period_task(task):
    lam, M, amp = task
    m = measure_small_period(M, ModelParams(lam), amplitude=amp)
    return [lam, M, amp, m.measured_period, m.predicted_limit, m.deviation]


def _stabilize_task(task):
    lam, kind, M, h, c, eps, seed, t_end = task
    p = ModelParams(lam)
    spec = stab.PerturbationSpec(kind, eps, M=M, h=h, c=c)
    s0 = stab.sample_initial_state(spec, p, np.random.default_rng(seed))
    rec = stab.run_convergence(spec, s0, IntegratorConfig(Method.RK45, t_end=t_end), p)
    return [lam, eps, seed, rec.final_distance, rec.monotone_violations(), rec.casimir_drift]


def cmd_sweep(args) -> int:
    lams = _need(args, "lam_list", "--lambda")
    for lam in lams:
        if not ModelParams(lam).lambda_is_integer:
            raise UsageError("--lambda", f"needs integers >= 2, got {lam:g}")
    if args.grid == "period":
        Ms = _need(args, "M", "--M")
        amps = args.amplitude or [1e-3]
        tasks = [(lam, M, a) for lam in lams for M in Ms for a in amps]
        header, worker = ["lambda", "M", "amplitude", "measured_period", "predicted_limit", "deviation"], _period_task
    else:
        seeds = _need(args, "seeds", "--seeds")
        spec = _spec_from_args(args)
        eps_list = args.epsilons or [spec.epsilon]
        tasks = [(lam, spec.kind.value, spec.M, spec.h, spec.c, e, s, args.t_end)
                 for lam in lams for e in eps_list for s in seeds]
        header = ["lambda", "epsilon", "seed", "final_distance", "monotone_violations", "casimir_drift"]
        worker = _stabilize_task
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(worker, tasks))
    params = {k: v for k, v in vars(args).items() if k not in ("func", "out", "config")}
    run = _run(args, "sweep", params)
    with open(run.path("sweep.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, str)) else format(float(v), ".17g") for v in row) + "\n")
    print(f"{len(rows)} tasks")
    _done(run)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(_need(args, "run", "--run"))
    if not run_dir.is_dir():
        raise UsageError("--run", f"no such directory {run_dir}")
    problems = verify_manifest(run_dir)
    for msg in problems:
        print(msg)
    if problems:
        return EXIT_DAMAGED
    print("all checksums match")
    return EXIT_OK


# parser -------------------------------------------------------------------

def _add_common(sp, lam_list: bool = False):
    sp.add_argument("--config", help="key=value file; flags override it")
    sp.add_argument("--out", help="runs root directory (default $RATTLEBACK_RUNS_DIR or ./runs)")
    if lam_list:
        sp.add_argument("--lambda", dest="lam_list", type=_floats)
    else:
        sp.add_argument("--lambda", dest="lam", type=_finite)


def _add_kind(sp):
    sp.add_argument("--kind", choices=[k.value for k in stab.PerturbationKind])
    sp.add_argument("--M", type=_floats)
    sp.add_argument("--h", type=_finite)
    sp.add_argument("--c", type=_finite)
    sp.add_argument("--epsilon", type=_positive)
    sp.add_argument("--t-end", type=_positive, default=200.0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rattleback", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="integrate the rattleback field")
    _add_common(sp)
    sp.add_argument("--from", dest="from_", type=_triple)
    sp.add_argument("--t-end", type=_positive, default=10.0)
    sp.add_argument("--dt", type=_positive, default=1e-3)
    sp.add_argument("--method", choices=[m.value for m in Method], default="rk4")
    sp.add_argument("--record-every", type=int, default=1)
    sp.add_argument("--projection", choices=[q.value for q in Projection], default="XY")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("equilibria", help="list and classify equilibria")
    _add_common(sp)
    sp.add_argument("--M", type=_floats)
    sp.set_defaults(func=cmd_equilibria)

    sp = sub.add_parser("classify", help="stratum and fiber topology of (h, c)")
    _add_common(sp)
    sp.add_argument("--h", type=_finite)
    sp.add_argument("--c", type=_finite)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("fiber", help="trace the fiber H = h, C = c")
    _add_common(sp)
    sp.add_argument("--h", type=_finite)
    sp.add_argument("--c", type=_finite)
    sp.add_argument("--step", type=_positive, default=1e-3)
    sp.add_argument("--projection", choices=[q.value for q in Projection], default="XY")
    sp.set_defaults(func=cmd_fiber)

    sp = sub.add_parser("heteroclinic", help="sample the closed-form heteroclinic branches")
    _add_common(sp)
    sp.add_argument("--M", type=_floats)
    sp.add_argument("--k", type=_finite, default=0.0)
    sp.add_argument("--branch", choices=["all"] + [b.value for b in het.HetBranch], default="all")
    sp.add_argument("--t-span", type=_positive, default=10.0, help="samples t in [-span/|M|, span/|M|]")
    sp.add_argument("--samples", type=int, default=401)
    sp.add_argument("--projection", choices=[q.value for q in Projection], default="YZ")
    sp.set_defaults(func=cmd_heteroclinic)

    sp = sub.add_parser("lax-check", help="Lax residual and isospectral drift along a trajectory")
    _add_common(sp)
    sp.add_argument("--trajectory", help="trajectory CSV written by simulate")
    sp.add_argument("--from", dest="from_", type=_triple)
    sp.add_argument("--t-end", type=_positive, default=100.0)
    sp.add_argument("--dt", type=_positive, default=1e-3)
    sp.set_defaults(func=cmd_lax_check)

    sp = sub.add_parser("stabilize", help="run a stabilizing perturbation")
    _add_common(sp)
    _add_kind(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--from", dest="from_", type=_triple)
    sp.add_argument("--dt", type=_positive, default=1e-3)
    sp.add_argument("--method", choices=[m.value for m in Method], default="rk45")
    sp.set_defaults(func=cmd_stabilize)

    sp = sub.add_parser("sweep", help="parallel parameter grids")
    _add_common(sp, lam_list=True)
    sp.add_argument("--grid", choices=["period", "stabilize"], default="period")
    _add_kind(sp)
    sp.add_argument("--amplitude", type=_floats)
    sp.add_argument("--epsilons", type=_floats)
    sp.add_argument("--seeds", type=_ints)
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="verify a run directory against its manifest")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--run")
    sp.set_defaults(func=cmd_report)
    return ap


def _version() -> str:
    from . import __version__
    return __version__


def _read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError("--config", f"cannot read {path}: {exc.strerror}") from None
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError("--config", f"{path}:{no}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install config-file values as parser defaults so explicit flags win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices.get(known.command)
    if sp is None:
        return
    by_flag = {opt.lstrip("-"): act for act in sp._actions for opt in act.option_strings}
    defaults = {}
    for key, value in _read_config(known.config).items():
        act = by_flag.get(key) or by_flag.get(key.replace("_", "-"))
        if act is None or act.dest in ("help", "config"):
            raise UsageError("--config", f"unknown key {key!r}")
        defaults[act.dest] = value  # strings are converted by the flag's type
    sp.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"rattleback: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonIntegerLambda as exc:
        print(f"rattleback: error: --lambda: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParamMissing, BasinViolation, WrongStratum, SingularPlane) as exc:
        flag = {BasinViolation: "--from/--seed", WrongStratum: "--h/--c"}.get(type(exc), "input")
        print(f"rattleback: error: {flag}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ValueError) as exc:
        print(f"rattleback: error: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError) as exc:
        print(f"rattleback: error: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
