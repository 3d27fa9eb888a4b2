"""Command-line interface: ``quadsim <subcommand> ...``.

Exit status is 0 on success, 1 for usage or validation errors and 2 for
runtime failures such as a diverging simulation.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from importlib import resources
from pathlib import Path

from quadsim.config import ConfigError
from quadsim.control import AXES, ControllerGains, dump_gains, load_gains
from quadsim.estimation import (
    FitError,
    average_loop_time,
    fit_drag_coefficients,
    fit_propeller,
    fit_thrust_pwm,
    moi_from_pendulum,
    period_from_swings,
    read_bench_csv,
    read_swings_csv,
    read_yaw_csv,
    write_yaw_csv,
)
from quadsim.harness import DivergenceError, drag_sweep, load_scenario, run_scenario, write_telemetry
from quadsim.integrators import IntegrationError
from quadsim.model import STANDARD_GRAVITY, dump_params, load_params

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

SEED_ENV = "QUADSIM_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code is reserved for runtime errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def data_path(name: str) -> Path:
    return Path(str(resources.files("quadsim") / "data" / name))


def resolve_scenario(arg: str) -> Path:
    """A scenario file path, or the name of a shipped scenario such as ``hover``."""
    path = Path(arg)
    if path.exists():
        return path
    shipped = data_path(f"scenarios/{arg}.txt")
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"no scenario file {arg!r} (shipped: {', '.join(shipped_scenarios())})")


def shipped_scenarios() -> list[str]:
    return sorted(p.stem for p in data_path("scenarios").glob("*.txt"))


def resolve_seed(cli_seed: int | None, file_seed: int) -> int:
    """Seed precedence: command line, then environment, then scenario file."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return file_seed


def _fmt_time(value: float | None) -> str:
    return "not settled" if value is None else f"{value:.3f} s"


def cmd_simulate(args) -> int:
    spec = load_scenario(resolve_scenario(args.scenario))
    spec = dataclasses.replace(spec, seed=resolve_seed(args.seed, spec.seed))
    if args.integrator:
        spec = dataclasses.replace(spec, integrator=args.integrator)
    params, prop = load_params(args.params)
    gains = load_gains(args.gains)
    if args.plot and not args.out:
        raise UsageError("--plot needs --out (figures are written next to the CSV)")
    try:
        result = run_scenario(spec, params, gains, prop)
    except DivergenceError as exc:
        if args.out:
            write_telemetry(args.out, exc.telemetry)
            print(f"partial telemetry ({len(exc.telemetry)} records) written to {args.out}", file=sys.stderr)
        raise
    log = sys.stderr if not args.out else sys.stdout
    if args.out:
        write_telemetry(args.out, result.telemetry)
        print(f"wrote {len(result.telemetry)} records to {args.out}", file=log)
    else:
        write_telemetry(sys.stdout, result.telemetry)
    for axis, steps in result.summary.items():
        for m in steps:
            unit, scale = ("m", 1.0) if axis == "z" else ("deg", math.degrees(1.0))
            print(f"{axis:>5} step at {m.t_step:g} s -> {scale * m.target:g} {unit}: settling "
                  f"{_fmt_time(m.settling_time)}, overshoot {scale * m.overshoot:.4g} {unit}, "
                  f"oscillations {m.oscillations}, final error {scale * m.steady_state_error:.3g} {unit}",
                  file=log)
    if args.plot:
        from quadsim.plotting import telemetry_report

        for path in telemetry_report(result.telemetry, args.out, spec):
            print(f"wrote {path}", file=log)
    return EXIT_OK


def cmd_fit_drag(args) -> int:
    points = read_yaw_csv(args.data)
    fit = fit_drag_coefficients(points)
    for w in fit.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"gamma1 = {fit.gamma1!r}")
    print(f"gamma2 = {fit.gamma2!r}")
    if args.params:
        params, _ = load_params(args.params)
        for name, value in (("gamma1", fit.gamma1), ("gamma2", fit.gamma2)):
            ref = getattr(params, name)
            rel = abs(value - ref) / abs(ref) if ref else math.inf
            print(f"# {name}: params file {ref!r}, relative difference {rel:.3e}")
    if args.plot:
        from quadsim.plotting import plot_drag_fit

        print(f"# wrote {plot_drag_fit(points, fit, args.plot)}")
    return EXIT_OK


def cmd_fit_propeller(args) -> int:
    samples = read_bench_csv(args.data)
    model = fit_propeller(samples)
    rms = fit_thrust_pwm(samples).rms
    print(dump_params(prop=model, header=f"propeller fit from {args.data}; thrust rms residual {rms:.4g} N"),
          end="")
    return EXIT_OK


def cmd_moi(args) -> int:
    if args.swings:
        period = period_from_swings(read_swings_csv(args.swings))
        print(f"period = {period!r}")
    elif args.period is not None:
        period = args.period
    else:
        raise UsageError("moi: give --period or --swings")
    J_P, J_C = moi_from_pendulum(args.mass, args.g, args.pivot, period)
    print(f"J_pivot = {J_P!r}")
    print(f"J_com = {J_C!r}")
    return EXIT_OK


def cmd_tune(args) -> int:
    from quadsim.tuning import DEFAULT_TARGETS, tune_quadcopter_axis

    params, prop = load_params(args.params)
    base = load_gains(args.base) if args.base else ControllerGains()
    # keep only the loops tuned before this one
    order = {"z": (), "phi": ("z",), "theta": ("z",), "psi": ("z", "phi", "theta")}[args.axis]
    kept = ControllerGains(**{a: base.axis(a) for a in order})
    target = DEFAULT_TARGETS[args.axis] if args.oscillations is None else args.oscillations
    result = tune_quadcopter_axis(args.axis, params, prop, kept, target, window=args.window)
    g = result.gains
    print(f"kp_{args.axis} = {g.kp!r}")
    print(f"kd_{args.axis} = {g.kd!r}")
    print(f"# {result.cycles} full cycles at kd = 0; final response: settling "
          f"{_fmt_time(result.settling_time)}, oscillations {result.oscillations}, "
          f"{len(result.kp_history) + len(result.kd_history)} simulations")
    if args.out:
        Path(args.out).write_text(dump_gains(base.with_axis(args.axis, g), header=f"{args.axis} retuned"),
                                  encoding="utf-8")
    return EXIT_OK


def cmd_timing(args) -> int:
    T, freq = average_loop_time(args.t0, args.t1, args.t2)
    print(f"{T * 1e6:.3f} μs, {round(freq)} Hz")
    return EXIT_OK


def cmd_drag_sweep(args) -> int:
    params, prop = load_params(args.params)
    points = drag_sweep(params, prop, args.thrusts, duration=args.duration)
    write_yaw_csv(args.out, points)
    print(f"wrote {len(points)} steady states to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    default_params = str(data_path("params.txt"))
    default_gains = str(data_path("gains_simulation.txt"))
    parser = _Parser(prog="quadsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="fly a scenario and write telemetry CSV")
    p.add_argument("--scenario", required=True, help="scenario file or shipped name (e.g. hover)")
    p.add_argument("--params", default=default_params)
    p.add_argument("--gains", default=default_gains)
    p.add_argument("--out", help="telemetry CSV (default: stdout)")
    p.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the scenario seed")
    p.add_argument("--integrator", choices=("adaptive", "rk4"))
    p.add_argument("--plot", action="store_true", help="also write PNG figures next to --out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-drag", help="fit yaw drag coefficients to spin-rig steady states")
    p.add_argument("--data", required=True, help="CSV with columns tau,r")
    p.add_argument("--params", help="compare against this parameter file")
    p.add_argument("--plot", metavar="PNG")
    p.set_defaults(func=cmd_fit_drag)

    p = sub.add_parser("fit-propeller", help="fit propeller maps to thrust-stand data")
    p.add_argument("--data", required=True, help="CSV with columns P,f,w,V,I")
    p.set_defaults(func=cmd_fit_propeller)

    p = sub.add_parser("moi", help="moment of inertia from a pendulum swing period")
    p.add_argument("--mass", type=float, required=True)
    p.add_argument("--g", type=float, default=STANDARD_GRAVITY)
    p.add_argument("--pivot", type=float, required=True, help="pivot to centre-of-mass distance, m")
    p.add_argument("--period", type=float)
    p.add_argument("--swings", help="CSV with columns trial,t")
    p.set_defaults(func=cmd_moi)

    p = sub.add_parser("tune", help="auto-tune kp and kd for one axis")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--oscillations", type=int, help="target full cycles (default: per-axis standard)")
    p.add_argument("--window", type=float, default=3.0, help="settling window, s")
    p.add_argument("--params", default=default_params)
    p.add_argument("--base", help="gains file for previously tuned axes")
    p.add_argument("--out", help="write the updated gains file here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("timing", help="average loop period under a periodic interrupt")
    p.add_argument("--t0", type=float, required=True, help="interrupt period, s")
    p.add_argument("--t1", type=float, required=True, help="main loop length, s")
    p.add_argument("--t2", type=float, required=True, help="interrupt handler length, s")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("drag-sweep", help="simulate the spin rig and write steady states for fit-drag")
    p.add_argument("--thrusts", type=float, nargs="+", required=True, help="per-motor thrust levels, N")
    p.add_argument("--params", default=default_params)
    p.add_argument("--duration", type=float, default=40.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_drag_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, IntegrationError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, FitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
