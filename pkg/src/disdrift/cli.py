"""Command-line front end.

Each subcommand reads an optional JSON configuration (``--config``), applies
command-line overrides, validates the result against the published schema
(``disdrift presets --schema`` prints it) and writes CSV.  When ``--out`` is
given a gnuplot script with the same stem is written next to the CSV.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from .analysis import ReferenceUnavailable, closed_form_family, convergence_study, \
    cost_curve, hitting_fraction, predicted_order, sobolev_seminorm
from .analysis import _check_scheme
from .core import NumericalError, PiecewiseDrift, SdeProblem, SdeValueError, \
    SmoothCoefficient, uniform_grid
from .noise import ADAPTIVE, BrownianSource, SeedSpec, sample_jumps, sample_path
from .presets import INWARD, OUTWARD, PRESETS, get_preset
from .schemes import StepPolicy, adaptive_euler_maruyama, augment_with_jumps, \
    euler_maruyama, jump_euler_maruyama, milstein, transform_method, transformed_milstein
from .transform import build_transform

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

SEED_ENV = "DISDRIFT_SEED"
DEFAULT_LADDER = [2.0 ** -k for k in range(4, 11)]


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


def load_schema():
    text = resources.files("disdrift").joinpath("config_schema.json").read_text()
    return json.loads(text)


def validate_config(config):
    """Raise :class:`ConfigError` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.path)
        if not where and err.validator == "additionalProperties":
            raise ConfigError(f"config: {err.message}")
        raise ConfigError(f"config field '{where or '<root>'}': {err.message}")


def _coefficient(value):
    if isinstance(value, (int, float)):
        return SmoothCoefficient.constant(value)
    return SmoothCoefficient.from_dict(value)


def _drift(d):
    pieces = [_coefficient(p) for p in d["pieces"]]
    return PiecewiseDrift(tuple(d.get("breakpoints", ())), tuple(pieces),
                          d.get("breakpoint_values"))


def _inline_problem(d):
    jump = d.get("jump")
    return SdeProblem(_drift(d["drift"]), _coefficient(d["diffusion"]), d["initial"],
                      d.get("horizon", 1.0), _coefficient(jump) if jump is not None else None,
                      d.get("jump_rate", 0.0))


def resolve_problem(config, field="problem"):
    entry = config.get(field)
    if entry is None:
        raise ConfigError(f"config field '{field}' is required")
    try:
        if isinstance(entry, str):
            problem = get_preset(entry).problem
            if problem is None:
                raise ConfigError(f"config field '{field}': preset {entry!r} defines a "
                                  "function, not an SDE")
            return problem
        return _inline_problem(entry)
    except KeyError as exc:
        raise ConfigError(f"config field '{field}': {exc.args[0]}") from None
    except SdeValueError as exc:
        raise ConfigError(f"config field '{field}': {exc}") from None


def resolve_seed(cli_seed, config):
    if cli_seed is not None:
        return cli_seed
    if "seed" in config:
        return config["seed"]
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"environment variable {SEED_ENV} is not an integer") from None
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f"environment variable {SEED_ENV} is not an unsigned 64-bit integer")
        return seed
    return 0


def _ladder(config, default=DEFAULT_LADDER):
    ladder = [float(d) for d in config.get("delta_ladder", default)]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("config field 'delta_ladder': steps must be strictly decreasing")
    return ladder


def _check_compatible(problem, scheme):
    try:
        _check_scheme(problem, scheme)
    except SdeValueError as exc:
        raise ConfigError(f"config field 'scheme': {exc}") from None


# ---------------------------------------------------------------- CSV output

def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, int) and not isinstance(v, bool):
        return str(v)
    return repr(float(v))


def format_csv(header, rows, footer=()):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    for line in footer:
        buf.write(f"# {line}\r\n")
    return buf.getvalue()


def _gnuplot(kind, csv_name, extra):
    head = ["set datafile separator ','", "set key autotitle columnhead"]
    if kind == "simulate":
        body = ["set xlabel 't'", "set ylabel 'x'",
                f"plot for [i=0:{extra['paths'] - 1}] '{csv_name}' "
                "using 2:($1==i ? $3 : NaN) with lines notitle"]
    elif kind == "estimate-order":
        body = ["set logscale xy 2", "set xlabel 'delta'", "set ylabel 'RMSE'",
                f"# fitted slope {extra['slope']:.6g}",
                f"plot '{csv_name}' using 1:2:3 with yerrorbars title 'RMSE', \\",
                f"     2**({extra['intercept']!r}) * x**({extra['slope']!r}) "
                "with lines title 'fit'"]
    elif kind == "adaptive-cost":
        body = ["set logscale xy 2", "set xlabel '1/delta'", "set ylabel 'mean steps'",
                f"plot '{csv_name}' using (1/$1):2:3 with yerrorbars title 'mean steps'"]
    elif kind == "rare-event":
        body = ["set style data histograms", "set yrange [0:1]",
                "set ylabel 'fraction of paths near the breakpoint'",
                f"plot '{csv_name}' using 2:xtic(1) notitle"]
    else:
        body = ["set xlabel 'kappa'", "set ylabel 'seminorm'",
                f"plot '{csv_name}' using 1:2 with linespoints title 'seminorm'"]
    return "\n".join(head + body) + "\n"


def _emit(text, out, kind, extra):
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
        path.with_suffix(".gp").write_text(_gnuplot(kind, path.name, extra))
    except OSError as exc:
        raise ConfigError(f"config field 'output': cannot write {out}: {exc.strerror}") from None


# ---------------------------------------------------------------- commands

def _single_delta(config):
    if "delta" in config:
        return float(config["delta"])
    ladder = config.get("delta_ladder")
    if ladder is None or len(ladder) != 1:
        raise ConfigError("config field 'delta': simulate needs exactly one step size")
    return float(ladder[0])


def _simulate_one(problem, scheme, delta, seed, index, G, scale):
    spec = SeedSpec(seed, index)
    T = problem.horizon
    if scheme == "adaptive-em":
        source = BrownianSource(spec.generator(ADAPTIVE, 0), T=T)
        return adaptive_euler_maruyama(problem, StepPolicy(delta, "adaptive", scale), source)
    n = max(1, int(math.ceil(T / delta - 1e-9)))
    grid = uniform_grid(T, n)
    noise = sample_path(grid, spec)
    if scheme == "jump-em":
        train = sample_jumps(problem.jump_rate, T, spec)
        grid, noise = augment_with_jumps(grid, noise, train, spec)
        return jump_euler_maruyama(problem, grid, noise, train)
    if scheme == "em":
        return euler_maruyama(problem, grid, noise)
    if scheme == "milstein":
        return milstein(problem, grid, noise)
    if scheme == "transform-em":
        return transform_method(problem, grid, noise, G)
    return transformed_milstein(problem, grid, noise, G)


def run_simulate(config, seed):
    problem = resolve_problem(config)
    scheme = config.get("scheme", "em")
    _check_compatible(problem, scheme)
    delta = _single_delta(config)
    if scheme == "adaptive-em" and not delta < 1:
        raise ConfigError("config field 'delta': adaptive steps must lie in (0, 1)")
    paths = config.get("paths", 1)
    G = build_transform(problem.drift, problem.diffusion) \
        if scheme.startswith("transform") else None
    rows = []
    for i in range(paths):
        traj = _simulate_one(problem, scheme, delta, seed, i, G, config.get("scale", 1.0))
        rows.extend((i, float(t), float(x)) for t, x in zip(traj.times, traj.values))
    return format_csv(["path_id", "t", "x"], rows), {"paths": paths}, None


def run_estimate_order(config, seed, workers):
    problem = resolve_problem(config)
    scheme = config.get("scheme", "em")
    _check_compatible(problem, scheme)
    ladder = _ladder(config)
    if len(ladder) < 4:
        raise ConfigError("config field 'delta_ladder': order estimation needs at least 4 steps")
    reference = config.get("reference")
    if reference is None:
        reference = "exact" if closed_form_family(problem) else "fine-grid"
    paths = config.get("paths", 1000)
    try:
        res = convergence_study(problem, [scheme], ladder, paths, seed, reference,
                                config.get("refine_exponent", 6), workers,
                                config.get("scale", 1.0))
    except ReferenceUnavailable as exc:
        raise ConfigError(f"config field 'reference': {exc}") from None
    rep = res.rate(scheme)
    footer = [f"slope={rep.slope!r}, ci={rep.slope_ci!r}"]
    text = format_csv(["delta", "rmse", "stderr"], rep.ladder, footer)
    summary = (f"{scheme} on {config['problem'] if isinstance(config['problem'], str) else 'inline'}"
               f": slope {rep.slope:.4f} +- {rep.slope_ci:.4f} ({paths} paths, seed {seed})")
    return text, {"slope": rep.slope, "intercept": rep.intercept}, summary


def run_adaptive_cost(config, seed, workers):
    problem = resolve_problem(config)
    scheme = config.get("scheme", "adaptive-em")
    if scheme != "adaptive-em":
        raise ConfigError("config field 'scheme': adaptive-cost requires scheme 'adaptive-em'")
    _check_compatible(problem, scheme)
    ladder = _ladder(config)
    if len(ladder) < 4:
        raise ConfigError("config field 'delta_ladder': cost regression needs at least 4 steps")
    rep = cost_curve(problem, ladder, config.get("paths", 1000), seed,
                     config.get("scale", 1.0), workers)
    footer = [f"slope={rep.slope!r}, ci={rep.slope_ci!r}"]
    text = format_csv(["delta", "mean_steps", "stderr"], rep.entries, footer)
    return text, {}, f"adaptive-em cost slope {rep.slope:.4f} +- {rep.slope_ci:.4f}"


def run_seminorm(config):
    if "function" in config:
        try:
            b = _drift(config["function"])
        except SdeValueError as exc:
            raise ConfigError(f"config field 'function': {exc}") from None
    else:
        name = config.get("problem", "sign-decomposition")
        if not isinstance(name, str):
            b = resolve_problem(config).drift
        else:
            try:
                preset = get_preset(name)
            except KeyError as exc:
                raise ConfigError(f"config field 'problem': {exc.args[0]}") from None
            b = preset.function if preset.function is not None else preset.problem.drift
    kappas = [float(k) for k in config.get("kappas", [0.25, 0.4])]
    for k in kappas:
        if not 0 < k < 1:
            raise ConfigError(f"config field 'kappas': kappa {k} outside (0, 1)")
    rows = []
    for k in kappas:
        try:
            value = sobolev_seminorm(b, k, config.get("radius", 10.0),
                                     config.get("resolution", 1000)).value
        except SdeValueError as exc:
            raise ConfigError(f"config field 'function': {exc}") from None
        rows.append((k, value, predicted_order(k)))
    return format_csv(["kappa", "seminorm", "predicted_order"], rows), {}, None


def run_rare_event(config, seed):
    paths = config.get("paths", 10000)
    if paths < 1000:
        raise ConfigError("config field 'paths': rare-event needs at least 1000 paths")
    band = float(config.get("band", 0.01))
    delta = float(config.get("delta", 2.0 ** -10))
    xi = float(config.get("initial", 0.1))
    fractions = {}
    for name, drift in (("inward", INWARD), ("outward", OUTWARD)):
        try:
            problem = SdeProblem(drift, SmoothCoefficient.constant(1.0), xi, 1.0)
            fractions[name] = hitting_fraction(problem, delta, paths, band, seed)
        except SdeValueError as exc:
            raise ConfigError(f"config field 'delta': {exc}") from None
    return fractions


# ---------------------------------------------------------------- driver

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="disdrift",
        description="Strong-convergence experiments for SDEs with discontinuous drift.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides config and "
                       f"${SEED_ENV})")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--preset", help="problem preset (overrides config 'problem')")
        p.add_argument("--paths", type=int, help="Monte Carlo sample size M")
        if workers:
            p.add_argument("--workers", type=int, help="worker processes (results do not "
                           "depend on this)")

    p = sub.add_parser("simulate", help="write trajectories as CSV")
    common(p, workers=False)
    p.add_argument("--scheme")
    p.add_argument("--delta", type=float)

    p = sub.add_parser("estimate-order", help="RMSE ladder and fitted order")
    common(p)
    p.add_argument("--scheme")
    p.add_argument("--delta", type=float, action="append", dest="ladder",
                   help="step size; repeat for a ladder")
    p.add_argument("--reference", choices=["exact", "fine-grid"])

    p = sub.add_parser("adaptive-cost", help="mean adaptive step counts")
    common(p)
    p.add_argument("--delta", type=float, action="append", dest="ladder")

    p = sub.add_parser("seminorm", help="Sobolev-Slobodeckij seminorms")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--preset")
    p.add_argument("--kappa", type=float, action="append", dest="kappas")
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("rare-event", help="inward vs outward hitting fractions")
    common(p)
    p.add_argument("--band", type=float)
    p.add_argument("--delta", type=float)

    p = sub.add_parser("presets", help="list the compiled-in presets")
    p.add_argument("--schema", action="store_true", help="print the configuration schema")
    return parser


_OVERRIDES = {"preset": "problem", "paths": "paths", "scheme": "scheme", "delta": "delta",
              "ladder": "delta_ladder", "reference": "reference", "kappas": "kappas",
              "resolution": "resolution", "band": "band", "out": "output",
              "workers": "workers"}


def _load_config(args):
    config = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
    for attr, key in _OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            config[key] = value
    validate_config(config)
    return config


def _list_presets():
    lines = []
    for name, preset in PRESETS.items():
        kind = "function" if preset.problem is None else "sde"
        lines.append(f"{name:<20}{kind:<10}{preset.note}")
    return "\n".join(lines) + "\n"


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            if args.schema:
                sys.stdout.write(json.dumps(load_schema(), indent=2) + "\n")
            else:
                sys.stdout.write(_list_presets())
            return EXIT_OK
        config = _load_config(args)
        out = config.get("output")
        workers = config.get("workers", 1)
        if args.command == "seminorm":
            text, extra, summary = run_seminorm(config)
            _emit(text, out, "seminorm", extra)
            return EXIT_OK
        seed = resolve_seed(getattr(args, "seed", None), config)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.command == "rare-event":
            fr = run_rare_event(config, seed)
            sys.stdout.write(f"inward={fr['inward']!r} outward={fr['outward']!r}\n")
            if out is not None:
                _emit(format_csv(["variant", "fraction"], list(fr.items())), out,
                      "rare-event", {})
            return EXIT_OK
        if args.command == "simulate":
            text, extra, summary = run_simulate(config, seed)
        elif args.command == "estimate-order":
            text, extra, summary = run_estimate_order(config, seed, workers)
        else:
            text, extra, summary = run_adaptive_cost(config, seed, workers)
        _emit(text, out, args.command, extra)
        if summary and out is not None:
            sys.stdout.write(summary + "\n")
        return EXIT_OK
    except ConfigError as exc:
        print(f"disdrift: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SdeValueError as exc:
        print(f"disdrift: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"disdrift: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
