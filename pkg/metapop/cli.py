# -*- coding: utf-8 -*-
"""metapop.cli module."""
# pylint: disable=invalid-name

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import voluptuous as vol

from metapop.chain import chain_rates, mean_G, spectral_report, stationary_distribution
from metapop.const import REPORT_CAP, Classification, ExitCode
from metapop.exceptions import (
    ConfigError,
    InvalidArgument,
    InvalidModel,
    MetapopError,
    NoBound,
    NoEquilibrium,
    NumericalError,
)
from metapop.meanfield import (
    IntegrationControls,
    TruncatedState,
    convergence_diagnose,
    extinction_target,
    integrate,
    sample_rows,
)
from metapop.model import (
    BUNDLED_MODELS,
    RateModel,
    bundled_model_path,
    check_h1,
    load_model,
    normalize_rho,
)
from metapop.stochastic import compare_with_mean_field, simulate_metapopulation
from metapop.threshold import solve_fixed_point, sweep
from metapop.utils import require_grid, stamped, write_csv, write_dump, write_json
from metapop.verify import SUITE, VerifyContext, run_suite

logging.basicConfig()
_LOGGER = logging.getLogger("metapop-cli")
_LOGGER.setLevel(logging.ERROR)
_LOGGER_LIB = logging.getLogger("metapop")
_LOGGER_LIB.setLevel(logging.ERROR)


parser = argparse.ArgumentParser(description="metapop")
parser.add_argument("--debug", action="store_true", help="Show debug messages")
parser.add_argument(
    "--pprint", action="store_true", help="Pretty-print (indent) JSON output"
)

common = argparse.ArgumentParser(add_help=False)
common.add_argument("--out", default=".", help="Directory for output files")
common.add_argument("--seed", type=int, default=0, help="Seed of all random streams")
common.add_argument("--tol", type=float, help="Solver tolerance")

subparsers = parser.add_subparsers(title="Command", dest="command")
subparsers.required = True

subparser = subparsers.add_parser(
    "check", parents=[common], help="Check hypotheses (H1) and (H2)"
)
subparser.add_argument(
    "--model", required=True, help="Model file or bundled model name"
)
subparser.add_argument("--N", type=int, help="Check (H1) on 1..N")

subparser = subparsers.add_parser(
    "threshold", parents=[common], help="Solve s = G(s) and classify persistence"
)
subparser.add_argument(
    "--model", required=True, help="Model file or bundled model name"
)
subparser.add_argument(
    "--grid", help="Grid start:stop:step of s, or of the swept parameter"
)
subparser.add_argument("--sweep", help="Parameter to sweep over the grid, e.g. nu")

subparser = subparsers.add_parser(
    "integrate", parents=[common], help="Integrate the truncated mean-field system"
)
subparser.add_argument(
    "--model", required=True, help="Model file or bundled model name"
)
subparser.add_argument("--T", type=float, default=100.0, help="Time horizon")
subparser.add_argument("--N", type=int, default=100, help="Truncation level")
subparser.add_argument("--dt", type=float, default=1.0, help="Sampling stride")
subparser.add_argument(
    "--start", default="delta:1", help="Initial law, delta:J or uniform:K"
)
subparser.add_argument(
    "--dump", action="store_true", help="Also write the full state of every sample"
)

subparser = subparsers.add_parser(
    "simulate", parents=[common], help="Simulate finitely many patches"
)
subparser.add_argument(
    "--model", required=True, help="Model file or bundled model name"
)
subparser.add_argument("--patches", type=int, default=2000, help="Number of patches")
subparser.add_argument("--T", type=float, default=50.0, help="Time horizon")
subparser.add_argument("--N", type=int, default=100, help="Truncation of the ODE")
subparser.add_argument("--dt", type=float, default=5.0, help="Sampling stride")
subparser.add_argument(
    "--start", default="delta:1", help="Initial law, delta:J or uniform:K"
)

subparser = subparsers.add_parser(
    "verify", parents=[common], help="Run the property suite"
)
subparser.add_argument(
    "--model", help="Model file replacing the bundled table model of the suite"
)
subparser.add_argument(
    "--quick", action="store_true", help="Fewer replicates and grid points"
)
subparser.add_argument(
    "--check", action="append", choices=list(SUITE), help="Run only this check"
)

pprint_indent: Optional[int] = None


def _model_source(value: Any) -> str:
    """Accept a bundled model name or the path of an existing file."""
    if value in BUNDLED_MODELS:
        return bundled_model_path(value)
    return str(vol.IsFile(msg=f"Model file {value} does not exist")(value))


def _start(value: Any) -> Dict[str, Any]:
    """Parse delta:J or uniform:K."""
    kind, _, size = str(value).partition(":")
    if kind not in ("delta", "uniform") or not size.isdigit():
        raise vol.Invalid(f"Initial law must be delta:J or uniform:K, got {value}")
    return {"kind": kind, "size": int(size)}


POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))

RUN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("command"): vol.In(["check", "threshold", "integrate", "simulate", "verify"]),
        vol.Required("out"): str,
        vol.Required("seed"): vol.All(int, vol.Range(min=0, max=2**64 - 1)),
        vol.Optional("model"): vol.Any(None, _model_source),
        vol.Optional("tol"): vol.Any(None, POSITIVE),
        vol.Optional("T"): POSITIVE,
        vol.Optional("N"): vol.Any(None, vol.All(int, vol.Range(min=1))),
        vol.Optional("dt"): POSITIVE,
        vol.Optional("patches"): vol.All(int, vol.Range(min=2)),
        vol.Optional("grid"): vol.Any(None, require_grid),
        vol.Optional("sweep"): vol.Any(None, str),
        vol.Optional("start"): _start,
        vol.Optional("dump"): bool,
        vol.Optional("quick"): bool,
        vol.Optional("check"): vol.Any(None, [vol.In(list(SUITE))]),
    }
)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one command."""

    command: str
    out: str
    seed: int
    options: Dict[str, Any]

    @classmethod
    def from_args(cls, parsed: argparse.Namespace) -> "RunConfig":
        """Validate the parsed command line."""
        raw = {
            key: value
            for key, value in vars(parsed).items()
            if key not in ("debug", "pprint")
        }
        try:
            valid = RUN_CONFIG_SCHEMA(raw)
        except vol.Invalid as err:
            raise ConfigError(message=f"Invalid configuration: {err}") from err
        command = valid.pop("command")
        out = valid.pop("out")
        seed = valid.pop("seed")
        return cls(command=command, out=out, seed=seed, options=valid)

    def __getitem__(self, key: str) -> Any:
        """Return an option, None when unset."""
        return self.options.get(key)

    def hashed(self) -> Dict[str, Any]:
        """Return the part of the configuration that determines the results."""
        options = dict(self.options)
        if self["model"] is not None:
            with open(self["model"], encoding="utf-8") as file:
                options["model"] = json.load(file)
        return {"command": self.command, "seed": self.seed, "options": options}

    def path(self, name: str) -> str:
        """Return the path of an output file."""
        return os.path.join(self.out, name)

    def tolerance(self, **kwargs: Any) -> Dict[str, Any]:
        """Return the tolerance keyword when set."""
        if self["tol"] is not None:
            kwargs["tol"] = self["tol"]
        return kwargs


def emit(config: RunConfig, report: Any, name: str) -> None:
    """Write the report to the output directory and print it."""
    hashed = config.hashed()
    write_json(config.path(name), report, hashed, config.seed)
    print(json.dumps(stamped(report, hashed, config.seed), indent=pprint_indent))


def table(config: RunConfig, name: str, header: Sequence[str], rows: Any) -> None:
    """Write a CSV file stamped with the configuration hash and seed."""
    write_csv(config.path(name), header, rows, config.hashed(), config.seed)


def _model(config: RunConfig) -> RateModel:
    try:
        return load_model(config["model"])
    except InvalidModel as err:
        raise ConfigError(message=f"Malformed model file: {err.message}") from err


def _initial_law(start: Dict[str, Any], n: int) -> TruncatedState:
    if start["kind"] == "delta":
        return TruncatedState.point_mass(n, start["size"])
    return TruncatedState.uniform(n, start["size"])


def _histogram(start: Dict[str, Any], patches: int) -> List[int]:
    """Spread the patches over the initial sizes."""
    if start["kind"] == "delta":
        return [0] * start["size"] + [patches]
    sizes = start["size"] + 1
    counts = [patches // sizes] * sizes
    for index in range(patches % sizes):
        counts[index] += 1
    return counts


def _equilibrium(config: RunConfig, model: RateModel) -> Any:
    report = solve_fixed_point(model, **config.tolerance())
    if report.classification == Classification.PERSISTENT:
        return report, stationary_distribution(chain_rates(normalize_rho(model), report.s_star))
    return report, extinction_target()


def cmd_check(config: RunConfig) -> ExitCode:
    """Check (H1) and (H2)."""
    model = normalize_rho(_model(config))
    report = check_h1(model, config["N"]) if config["N"] else check_h1(model)
    emit(config, report, "check.json")
    if report.h1_holds and report.h2_holds:
        return ExitCode.OK
    return ExitCode.NEGATIVE


def _threshold_sweep(config: RunConfig, model: RateModel) -> ExitCode:
    if config["grid"] is None:
        raise ConfigError(message="--sweep needs --grid")
    points = sweep(model, config["sweep"], config["grid"], **config.tolerance())
    table(
        config,
        "sweep.csv",
        ["value", "r0", "lambda0", "s_star", "s_tilde", "classification"],
        [
            [
                point.value,
                point.r0,
                point.lambda0 if point.lambda0 is not None else "",
                point.s_star,
                point.s_tilde,
                point.classification.value if point.classification else "no_equilibrium",
            ]
            for point in points
        ],
    )
    emit(config, {"sweep": points}, "threshold.json")
    return ExitCode.OK


def cmd_threshold(config: RunConfig) -> ExitCode:
    """Solve the fixed point problem and write G(s) for plotting."""
    model = _model(config)
    if config["sweep"]:
        return _threshold_sweep(config, model)

    try:
        report = solve_fixed_point(model, **config.tolerance())
    except NoEquilibrium as err:
        _LOGGER.error("%s", err.message)
        emit(config, {"no_equilibrium": err.diagnostic}, "threshold.json")
        return ExitCode.NEGATIVE

    grid = config["grid"]
    if grid is None:
        grid = np.linspace(0.0, 2.0 * max(report.s_tilde, report.s_star, 1.0), 41)
    table(
        config,
        "g_curve.csv",
        ["s", "G"],
        [[float(s), mean_G(model, float(s))] for s in grid],
    )
    if report.classification == Classification.PERSISTENT:
        profile = stationary_distribution(chain_rates(normalize_rho(model), report.s_star))
        table(
            config,
            "equilibrium.csv",
            ["j", "pi"],
            [[j, float(value)] for j, value in enumerate(profile.pi)],
        )
    emit(
        config,
        {"threshold": report, "spectral": spectral_report(model)},
        "threshold.json",
    )
    return ExitCode.OK


def cmd_integrate(config: RunConfig) -> ExitCode:
    """Integrate the mean-field system and report convergence."""
    model = _model(config)
    p0 = _initial_law(config["start"], config["N"])
    trajectory = integrate(model, p0, config["T"], IntegrationControls(sample_dt=config["dt"]))
    report, target = _equilibrium(config, model)
    convergence = convergence_diagnose(trajectory, target)

    width = min(REPORT_CAP, trajectory.n) + 1
    table(
        config,
        "trajectory.csv",
        ["t", "s", "mass_defect"] + [f"p_{j}" for j in range(width)],
        sample_rows(trajectory, REPORT_CAP),
    )
    if config["dump"]:
        write_dump(config.path("trajectory.bin"), trajectory.t, trajectory.p)
    emit(
        config,
        {
            "threshold": report,
            "final_distance": convergence.final_distance,
            "monotone_tail": convergence.monotone_tail,
            "burn_in_time": convergence.burn_in_time,
            "mean_error": convergence.mean_error,
            "max_mass_defect": float(trajectory.mass_defect.max()),
            "clamped_mass": trajectory.clamped_mass,
            "min_entry": trajectory.min_entry,
            "evaluations": trajectory.steps,
        },
        "integrate.json",
    )
    return ExitCode.OK


def cmd_simulate(config: RunConfig) -> ExitCode:
    """Simulate finitely many patches and compare with the mean-field solution."""
    model = _model(config)
    patches = config["patches"]
    histogram = _histogram(config["start"], patches)
    if len(histogram) > config["N"] + 1:
        raise ConfigError(message=f"Initial sizes exceed the truncation N={config['N']}")
    run = simulate_metapopulation(
        model, patches, histogram, config["T"], config.seed, config["dt"]
    )
    p0 = np.zeros(config["N"] + 1)
    p0[: len(histogram)] = np.asarray(histogram, dtype=float) / patches
    trajectory = integrate(
        model, TruncatedState(p0), config["T"], IntegrationControls(sample_dt=config["dt"])
    )
    comparison = compare_with_mean_field(run, trajectory)

    width = min(REPORT_CAP + 1, run.p_hat.shape[1])
    table(
        config,
        "empirical.csv",
        ["t", "population"] + [f"p_hat_{j}" for j in range(width)],
        [
            [float(t), int(total), *map(float, row[:width])]
            for t, total, row in zip(run.t, run.population, run.p_hat)
        ],
    )
    emit(
        config,
        {
            "patches": patches,
            "events": run.events,
            "max_z_score": comparison.z_scores.max(axis=0),
            "excess": comparison.excess,
            "holds": comparison.holds,
            "streams": run.streams,
        },
        "simulate.json",
    )
    return ExitCode.OK


def cmd_verify(config: RunConfig) -> ExitCode:
    """Run the property suite."""
    context = VerifyContext(quick=bool(config["quick"]), seed=config.seed)
    if config["model"] is not None:
        context.models["table_concave"] = _model(config)
    results = run_suite(context, config["check"])
    for result in results:
        _LOGGER.info("%s: %s in %.1fs", result.name, result.passed, result.seconds)
    passed = all(result.passed for result in results)
    emit(
        config,
        {
            "passed": passed,
            "checks": [
                {
                    "name": result.name,
                    "criterion": result.criterion,
                    "passed": result.passed,
                    "details": dict(result.details),
                }
                for result in results
            ],
        },
        "verify.json",
    )
    return ExitCode.OK if passed else ExitCode.NEGATIVE


COMMANDS = {
    "check": cmd_check,
    "threshold": cmd_threshold,
    "integrate": cmd_integrate,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def run(argv: Optional[Sequence[str]] = None) -> ExitCode:
    """Parse the arguments and run one command."""
    # pylint: disable=global-statement
    global pprint_indent
    args = parser.parse_args(argv)
    pprint_indent = 4 if args.pprint else None
    if args.debug:
        _LOGGER.setLevel(logging.DEBUG)
        _LOGGER_LIB.setLevel(logging.DEBUG)

    try:
        config = RunConfig.from_args(args)
        os.makedirs(config.out, exist_ok=True)
        return COMMANDS[config.command](config)
    except (ConfigError, OSError) as err:
        _LOGGER.error("%s", getattr(err, "message", None) or err)
        return ExitCode.USAGE
    except (InvalidModel, NoBound, NoEquilibrium) as err:
        _LOGGER.error("%s", err.message)
        return ExitCode.NEGATIVE
    except InvalidArgument as err:
        _LOGGER.error("%s", err.message)
        return ExitCode.USAGE
    except NumericalError as err:
        _LOGGER.error("%s: %s", type(err).__name__, err.message)
        return ExitCode.NUMERICAL
    except MetapopError as err:
        _LOGGER.error("%s", err.message)
        return ExitCode.NUMERICAL


def main() -> None:
    """Run the command line program."""
    sys.exit(int(run()))


if __name__ == "__main__":
    main()
