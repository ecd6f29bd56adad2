"""Command-line front end: ``ivmediate {standard,iv,sensitivity,simulate}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dataset import ColumnMap, load_csv
from .errors import ConfigError, IvMediationError, WeakInstrumentWarning
from .estimators import fit_standard, fit_two_stage, partial_f, robust
from .report import fmt2, format_estimate
from .sensitivity import run_grid
from .simlab import ESTIMATORS, check_moment_conditions, load_scenario, mc_reports_csv, run_monte_carlo

COMMANDS = ("standard", "iv", "sensitivity", "simulate")
COVARIANCES = ("homoskedastic", "sandwich", "both")
FORMATS = ("text", "csv", "json")
SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    scenario: str | None = None
    outcome: str | None = None
    assignment: str | None = None
    mediator: str | None = None
    x: list = field(default_factory=list)
    z: list = field(default_factory=list)
    ci_level: float = 0.95
    covariance: str = "homoskedastic"
    tau_r: list = field(default_factory=list)
    tau_m: list = field(default_factory=list)
    grid_order: str = "tau_m_outer"
    format: str = "text"
    seed: int | None = None
    dof_adjust: bool = False
    reps: int = 1000
    estimator: list = field(default_factory=list)
    moments: int | None = None
    transform: bool = False
    n: int | None = None
    workers: int = 1
    out: str | None = None
    delimiter: str = ","
    missing_policy: str = "drop-row"
    or_adjust_x: bool = False

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.covariance not in COVARIANCES:
            raise ConfigError(f"covariance must be one of {COVARIANCES}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("ci-level must lie in (0, 1)")
        if self.command == "simulate":
            if not self.scenario:
                raise ConfigError("simulate requires --scenario")
            if int(self.reps) != self.reps or self.reps < 2:
                raise ConfigError(f"--reps must be an integer >= 2, got {self.reps}")
            for est in self.estimator:
                if est not in ESTIMATORS:
                    raise ConfigError(f"unknown estimator {est!r}")
            return
        missing = [flag for flag, val in (("--input", self.input), ("--outcome", self.outcome),
                                          ("--assignment", self.assignment),
                                          ("--mediator", self.mediator)) if not val]
        if missing:
            raise ConfigError(f"{self.command} requires {', '.join(missing)}")
        if self.command in ("iv", "sensitivity") and not self.x:
            raise ConfigError("at least one instrumented covariate (--x) is required")
        if self.command == "sensitivity" and (not self.tau_r or not self.tau_m):
            raise ConfigError("sensitivity requires at least one --tau-r and one --tau-m vector")

    @property
    def column_map(self) -> ColumnMap:
        return ColumnMap(self.outcome, self.assignment, self.mediator, tuple(self.x), tuple(self.z))


def parse_vector(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"cannot parse vector {text!r}; expected comma-separated numbers") from None


def _read_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    if p.suffix.lower() in (".yaml", ".yml"):
        import yaml
        raw = yaml.safe_load(text) or {}
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return {k.replace("-", "_"): v for k, v in raw.items()}


def build_config(args) -> RunConfig:
    """Merge config-file values with command-line flags; flags win."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    if args.config:
        file_values = _read_config_file(args.config)
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        values.update(file_values)
    for name in known - {"command"}:
        val = getattr(args, name, None)
        if val is None or val == []:
            continue
        values[name] = val
    values["command"] = args.command
    for key in ("tau_r", "tau_m"):
        values[key] = [parse_vector(v) for v in values.get(key, [])]
    for key in ("x", "z", "estimator"):
        if isinstance(values.get(key), str):
            values[key] = [values[key]]
    config = RunConfig(**values)
    config.validate()
    return config


def _fits(config, data):
    fitter = fit_standard if config.command == "standard" else fit_two_stage
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakInstrumentWarning)
        kwargs = dict(ci_level=config.ci_level, dof_adjust=config.dof_adjust)
        if fitter is fit_two_stage:
            kwargs["warn_weak"] = False
        base = fitter(data, **kwargs)
    out = {}
    if config.covariance in ("homoskedastic", "both"):
        out["homoskedastic"] = base
    if config.covariance in ("sandwich", "both"):
        out["sandwich"] = robust(base, data)
    return out


def _table(rows) -> str:
    header = ("Method", "Direct effect of intervention", "Mediator effect")
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(3)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(header, widths))]
    lines += [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def _fit_csv(label_fits, extra=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = ["method", "covariance", "theta_r", "theta_r_lo", "theta_r_hi",
            "theta_m", "theta_m_lo", "theta_m_hi"]
    if extra:
        head += list(extra)
    writer.writerow(head)
    for cov, fit in label_fits.items():
        row = [fit.method.value, cov, repr(fit.theta_r), *map(repr, fit.ci_theta_r),
               repr(fit.theta_m), *map(repr, fit.ci_theta_m)]
        if extra:
            row += [repr(v) if isinstance(v, float) else str(v) for v in extra.values()]
        writer.writerow(row)
    return buf.getvalue()


def _load(config):
    data = load_csv(config.input, config.column_map, missing_policy=config.missing_policy,
                    delimiter=config.delimiter)
    print(f"ivmediate: {data.load_report.summary()}", file=sys.stderr)
    return data


def _envelope(config, data, **payload) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "command": config.command,
           "ci_level": config.ci_level, "dof_adjust": config.dof_adjust}
    if data is not None:
        rep = data.load_report
        doc["data"] = {"n": data.n, "n_treated": int(data.r.sum()),
                       "n_control": int(data.n - data.r.sum()),
                       "x": list(data.x_names), "z": list(data.z_names),
                       "rows_dropped": rep.rows_dropped if rep else 0}
    doc.update(payload)
    return doc


def cmd_standard(config: RunConfig) -> str:
    data = _load(config)
    fits = _fits(config, data)
    if config.format == "json":
        return json.dumps(_envelope(config, data, fits={k: f.to_dict() for k, f in fits.items()}),
                          indent=2, sort_keys=True)
    if config.format == "csv":
        return _fit_csv(fits)
    rows = [(f"Standard Regression [{cov}]" if len(fits) > 1 else "Standard Regression",
             format_estimate(f.theta_r, f.ci_theta_r), format_estimate(f.theta_m, f.ci_theta_m))
            for cov, f in fits.items()]
    return _table(rows)


def cmd_iv(config: RunConfig) -> str:
    data = _load(config)
    fits = _fits(config, data)
    diag = partial_f(data, adjust_or_for_x=config.or_adjust_x)
    if config.format == "json":
        return json.dumps(_envelope(config, data, fits={k: f.to_dict() for k, f in fits.items()},
                                    diagnostics=diag.to_dict()), indent=2, sort_keys=True)
    if config.format == "csv":
        return _fit_csv(fits, {"partial_f": diag.partial_f, "threshold": diag.threshold,
                               "strong": diag.strong})
    verdict = "strong" if diag.strong else "weak"
    lines = []
    if not diag.strong:
        lines += ["!" * 72,
                  f"WARNING: weak instruments (F={fmt2(diag.partial_f)} <= {fmt2(diag.threshold)}); "
                  "2SLS estimates and intervals may be unreliable",
                  "!" * 72]
    rows = [(f"IV [{cov}]" if len(fits) > 1 else "IV",
             format_estimate(f.theta_r, f.ci_theta_r), format_estimate(f.theta_m, f.ci_theta_m))
            for cov, f in fits.items()]
    lines.append(_table(rows))
    lines.append(f"first-stage partial F={fmt2(diag.partial_f)} {verdict} "
                 f"(threshold {fmt2(diag.threshold)}, {diag.n_instruments} instrument(s), "
                 f"df={diag.df_num},{diag.df_denom})")
    if diag.first_stage_or is not None:
        adj = "X-adjusted" if diag.or_adjusted else "unadjusted"
        lines.append(f"first-stage mediator odds ratio ({adj}): "
                     f"{format_estimate(diag.first_stage_or, diag.first_stage_or_ci)}")
    for note in diag.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def cmd_sensitivity(config: RunConfig) -> str:
    data = _load(config)
    cov = "homoskedastic" if config.covariance == "both" else config.covariance
    grid = run_grid(data, config.tau_r, config.tau_m, order=config.grid_order,
                    ci_level=config.ci_level, dof_adjust=config.dof_adjust,
                    covariance=cov, workers=config.workers)
    if config.format == "json":
        return json.dumps(_envelope(config, data, covariance=cov, grid=grid.to_records(),
                                    summary=grid.summary()), indent=2, sort_keys=True)
    if config.format == "csv":
        return grid.to_csv()
    return grid.format_table()


def cmd_simulate(config: RunConfig) -> str:
    spec = load_scenario(config.scenario)
    overrides = {}
    if config.seed is not None:
        overrides["seed"] = int(config.seed)
    if config.n is not None:
        overrides["n"] = int(config.n)
    if overrides:
        spec = spec.replace(**overrides)
    estimators = config.estimator or ["standard", "two_stage"]
    reports = [run_monte_carlo(spec, int(config.reps), est, ci_level=config.ci_level,
                               workers=config.workers) for est in estimators]
    moments = None
    if config.moments is not None:
        moments = check_moment_conditions(spec, int(config.moments), transform=config.transform)
    if config.format == "json":
        return json.dumps(_envelope(config, None, scenario=spec.to_dict(),
                                    reports=[r.to_dict() for r in reports],
                                    moments=None if moments is None else moments.to_dict()),
                          indent=2, sort_keys=True)
    if config.format == "csv":
        return mc_reports_csv(reports)
    parts = [r.format_text() for r in reports]
    if moments is not None:
        parts.append(moments.format_text())
    return "\n\n".join(parts)


HANDLERS = {"standard": cmd_standard, "iv": cmd_iv,
            "sensitivity": cmd_sensitivity, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivmediate",
        description="Mediation analysis with assignment-by-covariate instruments.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file with option values (flags override)")
    common.add_argument("--ci-level", type=float, dest="ci_level")
    common.add_argument("--format", choices=FORMATS)
    common.add_argument("--out", help="write the report to this file instead of stdout")
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--input", help="trial CSV file")
    data_opts.add_argument("--outcome")
    data_opts.add_argument("--assignment")
    data_opts.add_argument("--mediator")
    data_opts.add_argument("--x", action="append", default=[], help="instrumented covariate (repeatable)")
    data_opts.add_argument("--z", action="append", default=[], help="control-only covariate (repeatable)")
    data_opts.add_argument("--covariance", choices=COVARIANCES)
    data_opts.add_argument("--dof-adjust", action="store_true", default=None, dest="dof_adjust")
    data_opts.add_argument("--delimiter")
    data_opts.add_argument("--missing-policy", choices=("drop-row", "error"), dest="missing_policy")

    sub.add_parser("standard", parents=[common, data_opts], help="standard regression mediation")
    iv = sub.add_parser("iv", parents=[common, data_opts], help="2SLS with R*X instruments")
    iv.add_argument("--or-adjust-x", action="store_true", default=None, dest="or_adjust_x",
                    help="adjust the first-stage odds ratio for X")
    sens = sub.add_parser("sensitivity", parents=[common, data_opts], help="tau sensitivity grid")
    sens.add_argument("--tau-r", action="append", default=[], dest="tau_r", help='vector "a,b" (repeatable)')
    sens.add_argument("--tau-m", action="append", default=[], dest="tau_m", help='vector "a,b" (repeatable)')
    sens.add_argument("--grid-order", choices=("tau_m_outer", "tau_r_outer"), dest="grid_order")

    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo validation")
    sim.add_argument("--scenario", help="bundled scenario name or JSON/YAML scenario file")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--n", type=int, help="override sample size")
    sim.add_argument("--estimator", action="append", default=[], choices=ESTIMATORS)
    sim.add_argument("--moments", type=int, metavar="N", help="also run moment checks at sample size N")
    sim.add_argument("--transform", action="store_true", default=None,
                     help="moment checks at the scenario's true tau")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(stream=sys.stderr, format="%(name)s: %(message)s", level=logging.INFO)
    try:
        config = build_config(args)
        text = HANDLERS[config.command](config)
    except IvMediationError as exc:
        print(f"ivmediate: error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"ivmediate: error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    if not text.endswith("\n"):
        text += "\n"
    if config.out:
        Path(config.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
