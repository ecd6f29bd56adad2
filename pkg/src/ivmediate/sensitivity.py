"""Sensitivity of 2SLS mediation estimates to covariate-dependent effects.

The direct and mediator effects are allowed to drift linearly in the
instrumented covariates with slopes ``tau_r`` and ``tau_m``. For a given
slope pair the outcome is adjusted and the usual 2SLS fit is rerun.
"""
from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DimensionMismatch, IvMediationError
from .estimators import MediationFit, fit_two_stage, robust
from .report import fmt2, format_estimate


@dataclass(frozen=True)
class TauPoint:
    tau_r: tuple
    tau_m: tuple
    x_reference: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "tau_r", tuple(float(v) for v in np.ravel(self.tau_r)))
        object.__setattr__(self, "tau_m", tuple(float(v) for v in np.ravel(self.tau_m)))
        if self.x_reference is not None:
            object.__setattr__(self, "x_reference",
                               tuple(float(v) for v in np.ravel(self.x_reference)))
        values = self.tau_r + self.tau_m + (self.x_reference or ())
        if not all(np.isfinite(values)):
            raise ConfigError("sensitivity parameters must be finite")

    @property
    def is_zero(self) -> bool:
        return not any(self.tau_r) and not any(self.tau_m)

    def resolve(self, data: Dataset) -> "TauPoint":
        """Check lengths against ``data`` and fill in the sample-mean reference."""
        p = data.p
        if len(self.tau_r) != p or len(self.tau_m) != p:
            raise DimensionMismatch(
                f"tau vectors need {p} entries, got {len(self.tau_r)} and {len(self.tau_m)}")
        if self.x_reference is None:
            return TauPoint(self.tau_r, self.tau_m, tuple(data.x_means))
        if len(self.x_reference) != p:
            raise DimensionMismatch(f"x_reference needs {p} entries, got {len(self.x_reference)}")
        return self


def transform_outcome(data: Dataset, tau: TauPoint) -> np.ndarray:
    """``Y - R * tau_r'(X - x_ref) - M * tau_m'(X - x_ref)``."""
    tau = tau.resolve(data)
    centered = data.x - np.asarray(tau.x_reference)
    return (data.y
            - data.r * (centered @ np.asarray(tau.tau_r))
            - data.m * (centered @ np.asarray(tau.tau_m)))


def fit_at_tau(data: Dataset, tau: TauPoint, ci_level: float = 0.95,
               dof_adjust: bool = False, warn_weak: bool = False) -> MediationFit:
    """2SLS on the adjusted outcome; the first stage still uses observed M."""
    adjusted = data.with_outcome(transform_outcome(data, tau))
    return fit_two_stage(adjusted, ci_level=ci_level, dof_adjust=dof_adjust,
                         warn_weak=warn_weak)


@dataclass(frozen=True, eq=False)
class SensitivityGrid:
    points: list
    fits: list
    errors: list = field(default_factory=list)
    base_index: int | None = None
    x_names: tuple = ()

    def summary(self) -> dict:
        ok = [f for f in self.fits if f is not None]
        if not ok:
            return {"n_points": len(self.points), "n_failed": len(self.points)}
        tr = [f.theta_r for f in ok]
        tm = [f.theta_m for f in ok]
        return {
            "n_points": len(self.points),
            "n_failed": len(self.points) - len(ok),
            "theta_r_min": min(tr), "theta_r_max": max(tr),
            "theta_m_min": min(tm), "theta_m_max": max(tm),
        }

    def rows(self):
        for point, fit, err in zip(self.points, self.fits, self.errors):
            yield point, fit, err

    def to_records(self) -> list:
        records = []
        for point, fit, err in self.rows():
            rec = {"tau_r": list(point.tau_r), "tau_m": list(point.tau_m),
                   "x_reference": list(point.x_reference or ())}
            if fit is None:
                rec["error"] = err
            else:
                rec.update({
                    "theta_r": fit.theta_r, "ci_theta_r": list(fit.ci_theta_r),
                    "theta_m": fit.theta_m, "ci_theta_m": list(fit.ci_theta_m),
                    "covariance_type": fit.covariance_type,
                })
            records.append(rec)
        return records

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tau_r", "tau_m", "theta_r", "theta_r_lo", "theta_r_hi",
                         "theta_m", "theta_m_lo", "theta_m_hi", "error"])
        for point, fit, err in self.rows():
            tr = ";".join(repr(v) for v in point.tau_r)
            tm = ";".join(repr(v) for v in point.tau_m)
            if fit is None:
                writer.writerow([tr, tm, "", "", "", "", "", "", err])
            else:
                writer.writerow([tr, tm, repr(fit.theta_r), *map(repr, fit.ci_theta_r),
                                 repr(fit.theta_m), *map(repr, fit.ci_theta_m), ""])
        return buf.getvalue()

    def format_table(self) -> str:
        def vec(values):
            return "(" + ",".join(_short(v) for v in values) + ")"

        header = ("tau_R", "tau_M", "Direct effect of intervention", "Mediator effect")
        body = []
        for point, fit, err in self.rows():
            if fit is None:
                body.append((vec(point.tau_r), vec(point.tau_m), f"failed: {err}", ""))
            else:
                body.append((vec(point.tau_r), vec(point.tau_m),
                             format_estimate(fit.theta_r, fit.ci_theta_r),
                             format_estimate(fit.theta_m, fit.ci_theta_m)))
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
        lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths)),
                 "-+-".join("-" * w for w in widths)]
        lines += [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
        s = self.summary()
        if "theta_r_min" in s:
            lines.append("")
            lines.append(f"direct effect range: {fmt2(s['theta_r_min'])} to {fmt2(s['theta_r_max'])}")
            lines.append(f"mediator effect range: {fmt2(s['theta_m_min'])} to {fmt2(s['theta_m_max'])}")
        if s.get("n_failed"):
            lines.append(f"failed grid points: {s['n_failed']}")
        return "\n".join(lines)


def _short(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def grid_points(tau_r_values, tau_m_values, order: str = "tau_m_outer") -> list:
    """Cartesian product of slope vectors; default has ``tau_m`` varying slowest."""
    tau_r_values = [tuple(v) for v in tau_r_values]
    tau_m_values = [tuple(v) for v in tau_m_values]
    if not tau_r_values or not tau_m_values:
        raise ConfigError("sensitivity grid needs at least one tau_r and one tau_m vector")
    if order == "tau_m_outer":
        return [TauPoint(tr, tm) for tm, tr in itertools.product(tau_m_values, tau_r_values)]
    if order == "tau_r_outer":
        return [TauPoint(tr, tm) for tr, tm in itertools.product(tau_r_values, tau_m_values)]
    raise ConfigError(f"unknown grid order {order!r}")


def run_grid(data: Dataset, tau_r_values, tau_m_values, order: str = "tau_m_outer",
             ci_level: float = 0.95, dof_adjust: bool = False, covariance: str = "homoskedastic",
             workers: int = 1) -> SensitivityGrid:
    """Evaluate :func:`fit_at_tau` over a grid, recording failures per point."""
    if covariance not in ("homoskedastic", "sandwich"):
        raise ConfigError(f"grid covariance must be homoskedastic or sandwich, got {covariance!r}")
    x_ref = tuple(data.x_means)
    points = [TauPoint(pt.tau_r, pt.tau_m, x_ref)
              for pt in grid_points(tau_r_values, tau_m_values, order)]

    def one(point):
        try:
            fit = fit_at_tau(data, point, ci_level=ci_level, dof_adjust=dof_adjust)
            if covariance == "sandwich":
                fit = robust(fit, data.with_outcome(transform_outcome(data, point)))
            return fit, None
        except IvMediationError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(pt) for pt in points]

    base = next((i for i, pt in enumerate(points) if pt.is_zero), None)
    return SensitivityGrid(points=points, fits=[r[0] for r in results],
                           errors=[r[1] for r in results], base_index=base,
                           x_names=data.x_names)
