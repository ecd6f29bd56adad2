"""Mediation estimators: standard regression, two-step direct effect, and
2SLS with assignment-by-covariate interactions as instruments."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import stats

from .dataset import Dataset, build_designs
from .errors import (
    ConfigError,
    DimensionMismatch,
    InvalidCount,
    NonBinaryMediator,
    NumericalError,
    ThresholdExtrapolationWarning,
    WeakInstrumentWarning,
)
from .numkit import solve_least_squares, fit_logistic

# Stock-Wright-Yogo critical values for the first-stage F, keyed by instrument count.
WEAK_IV_THRESHOLDS = {1: 8.96, 2: 11.59, 3: 12.83, 5: 15.09, 10: 20.88, 15: 26.80}


class Method(str, Enum):
    STANDARD = "standard"
    TWO_STAGE = "two_stage"


def critical_value(level: float, use_t: bool = False, df: int | None = None) -> float:
    if not 0.0 < level < 1.0:
        raise ConfigError(f"ci_level must lie in (0, 1), got {level}")
    upper = 0.5 + level / 2.0
    if use_t:
        return float(stats.t.ppf(upper, df))
    return float(stats.norm.ppf(upper))


@dataclass(frozen=True, eq=False)
class MediationFit:
    """Coefficients ``(alpha, beta, theta_r, theta_m)`` with covariance.

    ``beta`` stacks the X coefficients followed by the Z coefficients.
    ``residuals`` always use the observed mediator.
    """

    method: Method
    alpha: float
    beta: np.ndarray
    theta_r: float
    theta_m: float
    covariance: np.ndarray
    residuals: np.ndarray
    sigma2_hat: float
    ci_level: float = 0.95
    design: np.ndarray = field(default=None, repr=False)
    bread: np.ndarray = field(default=None, repr=False)
    names: tuple = ()
    covariance_type: str = "homoskedastic"
    use_t: bool = False
    first_stage_coefficients: np.ndarray | None = field(default=None, repr=False)
    fitted_mediator: np.ndarray | None = field(default=None, repr=False)
    warnings: tuple = ()

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.beta, [self.theta_r, self.theta_m]])

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def nobs(self) -> int:
        return self.residuals.shape[0]

    def _crit(self, level):
        df = self.nobs - self.params.shape[0]
        return critical_value(level, self.use_t, df)

    def conf_int(self, level: float | None = None) -> np.ndarray:
        """(k, 2) array of intervals for every coefficient."""
        z = self._crit(self.ci_level if level is None else level)
        half = z * self.std_errors
        return np.column_stack([self.params - half, self.params + half])

    @property
    def ci_theta_r(self) -> tuple:
        lo, hi = self.conf_int()[-2]
        return (float(lo), float(hi))

    @property
    def ci_theta_m(self) -> tuple:
        lo, hi = self.conf_int()[-1]
        return (float(lo), float(hi))

    def with_covariance(self, covariance, covariance_type: str) -> "MediationFit":
        return replace(self, covariance=covariance, covariance_type=covariance_type)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "covariance_type": self.covariance_type,
            "ci_level": self.ci_level,
            "nobs": self.nobs,
            "names": list(self.names),
            "params": self.params.tolist(),
            "std_errors": self.std_errors.tolist(),
            "theta_r": self.theta_r,
            "theta_m": self.theta_m,
            "ci_theta_r": list(self.ci_theta_r),
            "ci_theta_m": list(self.ci_theta_m),
            "sigma2_hat": self.sigma2_hat,
            "covariance": self.covariance.tolist(),
        }


def _sigma2(resid, k, dof_adjust):
    n = resid.shape[0]
    denom = n - k if dof_adjust else n
    if denom <= 0:
        raise NumericalError("no residual degrees of freedom")
    return float(resid @ resid) / denom


def _symmetrize(mat):
    return 0.5 * (mat + mat.T)


def _split(coef):
    return float(coef[0]), np.array(coef[1:-2]), float(coef[-2]), float(coef[-1])


def fit_standard(data: Dataset, ci_level: float = 0.95, dof_adjust: bool = False,
                 use_t: bool = False) -> MediationFit:
    """OLS of Y on ``[1, X, Z, R, M]`` with homoskedastic covariance."""
    bundle = build_designs(data)
    design = bundle.second_stage(data.m)
    sol = solve_least_squares(design, data.y)
    k = design.shape[1]
    s2 = _sigma2(sol.residuals, k, dof_adjust)
    alpha, beta, theta_r, theta_m = _split(sol.coefficients)
    return MediationFit(
        method=Method.STANDARD, alpha=alpha, beta=beta, theta_r=theta_r, theta_m=theta_m,
        covariance=_symmetrize(s2 * sol.xtx_inverse), residuals=sol.residuals,
        sigma2_hat=s2, ci_level=ci_level, design=design, bread=sol.xtx_inverse,
        names=bundle.second_stage_names, use_t=use_t,
    )


@dataclass(frozen=True)
class DirectEffectEstimate:
    theta_r: float
    std_error: float
    ci: tuple
    theta_m_used: float
    # The SE treats theta_m_used as known; first-step uncertainty is ignored.
    accounts_for_first_step: bool = False


def fit_mediator_effect(data: Dataset, post_confounders) -> float:
    """Mediator coefficient from OLS of Y on ``[1, X, Z, R, M, post]``."""
    post = np.asarray(post_confounders, dtype=float).reshape(data.n, -1)
    bundle = build_designs(data)
    design = np.column_stack([bundle.exogenous, data.m, post])
    return float(solve_least_squares(design, data.y).coefficients[bundle.exogenous.shape[1]])


def fit_direct_adjusted(data: Dataset, theta_m_hat: float | None = None,
                        post_confounders=None, ci_level: float = 0.95,
                        dof_adjust: bool = False) -> DirectEffectEstimate:
    """Direct effect from regressing ``Y - theta_m_hat * M`` on ``[1, X, Z, R]``.

    If ``theta_m_hat`` is omitted it is estimated first by
    :func:`fit_mediator_effect` on ``post_confounders``.
    """
    if post_confounders is not None:
        post = np.asarray(post_confounders, dtype=float)
        if post.shape[0] != data.n:
            raise DimensionMismatch(f"post_confounders has {post.shape[0]} rows, expected {data.n}")
    if theta_m_hat is None:
        if post_confounders is None:
            raise ConfigError("either theta_m_hat or post_confounders is required")
        theta_m_hat = fit_mediator_effect(data, post_confounders)
    theta_m_hat = float(theta_m_hat)
    if not np.isfinite(theta_m_hat):
        raise ConfigError("theta_m_hat must be finite")

    exog = build_designs(data).exogenous
    sol = solve_least_squares(exog, data.y - theta_m_hat * data.m)
    s2 = _sigma2(sol.residuals, exog.shape[1], dof_adjust)
    se = float(np.sqrt(s2 * sol.xtx_inverse[-1, -1]))
    est = float(sol.coefficients[-1])
    z = critical_value(ci_level)
    return DirectEffectEstimate(theta_r=est, std_error=se, ci=(est - z * se, est + z * se),
                                theta_m_used=theta_m_hat)


def fit_two_stage(data: Dataset, ci_level: float = 0.95, dof_adjust: bool = False,
                  use_t: bool = False, warn_weak: bool = True) -> MediationFit:
    """2SLS using ``R * X`` as instruments for the mediator.

    Stage 1 regresses M on ``[1, R, X, Z, R*X]``; stage 2 regresses Y on
    ``[1, X, Z, R, M_hat]``. The homoskedastic covariance is
    ``sigma2 * (A'A)^-1`` with A the stage-2 design, and sigma2 comes from
    residuals evaluated at the observed mediator.
    """
    if data.p < 1:
        raise ConfigError("two-stage fit needs at least one instrumented covariate")
    bundle = build_designs(data)
    first = solve_least_squares(bundle.first_stage, data.m)
    m_hat = data.m - first.residuals
    design = bundle.second_stage(m_hat)
    second = solve_least_squares(design, data.y)
    coef = second.coefficients
    resid = data.y - bundle.second_stage(data.m) @ coef
    k = design.shape[1]
    s2 = _sigma2(resid, k, dof_adjust)
    alpha, beta, theta_r, theta_m = _split(coef)

    notes = ()
    if warn_weak:
        diag = _partial_f_from(bundle, data, first.rss)
        if not diag[0] > diag[2]:
            msg = (f"weak instruments: first-stage partial F={diag[0]:.2f} "
                   f"<= threshold {diag[2]:.2f} for {data.p} instrument(s)")
            warnings.warn(msg, WeakInstrumentWarning, stacklevel=2)
            notes = (msg,)

    return MediationFit(
        method=Method.TWO_STAGE, alpha=alpha, beta=beta, theta_r=theta_r, theta_m=theta_m,
        covariance=_symmetrize(s2 * second.xtx_inverse), residuals=resid, sigma2_hat=s2,
        ci_level=ci_level, design=design, bread=second.xtx_inverse,
        names=bundle.second_stage_names, use_t=use_t,
        first_stage_coefficients=first.coefficients, fitted_mediator=m_hat, warnings=notes,
    )


def sandwich_covariance(fit: MediationFit, data: Dataset, meat: str = "fitted") -> np.ndarray:
    """Heteroskedasticity-robust covariance ``B^-1 (sum e_i^2 a_i a_i') B^-1``.

    ``B = A'A`` for the design used in estimation (fitted mediator for
    2SLS). ``meat="fitted"`` builds ``a_i`` from that same design, which
    is the consistent choice; ``meat="observed"`` uses rows
    ``(1, X_i, Z_i, R_i, M_i)`` with the observed mediator.
    """
    a = fit.design
    if a is None or fit.bread is None:
        raise ConfigError("fit carries no design matrix")
    if meat == "fitted":
        rows = a
    elif meat == "observed":
        rows = build_designs(data).second_stage(data.m)
    else:
        raise ConfigError(f"meat must be 'fitted' or 'observed', got {meat!r}")
    if rows.shape[0] != fit.residuals.shape[0]:
        raise DimensionMismatch("data and fit have different numbers of rows")
    bread = fit.bread
    e = fit.residuals
    middle = rows.T @ (rows * (e * e)[:, None])
    return _symmetrize(bread @ middle @ bread)


def robust(fit: MediationFit, data: Dataset, meat: str = "fitted") -> MediationFit:
    """Copy of ``fit`` carrying the sandwich covariance."""
    return fit.with_covariance(sandwich_covariance(fit, data, meat), "sandwich")


def weak_iv_threshold(n_instruments: int) -> float:
    """Critical first-stage F for ``n_instruments`` instruments.

    Unlisted counts take the value of the next listed count above; counts
    beyond 15 reuse 26.80 and emit :class:`ThresholdExtrapolationWarning`.
    """
    if isinstance(n_instruments, bool) or int(n_instruments) != n_instruments:
        raise InvalidCount(f"instrument count must be an integer, got {n_instruments!r}")
    n_instruments = int(n_instruments)
    if n_instruments < 1:
        raise InvalidCount(f"instrument count must be >= 1, got {n_instruments}")
    for count in sorted(WEAK_IV_THRESHOLDS):
        if n_instruments <= count:
            return WEAK_IV_THRESHOLDS[count]
    warnings.warn(f"no tabulated threshold for {n_instruments} instruments; using the value for 15",
                  ThresholdExtrapolationWarning, stacklevel=2)
    return WEAK_IV_THRESHOLDS[15]


@dataclass(frozen=True)
class IvDiagnostics:
    partial_f: float
    n_instruments: int
    threshold: float
    strong: bool
    first_stage_or: float | None
    first_stage_or_ci: tuple | None
    df_num: int = 0
    df_denom: int = 0
    or_adjusted: bool = False
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "partial_f": self.partial_f,
            "n_instruments": self.n_instruments,
            "df_num": self.df_num,
            "df_denom": self.df_denom,
            "threshold": self.threshold,
            "strong": self.strong,
            "first_stage_or": self.first_stage_or,
            "first_stage_or_ci": None if self.first_stage_or_ci is None else list(self.first_stage_or_ci),
            "or_adjusted": self.or_adjusted,
            "notes": list(self.notes),
        }


def _partial_f_from(bundle, data, rss_full):
    p = data.p
    restricted = solve_least_squares(bundle.restricted_first_stage, data.m)
    k_full = bundle.first_stage.shape[1]
    df_denom = data.n - k_full
    if df_denom <= 0:
        raise NumericalError("first stage has no residual degrees of freedom")
    num = max(restricted.rss - rss_full, 0.0) / p
    if rss_full <= 0.0:
        f = 0.0 if num == 0.0 else float("inf")
    else:
        f = num / (rss_full / df_denom)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdExtrapolationWarning)
        threshold = weak_iv_threshold(p)
    return float(f), df_denom, threshold


def first_stage_odds_ratio(data: Dataset, adjust_x: bool = False, ci_level: float = 0.95):
    """Odds ratio of a binary mediator for assignment, with a Wald interval."""
    if not np.all((data.m == 0) | (data.m == 1)):
        raise NonBinaryMediator("odds ratio requires a 0/1 mediator")
    cols = [np.ones(data.n), data.r]
    if adjust_x:
        cols.append(data.x)
    fit = fit_logistic(np.column_stack(cols), data.m)
    coef, se = fit.coefficients[1], fit.std_errors[1]
    z = critical_value(ci_level)
    return float(np.exp(coef)), (float(np.exp(coef - z * se)), float(np.exp(coef + z * se)))


def partial_f(data: Dataset, adjust_or_for_x: bool = False) -> IvDiagnostics:
    """First-stage partial F for the ``R * X`` instruments plus mediator odds ratio.

    ``F = [(RSS_r - RSS_f) / p] / [RSS_f / (n - k_f)]`` where the restricted
    model drops the interaction columns.
    """
    if data.p < 1:
        raise ConfigError("partial F needs at least one instrumented covariate")
    bundle = build_designs(data)
    full = solve_least_squares(bundle.first_stage, data.m)
    f, df_denom, threshold = _partial_f_from(bundle, data, full.rss)
    if data.p > max(WEAK_IV_THRESHOLDS):
        weak_iv_threshold(data.p)  # surfaces the extrapolation warning

    notes = []
    odds, odds_ci = None, None
    try:
        odds, odds_ci = first_stage_odds_ratio(data, adjust_x=adjust_or_for_x)
    except (NonBinaryMediator, NumericalError) as exc:
        notes.append(f"odds ratio unavailable: {exc}")
    return IvDiagnostics(
        partial_f=f, n_instruments=data.p, threshold=threshold, strong=bool(f > threshold),
        first_stage_or=odds, first_stage_or_ci=odds_ci, df_num=data.p, df_denom=df_denom,
        or_adjusted=adjust_or_for_x, notes=tuple(notes),
    )
