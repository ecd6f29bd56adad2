"""Synthetic trials drawn from the heterogeneous-effects potential-outcome
model, and Monte Carlo harnesses that check the IV identification claims."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, InvalidSpec, IvMediationError, WeakInstrumentWarning
from .estimators import critical_value, fit_standard, fit_two_stage, sandwich_covariance
from .report import fmt2
from .sensitivity import TauPoint, fit_at_tau, transform_outcome

ESTIMATORS = ("standard", "two_stage", "at_tau")


@dataclass(frozen=True)
class ScenarioSpec:
    """Data-generating process.

    Mediator ``M(r) = gamma'[1, r, X, r*X] + confounding*U + mediator_noise_sd*eta_r``
    (thresholded at zero for ``mediator_kind="binary-threshold"``), and
    ``Y(0,0) = alpha + beta'X + confounding*U + noise``. Subject effects are
    ``theta_r_mean + tau_r_true'(X - x_mean) + theta_r_sd*xi`` and likewise
    for the mediator effect.
    """

    n: int = 500
    p: int = 2
    theta_r_mean: float = -1.0
    theta_m_mean: float = -2.0
    theta_r_sd: float = 0.0
    theta_m_sd: float = 0.0
    tau_r_true: tuple = (0.0, 0.0)
    tau_m_true: tuple = (0.0, 0.0)
    alpha: float = 10.0
    beta: tuple = (1.0, 0.5)
    gamma: tuple = (0.0, 0.5, 0.3, 0.2, 1.0, -0.8)
    confounding: float = 1.0
    noise_sd: float = 2.0
    mediator_noise_sd: float = 1.0
    mediator_kind: str = "continuous"
    seed: int = 0
    p_treat: float = 0.5
    x_mean: tuple = (0.0, 0.0)
    x_sd: tuple = (1.0, 1.0)
    heteroskedasticity: float = 0.0
    iv_a3_violation: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        for name in ("tau_r_true", "tau_m_true", "beta", "gamma", "x_mean", "x_sd"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        p = self.p
        if int(self.n) != self.n or self.n < 10:
            raise InvalidSpec(f"n must be an integer >= 10, got {self.n}")
        if int(p) != p or p < 1:
            raise InvalidSpec(f"p must be an integer >= 1, got {p}")
        for name in ("tau_r_true", "tau_m_true", "beta", "x_mean", "x_sd"):
            if len(getattr(self, name)) != p:
                raise InvalidSpec(f"{name} needs {p} entries, got {len(getattr(self, name))}")
        if len(self.gamma) != 2 + 2 * p:
            raise InvalidSpec(f"gamma needs {2 + 2 * p} entries [1, R, X, R*X], got {len(self.gamma)}")
        for name in ("theta_r_sd", "theta_m_sd", "noise_sd", "mediator_noise_sd", "heteroskedasticity"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative")
        if any(s < 0 for s in self.x_sd):
            raise InvalidSpec("x_sd must be non-negative")
        if not 0.0 < self.p_treat < 1.0:
            raise InvalidSpec("p_treat must lie in (0, 1)")
        if self.mediator_kind not in ("continuous", "binary-threshold"):
            raise InvalidSpec(f"unknown mediator_kind {self.mediator_kind!r}")
        values = [self.theta_r_mean, self.theta_m_mean, self.alpha, self.confounding,
                  self.iv_a3_violation, *self.tau_r_true, *self.tau_m_true, *self.beta,
                  *self.gamma, *self.x_mean]
        if not all(math.isfinite(v) for v in values):
            raise InvalidSpec("scenario parameters must be finite")

    @property
    def instruments_relevant(self) -> bool:
        """Whether any interaction entry of gamma is nonzero."""
        return any(g != 0.0 for g in self.gamma[2 + self.p:])

    @property
    def iv_a2_holds(self) -> bool:
        return not any(self.tau_r_true) and not any(self.tau_m_true)

    def replace(self, **changes) -> "ScenarioSpec":
        data = asdict(self)
        data.update(changes)
        return ScenarioSpec(**data)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidSpec(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
        return cls(**data)


SCENARIOS = {
    "confounded-heterogeneous": dict(
        n=2000, theta_r_sd=1.0, theta_m_sd=1.0, confounding=1.5),
    "no-confounding": dict(
        n=2000, theta_r_sd=1.0, theta_m_sd=1.0, confounding=0.0),
    "homoskedastic": dict(n=500, confounding=1.0),
    "heteroskedastic": dict(n=500, confounding=1.0, theta_m_sd=0.5, heteroskedasticity=1.5),
    "tau-violation": dict(
        n=20000, theta_r_sd=0.5, theta_m_sd=0.5, confounding=1.0,
        tau_r_true=(1.0, -0.5), tau_m_true=(0.5, 1.0)),
    "iv-a3-violation": dict(
        n=2000, theta_m_sd=0.5, confounding=1.0, iv_a3_violation=1.0),
    "binary-mediator": dict(
        n=2000, mediator_kind="binary-threshold", confounding=0.8,
        gamma=(-0.3, 0.8, 0.4, 0.2, 1.2, -0.6)),
}


def load_scenario(ref) -> ScenarioSpec:
    """Resolve a bundled scenario name or a JSON/YAML scenario file."""
    if isinstance(ref, ScenarioSpec):
        return ref
    if isinstance(ref, dict):
        return ScenarioSpec.from_dict(ref)
    ref = str(ref)
    if ref in SCENARIOS:
        return ScenarioSpec(name=ref, **SCENARIOS[ref])
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"no bundled scenario or file named {ref!r}; "
                          f"bundled: {', '.join(sorted(SCENARIOS))}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml
        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise InvalidSpec(f"{path} does not hold a mapping")
    if "base" in raw:
        base = raw.pop("base")
        if base not in SCENARIOS:
            raise InvalidSpec(f"unknown base scenario {base!r}")
        raw = {**SCENARIOS[base], "name": base, **raw}
    return ScenarioSpec.from_dict(raw)


@dataclass(frozen=True, eq=False)
class Truth:
    """Latent quantities behind a generated sample."""

    theta_r_i: np.ndarray
    theta_m_i: np.ndarray
    y00: np.ndarray
    y00_mean_given_x: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    u: np.ndarray
    x_mean: np.ndarray


def generate(spec: ScenarioSpec, rng: np.random.Generator | None = None):
    """Draw one trial; returns ``(Dataset, Truth)``.

    Observed values follow consistency: ``M = M(R)`` and
    ``Y = Y(0,0) + theta_m_i * M + theta_r_i * R``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    x_mean = np.asarray(spec.x_mean)
    x = x_mean + rng.standard_normal((n, p)) * np.asarray(spec.x_sd)
    u = rng.standard_normal(n)
    r = (rng.random(n) < spec.p_treat).astype(float)
    eta0 = rng.standard_normal(n)
    eta1 = rng.standard_normal(n)
    xi_r = rng.standard_normal(n)
    xi_m = rng.standard_normal(n)
    e_y = rng.standard_normal(n)

    xc = x - x_mean
    theta_r_i = spec.theta_r_mean + xc @ np.asarray(spec.tau_r_true) + spec.theta_r_sd * xi_r
    theta_m_i = spec.theta_m_mean + xc @ np.asarray(spec.tau_m_true) + spec.theta_m_sd * xi_m
    if spec.iv_a3_violation:
        # Couples the mediator effect to the treated-arm mediator shock.
        theta_m_i = theta_m_i + spec.iv_a3_violation * eta1 * xc[:, 0]

    g = np.asarray(spec.gamma)
    base = g[0] + x @ g[2:2 + p] + spec.confounding * u
    shift = g[1] + x @ g[2 + p:]
    m0 = base + spec.mediator_noise_sd * eta0
    m1 = base + shift + spec.mediator_noise_sd * eta1
    if spec.mediator_kind == "binary-threshold":
        m0 = (m0 > 0).astype(float)
        m1 = (m1 > 0).astype(float)

    scale = 1.0 + spec.heteroskedasticity * np.abs(xc[:, 0])
    y00_mean = spec.alpha + x @ np.asarray(spec.beta)
    y00 = y00_mean + spec.confounding * u + spec.noise_sd * scale * e_y

    m = np.where(r == 1, m1, m0)
    y = y00 + theta_m_i * m + theta_r_i * r
    data = Dataset(y=y, r=r, m=m, x=x, x_names=tuple(f"X{j + 1}" for j in range(p)))
    truth = Truth(theta_r_i=theta_r_i, theta_m_i=theta_m_i, y00=y00, y00_mean_given_x=y00_mean,
                  m0=m0, m1=m1, u=u, x_mean=x_mean)
    return data, truth


def sample_covariance(a, b):
    """Sample covariance and its MC standard error (SD of centered products / sqrt(n))."""
    prod = (a - a.mean()) * (b - b.mean())
    n = prod.shape[0]
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(n))


def _fit(estimator, spec, data):
    if estimator == "standard":
        return fit_standard(data), data
    if estimator == "two_stage":
        return fit_two_stage(data, warn_weak=False), data
    if estimator == "at_tau":
        tau = TauPoint(spec.tau_r_true, spec.tau_m_true)
        adjusted = data.with_outcome(transform_outcome(data, tau))
        return fit_at_tau(data, tau), adjusted
    raise ConfigError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")


def _replicate(spec, estimator, seed_seq, z):
    data, _ = generate(spec, np.random.default_rng(seed_seq))
    fit, used = _fit(estimator, spec, data)
    se_h = fit.std_errors[-2:]
    se_s = np.sqrt(np.clip(np.diag(sandwich_covariance(fit, used))[-2:], 0, None))
    est = np.array([fit.theta_r, fit.theta_m])
    rx = data.r[:, None] * data.x
    covs = [sample_covariance(rx[:, j], fit.residuals)[0] for j in range(spec.p)]
    return est, se_h, se_s, np.asarray(covs)


@dataclass(frozen=True)
class McReport:
    scenario: str
    estimator: str
    n: int
    replications: int
    n_failed: int
    truth: dict
    mean_estimates: dict
    sd_estimates: dict
    bias: dict
    bias_mc_se: dict
    coverage: dict
    moment_checks: list
    failures: dict = field(default_factory=dict)
    ci_level: float = 0.95
    seed: int = 0

    def bias_in_se(self, param: str) -> float:
        se = self.bias_mc_se[param]
        return abs(self.bias[param]) / se if se > 0 else math.inf

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list:
        rows = []
        for param in ("theta_r", "theta_m"):
            rows.append([self.scenario, self.estimator, param, repr(self.truth[param]),
                         repr(self.mean_estimates[param]), repr(self.sd_estimates[param]),
                         repr(self.bias[param]), repr(self.bias_mc_se[param]),
                         repr(self.coverage["homoskedastic"][param]),
                         repr(self.coverage["sandwich"][param])])
        return rows

    def format_text(self) -> str:
        lines = [f"scenario={self.scenario} estimator={self.estimator} n={self.n} "
                 f"replications={self.replications} failed={self.n_failed} seed={self.seed}"]
        lines.append(f"{'param':<8} {'truth':>8} {'mean':>8} {'sd':>8} {'bias':>8} "
                     f"{'bias/mcse':>10} {'cov_homo':>9} {'cov_sand':>9}")
        for param in ("theta_r", "theta_m"):
            lines.append(
                f"{param:<8} {fmt2(self.truth[param]):>8} {fmt2(self.mean_estimates[param]):>8} "
                f"{fmt2(self.sd_estimates[param]):>8} {fmt2(self.bias[param]):>8} "
                f"{fmt2(self.bias_in_se(param)):>10} "
                f"{self.coverage['homoskedastic'][param]:>9.3f} {self.coverage['sandwich'][param]:>9.3f}")
        for chk in self.moment_checks:
            lines.append(f"moment cov({chk['instrument']}, resid) = {chk['mean_cov']:.3e} "
                         f"(mc se {chk['mc_se']:.3e})")
        return "\n".join(lines)


def run_monte_carlo(spec: ScenarioSpec, replications: int, estimator: str = "two_stage",
                    ci_level: float = 0.95, workers: int = 1) -> McReport:
    """Repeat generate-then-fit with independent child seeds of ``spec.seed``."""
    if int(replications) != replications or replications < 2:
        raise ConfigError(f"replications must be an integer >= 2, got {replications}")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    children = np.random.SeedSequence(spec.seed).spawn(int(replications))
    z = critical_value(ci_level)

    def one(seq):
        try:
            return _replicate(spec, estimator, seq, z)
        except IvMediationError as exc:
            return type(exc).__name__

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakInstrumentWarning)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, children))
        else:
            results = [one(seq) for seq in children]

    failures = {}
    ok = []
    for res in results:
        if isinstance(res, str):
            failures[res] = failures.get(res, 0) + 1
        else:
            ok.append(res)
    params = ("theta_r", "theta_m")
    truth = {"theta_r": spec.theta_r_mean, "theta_m": spec.theta_m_mean}
    nan = {k: math.nan for k in params}
    if not ok:
        return McReport(spec.name, estimator, spec.n, int(replications), len(results), truth,
                        nan, nan, nan, nan, {"homoskedastic": nan, "sandwich": nan}, [],
                        failures, ci_level, spec.seed)

    est = np.array([o[0] for o in ok])
    se_h = np.array([o[1] for o in ok])
    se_s = np.array([o[2] for o in ok])
    covs = np.array([o[3] for o in ok])
    k = est.shape[0]
    true = np.array([truth[p] for p in params])
    mean = est.mean(axis=0)
    sd = est.std(axis=0, ddof=1) if k > 1 else np.full(2, math.inf)
    mc_se = sd / math.sqrt(k)
    hit_h = (np.abs(est - true) <= z * se_h).mean(axis=0)
    hit_s = (np.abs(est - true) <= z * se_s).mean(axis=0)
    cov_sd = covs.std(axis=0, ddof=1) if k > 1 else np.full(spec.p, math.inf)
    moments = [{"instrument": f"R:X{j + 1}", "mean_cov": float(covs[:, j].mean()),
                "mc_se": float(cov_sd[j] / math.sqrt(k))} for j in range(spec.p)]
    as_dict = lambda arr: {p: float(v) for p, v in zip(params, arr)}
    return McReport(
        scenario=spec.name, estimator=estimator, n=spec.n, replications=int(replications),
        n_failed=len(results) - k, truth=truth, mean_estimates=as_dict(mean),
        sd_estimates=as_dict(sd), bias=as_dict(mean - true), bias_mc_se=as_dict(mc_se),
        coverage={"homoskedastic": as_dict(hit_h), "sandwich": as_dict(hit_s)},
        moment_checks=moments, failures=failures, ci_level=ci_level, seed=spec.seed,
    )


@dataclass(frozen=True)
class MomentCheck:
    instrument: str
    term: str
    covariance: float
    mc_se: float
    flagged: bool

    @property
    def z(self) -> float:
        if self.mc_se > 0:
            return self.covariance / self.mc_se
        return 0.0 if self.covariance == 0 else math.copysign(math.inf, self.covariance)


@dataclass(frozen=True)
class MomentReport:
    scenario: str
    n: int
    transformed: bool
    flag_threshold: float
    checks: list

    @property
    def any_flagged(self) -> bool:
        return any(c.flagged for c in self.checks)

    def flagged_terms(self) -> set:
        return {c.term for c in self.checks if c.flagged}

    def to_dict(self) -> dict:
        out = asdict(self)
        for c, d in zip(self.checks, out["checks"]):
            d["z"] = c.z
        return out

    def format_text(self) -> str:
        lines = [f"moment checks scenario={self.scenario} n={self.n} "
                 f"transformed={self.transformed} flag>|{self.flag_threshold:g}| se"]
        for c in self.checks:
            mark = "FLAG" if c.flagged else "ok"
            lines.append(f"  cov({c.instrument}, {c.term:<18}) = {c.covariance: .4e}  "
                         f"se {c.mc_se:.4e}  z {c.z: .2f}  {mark}")
        return "\n".join(lines)


def check_moment_conditions(spec: ScenarioSpec, n_large: int = 200_000,
                            transform: bool = False, flag_sd: float = 4.0) -> MomentReport:
    """Covariances of each ``R * X_j`` with the three structural-error summands,
    the total error, and the fitted 2SLS residual, on one large sample.

    With ``transform=True`` the effects are centered at their conditional
    means under the scenario's true slopes and the residual comes from the
    adjusted-outcome fit.
    """
    if n_large < 10_000:
        raise InvalidSpec(f"n_large must be >= 10000, got {n_large}")
    big = spec.replace(n=int(n_large))
    data, truth = generate(big)
    if transform:
        tau = TauPoint(spec.tau_r_true, spec.tau_m_true).resolve(data)
        xc = data.x - np.asarray(tau.x_reference)
        mean_r = spec.theta_r_mean + xc @ np.asarray(tau.tau_r)
        mean_m = spec.theta_m_mean + xc @ np.asarray(tau.tau_m)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WeakInstrumentWarning)
            fit = fit_at_tau(data, tau)
    else:
        mean_r = spec.theta_r_mean
        mean_m = spec.theta_m_mean
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WeakInstrumentWarning)
            fit = fit_two_stage(data, warn_weak=False)

    terms = {
        "direct_effect": (truth.theta_r_i - mean_r) * data.r,
        "mediator_effect": (truth.theta_m_i - mean_m) * data.m,
        "baseline_outcome": truth.y00 - truth.y00_mean_given_x,
    }
    terms["total_error"] = sum(terms.values())
    terms["fitted_residual"] = fit.residuals

    checks = []
    rx = data.r[:, None] * data.x
    for j, name in enumerate(data.x_names):
        for term, values in terms.items():
            c, se = sample_covariance(rx[:, j], values)
            checks.append(MomentCheck(f"R:{name}", term, c, se, bool(abs(c) > flag_sd * se)))
    return MomentReport(scenario=spec.name, n=int(n_large), transformed=transform,
                        flag_threshold=flag_sd, checks=checks)


def mc_reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "estimator", "param", "truth", "mean", "sd", "bias",
                     "bias_mc_se", "coverage_homoskedastic", "coverage_sandwich"])
    for rep in reports:
        writer.writerows(rep.csv_rows())
    return buf.getvalue()
