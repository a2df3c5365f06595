"""Point estimates, distributional tests and tail fits reproducing the limit
theorems at desk scale.

The edge speed is the regeneration ratio alpha = mean(X)/mean(Psi) over
break-point increments; the CLT variance uses the standard regeneration
plug-in mean[(X - alpha*Psi)^2]/mean(Psi), validated elsewhere against the
direct Monte Carlo variance rather than assumed.  Composite reports that run
several sub-tests (clt_report over a list of horizons, iid_report's nine
tests) apply a Bonferroni correction internally so that the report's
family-wise false-rejection rate equals its nominal level.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import stats


class DegenerateFitError(ValueError):
    """Tail fit attempted on data with no usable variation."""


# ---------------------------------------------------------------------------
# edge speed and CLT variance


@dataclass(frozen=True)
class EdgeSpeedEstimate:
    alpha_hat: float
    stderr: float
    n_increments: int

    def agrees_with(self, other_value: float, other_stderr: float, k: float = 2.0) -> bool:
        joint = math.hypot(self.stderr, other_stderr)
        return abs(self.alpha_hat - other_value) <= k * joint


def _xy(increments) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(increments, tuple) and len(increments) == 3:
        x, psi, m = increments
        return (
            np.asarray(x, dtype=float),
            np.asarray(psi, dtype=float),
            np.asarray(m, dtype=float),
        )
    xs = np.array([inc.x for inc in increments], dtype=float)
    ps = np.array([inc.psi for inc in increments], dtype=float)
    ms = np.array([inc.m for inc in increments], dtype=float)
    return xs, ps, ms


def estimate_alpha(increments) -> EdgeSpeedEstimate:
    """alpha_hat = mean(X)/mean(Psi) with a delta-method standard error.

    The residuals X - alpha_hat*Psi have exact sample mean zero, so the
    stderr is sqrt(mean(residual^2)/n)/mean(Psi).
    """
    x, psi, _ = _xy(increments)
    if x.size < 2:
        raise ValueError("need at least two increments")
    alpha = float(x.mean() / psi.mean())
    resid = x - alpha * psi
    stderr = float(math.sqrt(np.mean(resid**2) / x.size) / psi.mean())
    return EdgeSpeedEstimate(alpha_hat=alpha, stderr=stderr, n_increments=int(x.size))


def estimate_sigma2(increments, alpha_hat: float) -> float:
    """Regeneration plug-in CLT variance mean[(X - alpha*Psi)^2]/mean(Psi)."""
    x, psi, _ = _xy(increments)
    if x.size < 2:
        raise ValueError("need at least two increments")
    s2 = float(np.mean((x - alpha_hat * psi) ** 2) / psi.mean())
    if s2 == 0.0:
        warnings.warn("degenerate increments: sigma2_hat = 0, CLT test not applicable")
    return s2


# ---------------------------------------------------------------------------
# CLT report


@dataclass
class CltHorizonResult:
    t: float
    n: int
    ks: float
    threshold: float
    status: str  # "pass" | "fail" | "inconclusive"


@dataclass
class CltReport:
    sigma2_hat: float
    level: float
    results: list[CltHorizonResult] = field(default_factory=list)

    @property
    def sample_times(self) -> list[float]:
        return [r.t for r in self.results]

    @property
    def ks_statistics(self) -> list[float]:
        return [r.ks for r in self.results]

    @property
    def passed(self) -> bool:
        return all(r.status == "pass" for r in self.results) and bool(self.results)

    @property
    def inconclusive(self) -> bool:
        return any(r.status == "inconclusive" for r in self.results)

    def to_dict(self) -> dict:
        return {
            "sigma2_hat": self.sigma2_hat,
            "level": self.level,
            "passed": self.passed,
            "results": [vars(r) for r in self.results],
        }


def clt_report(
    r_by_horizon: dict[float, np.ndarray],
    alpha_hat: float,
    sigma2_hat: float,
    level: float = 0.01,
    min_survivors: int = 100,
) -> CltReport:
    """KS test of (r_T - alpha*T)/sqrt(T*sigma2) against N(0,1) per horizon.

    `r_by_horizon` maps T to the rightmost values of replicas surviving to T.
    Each horizon is tested at level/len(horizons) (Bonferroni), making the
    whole report's false-rejection rate at most `level`.
    """
    if sigma2_hat <= 0:
        raise ValueError("sigma2_hat must be positive for the CLT test")
    report = CltReport(sigma2_hat=sigma2_hat, level=level)
    per_test = level / max(len(r_by_horizon), 1)
    for t in sorted(r_by_horizon):
        r = np.asarray(r_by_horizon[t], dtype=float)
        n = r.size
        if n < min_survivors:
            report.results.append(CltHorizonResult(t, n, float("nan"), float("nan"), "inconclusive"))
            continue
        z = (r - alpha_hat * t) / math.sqrt(t * sigma2_hat)
        ks = stats.ks_distance_to_standard_normal(z)
        thr = stats.ks_critical_1samp(n, per_test)
        report.results.append(
            CltHorizonResult(t, n, ks, thr, "pass" if ks < thr else "fail")
        )
    return report


# ---------------------------------------------------------------------------
# density / occupancy


def estimate_theta(occupancies: np.ndarray) -> float:
    """Mean occupancy fraction of the all-infected contact process."""
    occ = np.asarray(occupancies, dtype=float)
    if occ.size == 0:
        raise ValueError("no occupancy samples")
    return float(occ.mean())


@dataclass
class DensityCheck:
    t: float
    n_survivors: int
    mean_ratio: float  # mean |I_t|/t over survivors
    target: float      # 2 * alpha_hat * theta_hat
    rel_error: float
    status: str


@dataclass
class SymmetryCheck:
    t: float
    mean_l_over_t: float
    stderr: float
    target: float  # -alpha_hat
    within: bool


@dataclass
class DensityReport:
    theta_hat: float
    beta_hat: float
    ratio_checks: list[DensityCheck] = field(default_factory=list)
    symmetry_checks: list[SymmetryCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok_ratio = all(c.status == "pass" for c in self.ratio_checks) and bool(self.ratio_checks)
        ok_sym = all(c.within for c in self.symmetry_checks)
        return ok_ratio and ok_sym

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "beta_hat": self.beta_hat,
            "passed": self.passed,
            "ratio_checks": [vars(c) for c in self.ratio_checks],
            "symmetry_checks": [vars(c) for c in self.symmetry_checks],
        }


def density_report(
    per_time: dict[float, tuple[np.ndarray, np.ndarray]],
    alpha_hat: float,
    alpha_stderr: float,
    theta_hat: float,
    beta_hat: float,
    rel_tol: float = 0.07,
    min_survivors: int = 10,
) -> DensityReport:
    """|I_t|/t against 2*alpha*theta and l_t/t against -alpha (2 SE).

    `per_time` maps t to (counts, leftmosts) over surviving replicas.
    """
    report = DensityReport(theta_hat=theta_hat, beta_hat=beta_hat)
    target = 2.0 * alpha_hat * theta_hat
    for t in sorted(per_time):
        counts, lefts = per_time[t]
        counts = np.asarray(counts, dtype=float)
        lefts = np.asarray(lefts, dtype=float)
        n = counts.size
        if n < min_survivors:
            report.ratio_checks.append(
                DensityCheck(t, n, float("nan"), target, float("nan"), "inconclusive")
            )
            continue
        mean_ratio = float(counts.mean() / t)
        rel = abs(mean_ratio - target) / target if target > 0 else float("inf")
        report.ratio_checks.append(
            DensityCheck(t, n, mean_ratio, target, rel, "pass" if rel <= rel_tol else "fail")
        )
        mean_l = float(lefts.mean() / t)
        se = float(lefts.std(ddof=1) / t / math.sqrt(n))
        joint = math.hypot(se, alpha_stderr)
        report.symmetry_checks.append(
            SymmetryCheck(t, mean_l, se, -alpha_hat, abs(mean_l + alpha_hat) <= 2.0 * joint)
        )
    return report


# ---------------------------------------------------------------------------
# complete convergence


@dataclass
class ConvergenceEntry:
    f_set: tuple[int, ...]
    lhs: float
    lhs_ci: tuple[float, float]
    rhs: float
    rhs_ci: tuple[float, float]
    overlap: bool


@dataclass
class ConvergenceReport:
    t_eval: float
    beta_hat: float
    level: float
    entries: list[ConvergenceEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.overlap for e in self.entries) and bool(self.entries)

    def to_dict(self) -> dict:
        return {
            "t_eval": self.t_eval,
            "beta_hat": self.beta_hat,
            "level": self.level,
            "passed": self.passed,
            "entries": [
                {
                    "F": list(e.f_set),
                    "lhs": e.lhs,
                    "lhs_ci": list(e.lhs_ci),
                    "rhs": e.rhs,
                    "rhs_ci": list(e.rhs_ci),
                    "overlap": e.overlap,
                }
                for e in self.entries
            ],
        }


def complete_convergence_report(
    f_sets: list[tuple[int, ...]],
    lhs_empty: np.ndarray,
    phi_empty: np.ndarray,
    beta_successes: int,
    beta_n: int,
    t_eval: float,
    level: float = 0.95,
) -> ConvergenceReport:
    """Compare P(I_t ^ F = empty) with (1-beta) + beta*phi_F(empty) per F.

    lhs_empty[:, j] are per-replica indicators from the standard-start
    process; phi_empty[:, j] from the all-infected contact process.  The
    right side's interval combines the independent binomials by the delta
    method around (1-beta) + beta*phi.
    """
    from scipy import stats as sps

    beta_hat = beta_successes / beta_n
    se_beta = math.sqrt(max(beta_hat * (1 - beta_hat), 1e-12) / beta_n)
    z = float(sps.norm.isf((1 - level) / 2.0))
    report = ConvergenceReport(t_eval=t_eval, beta_hat=beta_hat, level=level)
    for j, f in enumerate(f_sets):
        lk = int(lhs_empty[:, j].sum())
        ln = lhs_empty.shape[0]
        lhs = lk / ln
        lhs_ci = stats.wilson_interval(lk, ln, level)
        pk = int(phi_empty[:, j].sum())
        pn = phi_empty.shape[0]
        phi = pk / pn
        se_phi = math.sqrt(max(phi * (1 - phi), 1e-12) / pn)
        rhs = (1 - beta_hat) + beta_hat * phi
        se_rhs = math.sqrt((phi - 1.0) ** 2 * se_beta**2 + beta_hat**2 * se_phi**2)
        rhs_ci = (rhs - z * se_rhs, rhs + z * se_rhs)
        overlap = lhs_ci[0] <= rhs_ci[1] and rhs_ci[0] <= lhs_ci[1]
        report.entries.append(ConvergenceEntry(tuple(f), lhs, lhs_ci, rhs, rhs_ci, overlap))
    return report


# ---------------------------------------------------------------------------
# exponential tails


@dataclass
class TailFit:
    variable: str
    thresholds: list[float]
    log_survival: list[float]
    gamma_hat: float
    r2: float

    @property
    def passed(self) -> bool:
        return self.gamma_hat > 0 and self.r2 >= 0.9

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "thresholds": self.thresholds,
            "log_survival": self.log_survival,
            "gamma_hat": self.gamma_hat,
            "r2": self.r2,
            "passed": self.passed,
        }

    def extrapolate_survival(self, x: float) -> float:
        """exp(intercept - gamma*x) from the fitted line (clipped to [0,1])."""
        if not self.thresholds:
            return float("nan")
        slope = -self.gamma_hat
        xbar = float(np.mean(self.thresholds))
        ybar = float(np.mean(self.log_survival))
        return float(min(1.0, math.exp(ybar + slope * (x - xbar))))


def fit_decay_curve(x: np.ndarray, probs: np.ndarray, variable: str) -> TailFit:
    """Fit log(probs) = intercept - gamma * x over the strictly positive points."""
    x = np.asarray(x, dtype=float)
    probs = np.asarray(probs, dtype=float)
    keep = probs > 0
    if keep.sum() < 5:
        raise DegenerateFitError(
            f"need >= 5 thresholds with nonzero survival, got {int(keep.sum())}"
        )
    xs = x[keep]
    ys = np.log(probs[keep])
    if np.unique(ys).size < 2:
        raise DegenerateFitError("survival curve has no variation (degenerate fit)")
    slope, _, r2 = stats.fit_log_linear(xs, ys)
    return TailFit(
        variable=variable,
        thresholds=xs.tolist(),
        log_survival=ys.tolist(),
        gamma_hat=-slope,
        r2=r2,
    )


def tail_fit(samples, thresholds, variable: str = "sample") -> TailFit:
    """Least-squares fit of the empirical log-survival over thresholds.

    `samples` may contain NaN for censored observations: a censored sample
    counts in the denominator but never in any exceedance (appropriate for
    joint events such as {R >= n, died}, where survivors are censored).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0 or np.isnan(samples).all():
        raise ValueError("all samples censored (or empty)")
    observed = samples[~np.isnan(samples)]
    if np.unique(observed).size == 1:
        raise DegenerateFitError("constant samples give a degenerate survival curve")
    thresholds = np.asarray(sorted(thresholds), dtype=float)
    probs = np.array([(observed >= thr).sum() / samples.size for thr in thresholds])
    return fit_decay_curve(thresholds, probs, variable)


# ---------------------------------------------------------------------------
# i.i.d. increments


@dataclass
class IidTest:
    name: str
    coordinate: str
    statistic: float
    threshold: float
    n: int
    rejected: bool


@dataclass
class IidReport:
    level: float
    tests: list[IidTest] = field(default_factory=list)
    inconclusive: bool = False

    @property
    def lag1_correlations(self) -> dict[str, float]:
        return {t.coordinate: t.statistic for t in self.tests if t.name == "lag1"}

    @property
    def two_sample_ks(self) -> dict[str, float]:
        return {
            f"{t.name}:{t.coordinate}": t.statistic
            for t in self.tests
            if t.name != "lag1"
        }

    @property
    def passed(self) -> bool:
        return not self.inconclusive and bool(self.tests) and not any(
            t.rejected for t in self.tests
        )

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "passed": self.passed,
            "inconclusive": self.inconclusive,
            "tests": [vars(t) for t in self.tests],
        }


def iid_report(
    replica_ids: np.ndarray,
    indices: np.ndarray,
    increments,
    level: float = 0.01,
    min_total: int = 500,
) -> IidReport:
    """Independence and identical-distribution checks on break-point increments.

    Per coordinate (X, Psi, M): lag-1 autocorrelation within replicas, KS of
    first increments against later ones, and KS of the first half against the
    second half by index.  The nine sub-tests run at level/9 so the report
    rejects a true i.i.d. sample with probability at most `level`.
    """
    x, psi, m = _xy(increments)
    replica_ids = np.asarray(replica_ids)
    indices = np.asarray(indices)
    report = IidReport(level=level)
    if x.size < min_total:
        report.inconclusive = True
        return report
    coords = {"X": x, "Psi": psi, "M": m}
    per_test = level / (3 * len(coords))
    from scipy import stats as sps

    z_crit = float(sps.norm.isf(per_test / 2.0))
    half = float(np.median(indices))
    for name, vals in coords.items():
        groups = [vals[replica_ids == r] for r in np.unique(replica_ids)]
        rho, n_pairs = stats.lag1_autocorrelation(groups)
        if n_pairs >= 30 and not math.isnan(rho):
            thr = z_crit / math.sqrt(n_pairs)
            report.tests.append(
                IidTest("lag1", name, rho, thr, n_pairs, abs(rho) > thr)
            )
        else:
            report.inconclusive = True
        first = vals[indices == 1]
        rest = vals[indices >= 2]
        if first.size >= 30 and rest.size >= 30:
            d = stats.ks_distance_2samp(first, rest)
            thr = stats.ks_critical_2samp(first.size, rest.size, per_test)
            report.tests.append(
                IidTest("first_vs_rest", name, d, thr, first.size + rest.size, d > thr)
            )
        else:
            report.inconclusive = True
        lo = vals[indices <= half]
        hi = vals[indices > half]
        if lo.size >= 30 and hi.size >= 30:
            d = stats.ks_distance_2samp(lo, hi)
            thr = stats.ks_critical_2samp(lo.size, hi.size, per_test)
            report.tests.append(
                IidTest("half_vs_half", name, d, thr, lo.size + hi.size, d > thr)
            )
        else:
            report.inconclusive = True
    return report
