"""Monte Carlo estimators and the paper-level verification experiments.

Contents: mean-square norms with delta-method standard errors, the
Mittag-Leffler weighted (Bielecki-type) norm, the closed-form contraction
constant and its gamma threshold, Picard contraction diagnostics, the
asymptotic-separation experiment (coupled noise, tail log-log slope), and
the mean-square Lyapunov exponent experiment.

Statistical pass/fail decisions use 3 combined standard errors throughout.
Suprema over time are grid-node maxima (the continuous sup is unavailable
to simulation); limsups at infinity are replaced by finite-horizon tail
windows, whose window is part of each report.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FsdeValueError
from .models import InitialCondition, LinearFsde
from .solver import PathEnsemble, simulate
from .specfun import gamma_fn, ml_weight_log
from .stochastic import TimeGrid

__all__ = [
    "WeightedNormConfig",
    "SeparationReport",
    "LyapunovReport",
    "ContractionReport",
    "ms_norm",
    "weighted_norm",
    "weighted_distance",
    "kappa",
    "gamma_threshold",
    "contraction_diagnostic",
    "separation_experiment",
    "lyapunov_experiment",
]


@dataclass(frozen=True)
class WeightedNormConfig:
    """Parameters of the weighted norm sup_t sqrt(E||X(t)||^2 / w(t)) with
    w(t) = E_{2 alpha - 1}(gamma t^(2 alpha - 1)) evaluated on a grid."""

    horizon: float
    gamma_coef: float
    alpha: float
    grid: TimeGrid

    def __post_init__(self):
        if not (float(self.gamma_coef) > 0.0):
            raise FsdeValueError("gamma_coef must be positive")
        if not (0.5 < float(self.alpha) < 1.0):
            raise FsdeValueError("alpha must lie in (1/2, 1)")
        if abs(self.grid.horizon - float(self.horizon)) > 1e-12 * max(1.0, self.horizon):
            raise FsdeValueError("grid horizon does not equal the config horizon")

    def log_weights(self):
        """log w(t_k) for every grid node (computed in scaled space, so
        configurations whose weight overflows the double range still work)."""
        return np.array(
            [ml_weight_log(self.gamma_coef, self.alpha, t) for t in self.grid.nodes]
        )


def _mean_sq_stats(sq, axis=None):
    """Mean of per-path squared norms with its standard error."""
    n = sq.shape[0]
    m = float(sq.mean())
    if n > 1:
        se = float(sq.std(ddof=1)) / math.sqrt(n)
    else:
        se = 0.0
    return m, se


def ms_norm(ensemble, k):
    """Mean-square norm estimate at grid node k: sqrt(mean_j ||X_j(t_k)||^2).

    Returns (estimate, standard_error); the error comes from the delta
    method applied to the mean of the squared norms.
    """
    if not isinstance(ensemble, PathEnsemble):
        raise FsdeValueError("ensemble must be a PathEnsemble")
    k = int(k)
    if not (0 <= k <= ensemble.grid.n_steps):
        raise FsdeValueError("node index %d outside the grid" % k)
    if ensemble.n_paths == 0:
        raise FsdeValueError("empty ensemble")
    sq = np.einsum("jd,jd->j", ensemble.states[k], ensemble.states[k])
    m, se_m = _mean_sq_stats(sq)
    if m <= 0.0:
        return 0.0, 0.0
    est = math.sqrt(m)
    return est, se_m / (2.0 * est)


def weighted_norm(ensemble, config):
    """Grid-node supremum of ms_norm(t_k) / sqrt(w(t_k))."""
    if ensemble.grid != config.grid:
        raise FsdeValueError("ensemble grid does not match the norm config grid")
    lw = config.log_weights()
    best = 0.0
    for k in range(ensemble.grid.n_steps + 1):
        sq = np.einsum("jd,jd->j", ensemble.states[k], ensemble.states[k])
        m = float(sq.mean())
        if m > 0.0:
            val = math.exp(0.5 * (math.log(m) - lw[k]))
            if val > best:
                best = val
    return best


def weighted_distance(a, b, config):
    """||a - b||_gamma with a Monte Carlo standard error.

    The standard error is the delta-method error at the node attaining the
    supremum (the sup's own selection noise is not propagated).
    """
    if a.grid != b.grid or a.grid != config.grid:
        raise FsdeValueError("ensembles and config must share one grid")
    if a.states.shape != b.states.shape:
        raise FsdeValueError("ensembles must have equal shapes")
    lw = config.log_weights()
    best, best_se = 0.0, 0.0
    for k in range(a.grid.n_steps + 1):
        diff = a.states[k] - b.states[k]
        sq = np.einsum("jd,jd->j", diff, diff)
        m, se_m = _mean_sq_stats(sq)
        if m <= 0.0:
            continue
        val = math.exp(0.5 * (math.log(m) - lw[k]))
        if val > best:
            best = val
            best_se = val * se_m / (2.0 * m)
    return best, best_se


def gamma_threshold(L, T, alpha):
    """Weight coefficient threshold 3 L^2 (T+1) Gamma(2 alpha - 1) / Gamma(alpha)^2
    above which the solution operator is a strict contraction."""
    L, T, alpha = float(L), float(T), float(alpha)
    if L < 0.0 or not (T > 0.0) or not (0.5 < alpha < 1.0):
        raise FsdeValueError("need L >= 0, T > 0 and alpha in (1/2, 1)")
    return 3.0 * L * L * (T + 1.0) * gamma_fn(2.0 * alpha - 1.0) / gamma_fn(alpha) ** 2


def kappa(L, T, alpha, gamma_coef):
    """Closed-form contraction constant
    sqrt(2 Gamma(2 alpha - 1) L^2 (T+1) / (Gamma(alpha)^2 gamma))."""
    L, T, alpha, gamma_coef = float(L), float(T), float(alpha), float(gamma_coef)
    if L < 0.0 or not (T > 0.0) or not (0.5 < alpha < 1.0) or not (gamma_coef > 0.0):
        raise FsdeValueError("need L >= 0, T > 0, gamma > 0 and alpha in (1/2, 1)")
    return math.sqrt(
        2.0 * gamma_fn(2.0 * alpha - 1.0) * L * L * (T + 1.0)
        / (gamma_fn(alpha) ** 2 * gamma_coef)
    )


@dataclass(frozen=True)
class ContractionReport:
    """Measured Picard ratios against the closed-form constant."""

    ratios: list
    ratio_stderrs: list
    kappa_value: float
    n_exceeding: int
    passed: bool

    def to_dict(self):
        return {
            "ratios": list(self.ratios),
            "ratio_stderrs": list(self.ratio_stderrs),
            "kappa": self.kappa_value,
            "n_exceeding": self.n_exceeding,
            "passed": bool(self.passed),
        }


def contraction_diagnostic(history, kappa_value):
    """Compare successive distance ratios d_{n+1}/d_n with kappa.

    Passes when no ratio exceeds kappa by more than 3 combined standard
    errors.  Ratios whose denominator is exactly zero (already converged)
    are skipped.
    """
    if len(history.iterates) < 3:
        raise FsdeValueError("contraction diagnostic needs at least 3 iterates")
    d = history.distances
    se = history.stderrs
    ratios, ses = [], []
    for i in range(len(d) - 1):
        if d[i] <= 0.0:
            continue
        r = d[i + 1] / d[i]
        rel = 0.0
        if d[i + 1] > 0.0:
            rel = math.sqrt((se[i + 1] / d[i + 1]) ** 2 + (se[i] / d[i]) ** 2)
        ratios.append(r)
        ses.append(r * rel)
    n_exc = sum(1 for r, s in zip(ratios, ses) if r > kappa_value + 3.0 * s)
    return ContractionReport(
        ratios=ratios, ratio_stderrs=ses, kappa_value=float(kappa_value),
        n_exceeding=n_exc, passed=(n_exc == 0),
    )


# ---------------------------------------------------------------------------
# moment sinks for the streaming experiments

class _MomentSink:
    """Per-node sums of ||X||^2 and ||X||^4 for each solution, plus the
    squared distance moments for consecutive solution pairs."""

    def __init__(self, n_nodes, n_sols, pair):
        self.s2 = np.zeros((n_sols, n_nodes))
        self.s4 = np.zeros((n_sols, n_nodes))
        self.pair = pair
        if pair:
            self.d2 = np.zeros(n_nodes)
            self.d4 = np.zeros(n_nodes)

    def node(self, r, states):
        for s, X in enumerate(states):
            q = np.einsum("jd,jd->j", X, X)
            self.s2[s, r] += q.sum()
            self.s4[s, r] += (q * q).sum()
        if self.pair:
            diff = states[0] - states[1]
            q = np.einsum("jd,jd->j", diff, diff)
            self.d2[r] += q.sum()
            self.d4[r] += (q * q).sum()


def _reduce_moments(sinks, n_paths):
    """Combine chunk sinks in order; return mean/se arrays per moment."""
    s2 = sum(s.s2 for s in sinks)
    s4 = sum(s.s4 for s in sinks)
    out = {"ms2": s2 / n_paths}
    var = np.maximum(s4 / n_paths - out["ms2"] ** 2, 0.0)
    if n_paths > 1:
        var *= n_paths / (n_paths - 1.0)
    out["ms2_se"] = np.sqrt(var / n_paths)
    if sinks and getattr(sinks[0], "pair", False):
        d2 = sum(s.d2 for s in sinks)
        d4 = sum(s.d4 for s in sinks)
        m = d2 / n_paths
        v = np.maximum(d4 / n_paths - m * m, 0.0)
        if n_paths > 1:
            v *= n_paths / (n_paths - 1.0)
        out["dist2"] = m
        out["dist2_se"] = np.sqrt(v / n_paths)
    return out


def _sqrt_with_se(mean_sq, se_sq):
    est = np.sqrt(np.maximum(mean_sq, 0.0))
    se = np.where(est > 0.0, se_sq / np.maximum(2.0 * est, 1e-300), 0.0)
    return est, se


def _ols_slope(x, y):
    """Least-squares slope with its residual-based standard error."""
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    dof = max(n - 2, 1)
    se = math.sqrt(float((resid ** 2).sum()) / dof / sxx)
    return slope, se


@dataclass(frozen=True)
class SeparationReport:
    """Finite-horizon surrogate of the asymptotic separation bound.

    ``slope`` is the tail log-log slope of the coupled mean-square distance
    D(t); the theoretical decay floor is -(1 - alpha) / (2 alpha).  The
    monotonicity flag for t^((1-alpha)/(2 alpha) + eps) D(t) is advisory
    (the bound only constrains a subsequence).
    """

    alpha: float
    epsilon: float
    times: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    stderrs: np.ndarray = field(repr=False)
    fit_window: tuple = (0.0, 0.0)
    slope: float = 0.0
    slope_se: float = 0.0
    floor: float = 0.0
    slope_margin: float = 0.05
    monotone_tail: bool = False
    passed: bool = False

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "fit_window": list(self.fit_window),
            "slope": self.slope,
            "slope_se": self.slope_se,
            "floor": self.floor,
            "slope_margin": self.slope_margin,
            "monotone_tail": bool(self.monotone_tail),
            "passed": bool(self.passed),
        }

    def to_text(self):
        lines = [
            "separation experiment (alpha=%g, epsilon=%g)" % (self.alpha, self.epsilon),
            "  fit window t in [%g, %g]" % self.fit_window,
            "  tail log-log slope  % .6f +/- %.6f" % (self.slope, self.slope_se),
            "  theoretical floor   % .6f (margin %g)" % (self.floor, self.slope_margin),
            "  monotone weighted distance on tail (advisory): %s" % self.monotone_tail,
            "  PASS" if self.passed else "  FAIL",
        ]
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,distance,stderr\n")
            for t, dv, se in zip(self.times, self.distances, self.stderrs):
                fh.write("%.17g,%.17g,%.17g\n" % (t, dv, se))


def separation_experiment(problem, ic_pair, noise, epsilon=0.05,
                          tail_fraction=0.5, scheme="left", chunk_size=None,
                          n_jobs=None, backend=None, slope_margin=0.05):
    """Coupled two-solution experiment behind the separation bound.

    Both initial-value problems run pathwise on the *same* Brownian
    ensemble; D(t_k) = ||X_eta(t_k) - X_zeta(t_k)||_ms is estimated with
    standard errors, the tail window (last ``tail_fraction`` of the
    horizon) is fitted by least squares in log-log coordinates, and the
    fitted slope is compared against the floor -(1 - alpha)/(2 alpha)
    minus ``slope_margin``.
    """
    eta, zeta = ic_pair
    if not (float(epsilon) > 0.0):
        raise FsdeValueError("epsilon must be positive")
    if not (0.0 < float(tail_fraction) < 1.0):
        raise FsdeValueError("tail_fraction must lie in (0, 1)")
    if eta.vector is not None and zeta.vector is not None:
        if eta.dim == zeta.dim and np.array_equal(eta.vector, zeta.vector):
            raise FsdeValueError("initial conditions must differ (eta != zeta)")

    n_nodes = noise.grid.n_steps + 1
    sinks = simulate(
        [(problem, eta), (problem, zeta)], noise,
        make_sink=lambda lo, n: _MomentSink(n_nodes, 2, pair=True),
        scheme=scheme, chunk_size=chunk_size, n_jobs=n_jobs, backend=backend,
    )
    mom = _reduce_moments(sinks, noise.n_paths)
    D, D_se = _sqrt_with_se(mom["dist2"], mom["dist2_se"])
    if D[0] <= 0.0:
        raise FsdeValueError("degenerate pair: distance vanishes at t = 0")

    times = noise.grid.nodes
    alpha = problem.alpha
    floor = -(1.0 - alpha) / (2.0 * alpha)
    t_lo = (1.0 - tail_fraction) * noise.grid.horizon
    win = (times >= t_lo) & (times > 0.0) & (D > 0.0)
    if win.sum() < 3:
        raise FsdeValueError("tail window has fewer than 3 usable nodes")
    slope, slope_se = _ols_slope(np.log(times[win]), np.log(D[win]))

    wexp = (1.0 - alpha) / (2.0 * alpha) + epsilon
    y = times[win] ** wexp * D[win]
    yse = times[win] ** wexp * D_se[win]
    tol = 3.0 * np.sqrt(yse[1:] ** 2 + yse[:-1] ** 2)
    monotone = bool(np.all(np.diff(y) >= -tol))

    return SeparationReport(
        alpha=alpha, epsilon=float(epsilon), times=times, distances=D,
        stderrs=D_se, fit_window=(float(times[win][0]), float(times[win][-1])),
        slope=slope, slope_se=slope_se, floor=floor,
        slope_margin=float(slope_margin), monotone_tail=monotone,
        passed=bool(slope >= floor - slope_margin),
    )


@dataclass(frozen=True)
class LyapunovReport:
    """Finite-horizon estimate of the mean-square Lyapunov exponent
    lambda_ms = limsup (1/t) log ||Phi(t)||_ms, taken as the maximum of
    (1/t_k) log ms(t_k) over the tail window."""

    times: np.ndarray = field(repr=False)
    ms_norms: np.ndarray = field(repr=False)
    ms_stderrs: np.ndarray = field(repr=False)
    tail_window: tuple = (0.0, 0.0)
    lambda_hat: float = 0.0
    tolerance: float = 0.05
    passed: bool = False

    def to_dict(self):
        return {
            "tail_window": list(self.tail_window),
            "lambda_hat": self.lambda_hat,
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
        }

    def to_text(self):
        return "\n".join([
            "mean-square Lyapunov experiment",
            "  tail window t in [%g, %g]" % self.tail_window,
            "  lambda_hat = % .6f (tolerance -%g)" % (self.lambda_hat, self.tolerance),
            "  PASS" if self.passed else "  FAIL",
        ])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,ms_norm,stderr,lambda\n")
            for t, m, se in zip(self.times, self.ms_norms, self.ms_stderrs):
                lam = math.log(m) / t if (t > 0.0 and m > 0.0) else math.nan
                fh.write("%.17g,%.17g,%.17g,%.17g\n" % (t, m, se, lam))


def lyapunov_experiment(linear, ic, noise, tail_fraction=0.5, tolerance=0.05,
                        scheme="left", chunk_size=None, n_jobs=None,
                        backend=None):
    """Estimate the mean-square Lyapunov exponent of a linear system.

    Requires a nontrivial initial condition.  The report passes when the
    tail estimate lambda_hat is >= -tolerance (the theory says the true
    exponent of any nontrivial solution is nonnegative).
    """
    if not isinstance(linear, LinearFsde):
        raise FsdeValueError("linear must be a LinearFsde")
    if not isinstance(ic, InitialCondition):
        raise FsdeValueError("ic must be an InitialCondition")
    if ic.vector is not None and not np.any(ic.vector):
        raise FsdeValueError("initial condition must be nontrivial (eta != 0)")
    if not (0.0 < float(tail_fraction) < 1.0):
        raise FsdeValueError("tail_fraction must lie in (0, 1)")

    problem = linear.as_problem()
    n_nodes = noise.grid.n_steps + 1
    sinks = simulate(
        [(problem, ic)], noise,
        make_sink=lambda lo, n: _MomentSink(n_nodes, 1, pair=False),
        scheme=scheme, chunk_size=chunk_size, n_jobs=n_jobs, backend=backend,
    )
    mom = _reduce_moments(sinks, noise.n_paths)
    ms, ms_se = _sqrt_with_se(mom["ms2"][0], mom["ms2_se"][0])
    if ms[0] <= 0.0:
        raise FsdeValueError("initial condition draws are identically zero")

    times = noise.grid.nodes
    t_lo = (1.0 - tail_fraction) * noise.grid.horizon
    win = (times >= t_lo) & (times > 0.0)
    if not np.any(win):
        raise FsdeValueError("empty tail window")
    with np.errstate(divide="ignore"):
        lam = np.log(ms[win]) / times[win]
    lam_hat = float(np.max(lam))
    if not math.isfinite(lam_hat):
        raise FsdeValueError("mean-square norm vanished on the tail window")
    return LyapunovReport(
        times=times, ms_norms=ms, ms_stderrs=ms_se,
        tail_window=(float(times[win][0]), float(times[win][-1])),
        lambda_hat=lam_hat, tolerance=float(tolerance),
        passed=bool(lam_hat >= -float(tolerance)),
    )


def report_to_json(report, path, config=None, version=None, backend=None):
    """Serialize a report dict with full provenance, byte-stable."""
    payload = {"report": report.to_dict()}
    if config is not None:
        payload["config"] = config
    if version is not None:
        payload["version"] = version
    if backend is not None:
        payload["backend"] = backend
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
