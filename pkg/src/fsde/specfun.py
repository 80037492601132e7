"""Gamma and one-parameter Mittag-Leffler special functions.

The Mittag-Leffler function

    E_beta(z) = sum_{k>=0} z^k / Gamma(beta*k + 1),   0 < beta <= 1,

generalizes the exponential (``E_1 = exp``) and appears here in two roles:
as the weight of the temporally weighted norm (with ``beta = 2*alpha - 1``)
and as the closed-form solution of linear Caputo equations used as a
deterministic oracle (``x(t) = E_alpha(a t^alpha)``).

Evaluation is split by regime.  The power series is used wherever it is
well conditioned; large positive arguments use the exponential asymptotic
expansion; negative arguments outside the series region use the real
integral representation obtained by collapsing the Hankel contour onto the
branch cut,

    E_beta(-x) = (x sin(beta pi) / (beta pi)) *
                 int_0^inf exp(-u^(1/beta)) / (u^2 + 2 x u cos(beta pi) + x^2) du,

integrated with panel-clustered Gauss-Legendre rules (the denominator has a
near-pole "bump" for beta > 1/2 that the panels track explicitly).  All
routines are pure functions of their arguments and thread-safe.
"""

import math

import numpy as np
from dataclasses import dataclass

from .exceptions import FsdeValueError, MlOverflowError, ConvergenceError

__all__ = [
    "MlQuery",
    "gamma_fn",
    "mittag_leffler",
    "mittag_leffler_log",
    "ml_weight",
    "ml_weight_log",
    "ml_renewal_residual",
]

# Lanczos approximation, g = 7, 9 coefficients.  Relative accuracy on the
# real positive axis is a few 1e-15, comfortably inside the 1e-12 budget
# needed by the contraction-constant computations.
_LANCZOS_G = 7.0
_LANCZOS_C = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

# Series stopping rule: terms below 1e-16 * |partial sum| for 3 consecutive
# terms.  The hard cap is generous because small beta needs many terms
# (roughly (z^(1/beta) + 40) / beta of them).
_SERIES_EPS = 1e-16
_SERIES_CAP = 4000

# Branch switches, expressed on the scale X = |z|^(1/beta).
_X_SERIES_POS = 13.0   # series vs exponential asymptotics, z > 0
_X_SERIES_NEG = 8.0    # series vs integral representation, z < 0
_X_OVERFLOW = 700.0    # exp(X) leaves the double range shortly above this


def _gamma_positive(x):
    """Lanczos evaluation for x > 0 (reflection used below 0.5)."""
    if x < 0.5:
        # Gamma(x) = pi / (sin(pi x) * Gamma(1 - x))
        return math.pi / (math.sin(math.pi * x) * _gamma_positive(1.0 - x))
    z = x - 1.0
    acc = _LANCZOS_C[0]
    for i in range(1, len(_LANCZOS_C)):
        acc += _LANCZOS_C[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * acc


def gamma_fn(x):
    """Gamma function for positive real arguments.

    Parameters
    ----------
    x : float
        Must be finite and strictly positive.

    Returns
    -------
    float
        Gamma(x), relative error below 1e-12 on (0, 50].

    Raises
    ------
    FsdeValueError
        If ``x`` is not a finite positive number.
    """
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise FsdeValueError("gamma_fn requires a finite x > 0, got %r" % (x,))
    val = _gamma_positive(x)
    if not math.isfinite(val):
        raise MlOverflowError("gamma_fn(%g) exceeds the double range" % x)
    return val


def _rgamma(y):
    """Reciprocal gamma 1/Gamma(y) for any real y (zero at the poles)."""
    if y > 0.5:
        return 1.0 / _gamma_positive(y)
    # 1/Gamma(y) = sin(pi y) * Gamma(1 - y) / pi ; exact zeros at y = 0, -1, ...
    s = math.sin(math.pi * y)
    if s == 0.0:
        return 0.0
    return s * _gamma_positive(1.0 - y) / math.pi


@dataclass(frozen=True)
class MlQuery:
    """Validated argument pair for the one-parameter Mittag-Leffler function.

    ``beta`` must lie in (0, 1]; ``z`` must be finite (either sign).
    """

    beta: float
    z: float

    def __post_init__(self):
        beta, z = float(self.beta), float(self.z)
        if not (0.0 < beta <= 1.0) or not math.isfinite(beta):
            raise FsdeValueError("MlQuery: beta must be in (0, 1], got %r" % (self.beta,))
        if not math.isfinite(z):
            raise FsdeValueError("MlQuery: z must be finite, got %r" % (self.z,))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "z", z)


def _xscale(beta, absz):
    """|z|^(1/beta) computed through logs so the power cannot overflow."""
    if absz == 0.0:
        return 0.0
    ln = math.log(absz) / beta
    if ln > 745.0:
        return math.inf
    return math.exp(ln)


def _ml_series(beta, z):
    """Power series with Neumaier-compensated summation.

    Terms are generated as exp(k log|z| - lgamma(beta k + 1)) so each term
    carries only a few ulp of error independently of k.
    """
    if z == 0.0:
        return 1.0
    lnz = math.log(abs(z))
    neg = z < 0.0
    s = 1.0           # k = 0 term
    comp = 0.0
    small = 0
    for k in range(1, _SERIES_CAP + 1):
        term = math.exp(k * lnz - math.lgamma(beta * k + 1.0))
        if neg and (k & 1):
            term = -term
        # Neumaier update
        t = s + term
        if abs(s) >= abs(term):
            comp += (s - t) + term
        else:
            comp += (term - t) + s
        s = t
        if abs(term) <= _SERIES_EPS * max(abs(s), 1e-300):
            small += 1
            if small >= 3:
                return s + comp
        else:
            small = 0
    raise ConvergenceError(
        "Mittag-Leffler series did not converge for beta=%g, z=%g "
        "within %d terms" % (beta, z, _SERIES_CAP)
    )


def _ml_asymptotic_pos(beta, z):
    """Exponential asymptotics for large positive z:
    (1/beta) exp(z^(1/beta)) - sum_k z^(-k) / Gamma(1 - beta k).
    """
    x = _xscale(beta, z)
    lead = math.exp(x) / beta
    corr = 0.0
    prev = math.inf
    zk = 1.0
    for k in range(1, 60):
        zk /= z
        term = zk * _rgamma(1.0 - beta * k)
        if abs(term) >= prev:
            break  # divergent tail reached; stop at the optimal truncation
        corr += term
        prev = abs(term) if term != 0.0 else prev
        if abs(term) < 1e-17 * max(lead, 1.0):
            break
    return lead - corr


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _gl_panels(f, breakpoints):
    """Sum of 32-point Gauss-Legendre rules over consecutive panels."""
    total = 0.0
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        if b <= a:
            continue
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        x = mid + half * _GL_NODES
        total += half * float(np.dot(_GL_WEIGHTS, f(x)))
    return total


def _ml_integral_neg(beta, z):
    """Branch-cut integral for E_beta(-x), x > 0, 0 < beta < 1.

    Integrates in u on [0, u_split] where exp(-u^(1/beta)) is essentially
    flat, then in the exponent variable v = u^(1/beta) where the factor
    exp(-v) is tame, adding explicit breakpoints around the Lorentzian bump
    of the denominator (present for beta > 1/2).
    """
    x = -z
    cosb = math.cos(math.pi * beta)
    sinb = math.sin(math.pi * beta)
    pref = x * sinb / (beta * math.pi)

    def integrand_u(u):
        return np.exp(-u ** (1.0 / beta)) / ((u + x * cosb) ** 2 + (x * sinb) ** 2)

    def integrand_v(v):
        ub = v ** beta
        return (
            beta * v ** (beta - 1.0) * np.exp(-v)
            / ((ub + x * cosb) ** 2 + (x * sinb) ** 2)
        )

    v_split = 0.25                      # u = v^beta, split where exp(-v) ~ 1
    v_top = 55.0
    u_split = v_split ** beta

    # breakpoints in u on [0, u_split]: graded toward 0, plus bump points
    pts_u = {0.0, u_split, 0.5 * u_split}
    for i in range(1, 11):
        pts_u.add(u_split * 4.0 ** (-i))
    # breakpoints in v on [v_split, v_top]
    pts_v = {v_split, 0.4, 0.7, 1.0, 1.5, 2.5, 4.0, 6.0, 8.5, 11.0, 14.0,
             18.0, 22.0, 27.0, 33.0, 40.0, 47.0, v_top}

    if cosb < 0.0:  # denominator bump at u0 = x |cos(beta pi)|, width x sin(beta pi)
        u0 = -x * cosb
        w = x * sinb
        offsets = (24.0, 16.0, 12.0, 8.0, 6.0, 4.0, 3.0, 2.0, 1.5, 1.0,
                   0.75, 0.5, 0.375, 0.25, 0.125, 0.0625)
        for j in offsets:
            for s in (-1.0, 1.0):
                u = u0 + s * j * w
                if 0.0 < u < u_split:
                    pts_u.add(u)
                elif u > u_split:
                    v = u ** (1.0 / beta)
                    if v_split < v < v_top:
                        pts_v.add(v)
        if 0.0 < u0 < u_split:
            pts_u.add(u0)
        v0 = u0 ** (1.0 / beta)
        if v_split < v0 < v_top:
            pts_v.add(v0)

    val = _gl_panels(integrand_u, sorted(pts_u)) + _gl_panels(
        integrand_v, sorted(p for p in pts_v if p <= v_top)
    )
    return pref * val


def mittag_leffler(beta, z):
    """One-parameter Mittag-Leffler function E_beta(z) for real arguments.

    Parameters
    ----------
    beta : float
        Exponent parameter in (0, 1].  ``beta = 1`` reduces to ``exp``.
    z : float
        Finite real argument, either sign.

    Returns
    -------
    float
        E_beta(z) with relative error below 1e-10 for |z| <= 50.

    Raises
    ------
    FsdeValueError
        If ``beta`` is outside (0, 1] or ``z`` is not finite.
    MlOverflowError
        If the value exceeds the double-precision range (threshold
        ``z^(1/beta) > 700``); never returns a silent infinity.
    """
    q = MlQuery(beta, z)
    beta, z = q.beta, q.z
    if beta == 1.0:
        if z > 700.0:
            raise MlOverflowError("E_1(%g) = exp(%g) exceeds the double range" % (z, z))
        return math.exp(z)
    if z == 0.0:
        return 1.0
    x = _xscale(beta, abs(z))
    if z > 0.0:
        if x > _X_OVERFLOW:
            raise MlOverflowError(
                "E_%g(%g) ~ exp(%.3g) exceeds the double range" % (beta, z, x)
            )
        if x <= _X_SERIES_POS:
            return _ml_series(beta, z)
        return _ml_asymptotic_pos(beta, z)
    if x <= _X_SERIES_NEG:
        return _ml_series(beta, z)
    return _ml_integral_neg(beta, z)


def mittag_leffler_log(beta, z):
    """log E_beta(z), finite for every finite real z.

    For arguments whose value overflows the double range this returns the
    asymptotic ``z^(1/beta) - log(beta)`` (the dropped algebraic terms are
    smaller than one ulp there), which lets weighted norms and the renewal
    identity be evaluated in scaled space.
    """
    q = MlQuery(beta, z)
    beta, z = q.beta, q.z
    if beta == 1.0:
        return z
    if z > 0.0:
        x = _xscale(beta, z)
        if x > 680.0:
            return x - math.log(beta)
    return math.log(mittag_leffler(beta, z))


def _check_weight_args(gamma_coef, alpha, t):
    gamma_coef = float(gamma_coef)
    alpha = float(alpha)
    t = float(t)
    if not (gamma_coef > 0.0) or not math.isfinite(gamma_coef):
        raise FsdeValueError("weight coefficient gamma must be positive")
    if not (0.5 < alpha < 1.0):
        raise FsdeValueError("alpha must lie in (1/2, 1), got %r" % (alpha,))
    if not (t >= 0.0) or not math.isfinite(t):
        raise FsdeValueError("t must be a finite nonnegative real")
    return gamma_coef, alpha, t


def ml_weight(gamma_coef, alpha, t):
    """Weight E_{2 alpha - 1}(gamma t^(2 alpha - 1)) of the weighted norm."""
    gamma_coef, alpha, t = _check_weight_args(gamma_coef, alpha, t)
    beta = 2.0 * alpha - 1.0
    return mittag_leffler(beta, gamma_coef * t ** beta)


def ml_weight_log(gamma_coef, alpha, t):
    """log of :func:`ml_weight`; finite even where the weight overflows."""
    gamma_coef, alpha, t = _check_weight_args(gamma_coef, alpha, t)
    beta = 2.0 * alpha - 1.0
    return mittag_leffler_log(beta, gamma_coef * t ** beta)


def ml_renewal_residual(alpha, gamma_coef, t):
    """Relative residual of the renewal identity satisfied by the weight.

    The weight w(t) = E_beta(gamma t^beta), beta = 2 alpha - 1, solves

        w(t) = 1 + (gamma / Gamma(beta)) *
               int_0^t (t - tau)^(beta - 1) w(tau) dtau,

    which is the equality behind the contraction estimate.  The integral is
    computed with the singularity-absorbing substitution u = (t - tau)^beta
    and panel-graded Gauss-Legendre quadrature; everything is scaled by
    w(t) (in log space) so cases far beyond the double range still verify.

    Returns |LHS - RHS| / LHS evaluated at the given point.
    """
    gamma_coef, alpha, t = _check_weight_args(gamma_coef, alpha, t)
    if t == 0.0:
        return 0.0
    beta = 2.0 * alpha - 1.0
    log_wt = mittag_leffler_log(beta, gamma_coef * t ** beta)

    def scaled(u):
        out = np.empty_like(u)
        for i, ui in enumerate(u):
            tau = t - ui ** (1.0 / beta)
            tau = max(tau, 0.0)
            lw = mittag_leffler_log(beta, gamma_coef * tau ** beta)
            out[i] = math.exp(lw - log_wt)
        return out

    u_top = t ** beta
    pts = {0.0, u_top}
    for i in range(1, 13):  # grade both endpoints (fractional-power kinks)
        pts.add(u_top * 4.0 ** (-i))
        pts.add(u_top * (1.0 - 4.0 ** (-i)))
    integral = _gl_panels(scaled, sorted(pts))
    rhs = math.exp(-log_wt) + gamma_coef / (beta * gamma_fn(beta)) * integral
    return abs(1.0 - rhs)
