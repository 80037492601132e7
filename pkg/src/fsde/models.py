"""FSDE problem definitions and empirical hypothesis checks.

A problem holds the order ``alpha`` in (1/2, 1), the dimension, and the two
coefficient callbacks of

    D^alpha X(t) = b(t, X(t)) + sigma(t, X(t)) dW/dt,

together with a declared Lipschitz constant L for the standard condition

    ||b(t,x) - b(t,y)|| + ||sigma(t,x) - sigma(t,y)|| <= L ||x - y||.

Coefficient callbacks must be pure and vectorized over paths: they receive
``(t, x)`` with ``x`` of shape ``(n, d)`` and must return the same shape.
The hypothesis checks here are sampled falsifiers, not proofs.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import FsdeValueError
from .stochastic import STREAM_INITIAL, path_generator

__all__ = [
    "FsdeProblem",
    "LinearFsde",
    "InitialCondition",
    "DomainSample",
    "builtin",
    "BUILTIN_NAMES",
    "check_h1",
    "check_h2",
]


def _check_alpha(alpha):
    alpha = float(alpha)
    if not (0.5 < alpha < 1.0):
        raise FsdeValueError("alpha must lie in (1/2, 1), got %r" % (alpha,))
    return alpha


@dataclass(frozen=True)
class FsdeProblem:
    """One Caputo FSDE instance with declared regularity data."""

    alpha: float
    dim: int
    drift: Callable
    diffusion: Callable
    lipschitz: float
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        if int(self.dim) < 1:
            raise FsdeValueError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if float(self.lipschitz) < 0.0:
            raise FsdeValueError("declared Lipschitz constant must be >= 0")
        object.__setattr__(self, "lipschitz", float(self.lipschitz))


@dataclass(frozen=True)
class LinearFsde:
    """Linear system D^alpha x = A(t) x + B(t) x dW/dt.

    ``a_matrix`` / ``b_matrix`` map t to (d, d) arrays; the declared bounds
    are essential sups of their spectral norms over t.
    """

    alpha: float
    dim: int
    a_matrix: Callable
    b_matrix: Callable
    a_bound: float
    b_bound: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))

    @classmethod
    def constant(cls, A, B, alpha):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape != B.shape or A.shape[0] != A.shape[1]:
            raise FsdeValueError("A and B must be square matrices of equal size")
        na = float(np.linalg.norm(A, 2))
        nb = float(np.linalg.norm(B, 2))
        return cls(alpha=alpha, dim=A.shape[0], a_matrix=lambda t: A,
                   b_matrix=lambda t: B, a_bound=na, b_bound=nb)

    def as_problem(self, name="linear"):
        """Wrap as an :class:`FsdeProblem`; L = ||A||_inf + ||B||_inf per (H1)."""
        a_mat, b_mat = self.a_matrix, self.b_matrix

        def drift(t, x):
            return x @ np.asarray(a_mat(t), dtype=float).T

        def diffusion(t, x):
            return x @ np.asarray(b_mat(t), dtype=float).T

        return FsdeProblem(
            alpha=self.alpha, dim=self.dim, drift=drift, diffusion=diffusion,
            lipschitz=self.a_bound + self.b_bound, name=name,
        )


@dataclass(frozen=True)
class InitialCondition:
    """Deterministic vector or i.i.d. sampler with finite second moment.

    A sampler is a callable ``sampler(rng) -> (d,) array`` drawing one
    value; path j uses its own counter-based stream so draws are
    order-independent and reproducible.
    """

    dim: int
    vector: Optional[np.ndarray] = None
    sampler: Optional[Callable] = field(default=None, repr=False)

    @classmethod
    def deterministic(cls, value):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if v.ndim != 1 or not np.isfinite(v).all():
            raise FsdeValueError("deterministic initial condition must be a finite vector")
        v.setflags(write=False)
        return cls(dim=v.size, vector=v)

    @classmethod
    def sampled(cls, sampler, dim):
        if not callable(sampler):
            raise FsdeValueError("sampler must be callable")
        return cls(dim=int(dim), sampler=sampler)

    def draw(self, n_paths, master_seed):
        """Per-path draws, shape (n_paths, dim)."""
        if self.vector is not None:
            return np.broadcast_to(self.vector, (n_paths, self.dim)).copy()
        out = np.empty((n_paths, self.dim))
        for j in range(n_paths):
            rng = path_generator(master_seed, j, STREAM_INITIAL)
            v = np.atleast_1d(np.asarray(self.sampler(rng), dtype=float))
            if v.shape != (self.dim,):
                raise FsdeValueError(
                    "sampler returned shape %s, expected (%d,)" % (v.shape, self.dim)
                )
            out[j] = v
        return out

    def ms_norm(self, n_estimate=4096, master_seed=0):
        """||eta||_ms, exact for vectors, estimated for samplers."""
        if self.vector is not None:
            return float(np.linalg.norm(self.vector))
        draws = self.draw(n_estimate, master_seed)
        return float(np.sqrt(np.mean(np.sum(draws ** 2, axis=1))))


# ---------------------------------------------------------------------------
# builtin model families

BUILTIN_NAMES = (
    "zero",
    "constant_diffusion",
    "scalar_linear",
    "matrix_linear",
    "bounded_nonlinear",
)


def _get(params, key, family):
    if key not in params:
        raise FsdeValueError("builtin %r requires parameter %r" % (family, key))
    return params[key]


def builtin(name, params):
    """Construct a builtin problem family.

    Families and parameters (``alpha`` always required):

    - ``zero``: b = sigma = 0; optional ``d``.
    - ``constant_diffusion``: b = 0, sigma = s (param ``s``); d = 1.
    - ``scalar_linear``: b = a x, sigma = s x (params ``a``, ``s``); d = 1.
    - ``matrix_linear``: b = A x, sigma = B x (params ``A``, ``B`` square).
    - ``bounded_nonlinear``: b = a sin(x), sigma = s cos(x) elementwise;
      optional ``d``.

    Declared L is the sharp constant of the summed condition (H1): 0 for
    the flat families, |a| + |s| for scalar_linear, ||A|| + ||B|| for
    matrix_linear and sqrt(a^2 + s^2) for bounded_nonlinear.
    """
    if name not in BUILTIN_NAMES:
        raise FsdeValueError(
            "unknown builtin %r (have: %s)" % (name, ", ".join(BUILTIN_NAMES))
        )
    params = dict(params)
    alpha = _check_alpha(_get(params, "alpha", name))

    if name == "zero":
        d = int(params.get("d", 1))
        zero = lambda t, x: np.zeros_like(x)
        return FsdeProblem(alpha, d, zero, zero, 0.0, name="zero")

    if name == "constant_diffusion":
        s = float(_get(params, "s", name))
        return FsdeProblem(
            alpha, 1,
            drift=lambda t, x: np.zeros_like(x),
            diffusion=lambda t, x: np.full_like(x, s),
            lipschitz=0.0, name="constant_diffusion(s=%g)" % s,
        )

    if name == "scalar_linear":
        a = float(_get(params, "a", name))
        s = float(_get(params, "s", name))
        return FsdeProblem(
            alpha, 1,
            drift=lambda t, x: a * x,
            diffusion=lambda t, x: s * x,
            lipschitz=abs(a) + abs(s),
            name="scalar_linear(a=%g,s=%g)" % (a, s),
        )

    if name == "matrix_linear":
        A = np.asarray(_get(params, "A", name), dtype=float)
        B = np.asarray(_get(params, "B", name), dtype=float)
        lin = LinearFsde.constant(A, B, alpha)
        return lin.as_problem(name="matrix_linear(d=%d)" % lin.dim)

    # bounded_nonlinear
    a = float(_get(params, "a", name))
    s = float(_get(params, "s", name))
    d = int(params.get("d", 1))
    return FsdeProblem(
        alpha, d,
        drift=lambda t, x: a * np.sin(x),
        diffusion=lambda t, x: s * np.cos(x),
        lipschitz=math.hypot(a, s),
        name="bounded_nonlinear(a=%g,s=%g)" % (a, s),
    )


# ---------------------------------------------------------------------------
# sampled hypothesis checks

@dataclass(frozen=True)
class DomainSample:
    """Sampling box for the (H1) falsifier: t in [0, t_max], x and y
    uniform in [-half_width, half_width]^d."""

    t_max: float = 1.0
    half_width: float = 10.0
    n_samples: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class H1Report:
    max_ratio: float
    declared: float
    passed: bool
    worst: tuple  # (t, x, y) attaining the max


@dataclass(frozen=True)
class H2Report:
    sup_sigma_zero: float
    drift_zero_l2: float  # quadrature of int ||b(tau, 0)||^2 dtau on the grid


def check_h1(problem, sample_spec=DomainSample()):
    """Sampled falsifier for the Lipschitz condition (H1).

    Reports the max over samples of
    (||b(t,x)-b(t,y)|| + ||sigma(t,x)-sigma(t,y)||) / ||x-y||
    and whether it exceeds the declared constant.  Passing is evidence,
    not proof; a failure is a definite counterexample.
    """
    rng = np.random.Generator(np.random.Philox(key=sample_spec.seed))
    n, d = sample_spec.n_samples, problem.dim
    n_t = min(64, n)  # batch the x/y pairs under a moderate number of t draws
    ts = rng.uniform(0.0, sample_spec.t_max, size=n_t)
    w = sample_spec.half_width
    per_t = -(-n // n_t)
    best_ratio, worst = 0.0, None
    for t in ts:
        xs = rng.uniform(-w, w, size=(per_t, d))
        ys = rng.uniform(-w, w, size=(per_t, d))
        sep = np.linalg.norm(xs - ys, axis=1)
        m = sep > 0
        num = np.linalg.norm(
            problem.drift(t, xs[m]) - problem.drift(t, ys[m]), axis=1
        ) + np.linalg.norm(
            problem.diffusion(t, xs[m]) - problem.diffusion(t, ys[m]), axis=1
        )
        ratios = num / sep[m]
        i = int(np.argmax(ratios))
        if ratios[i] > best_ratio:
            best_ratio = float(ratios[i])
            worst = (float(t), xs[m][i].copy(), ys[m][i].copy())
    tol = 1e-9 * max(problem.lipschitz, 1.0)
    return H1Report(
        max_ratio=best_ratio,
        declared=problem.lipschitz,
        passed=best_ratio <= problem.lipschitz + tol,
        worst=worst,
    )


def check_h2(problem, grid):
    """Report sup_k ||sigma(t_k, 0)|| and the trapezoid estimate of
    int_0^T ||b(tau, 0)||^2 dtau over the grid."""
    zero = np.zeros((1, problem.dim))
    nodes = grid.nodes
    sig = np.array([np.linalg.norm(problem.diffusion(t, zero)) for t in nodes])
    dri = np.array([np.linalg.norm(problem.drift(t, zero)) ** 2 for t in nodes])
    return H2Report(
        sup_sigma_zero=float(sig.max()),
        drift_zero_l2=float(np.trapezoid(dri, nodes)),
    )
