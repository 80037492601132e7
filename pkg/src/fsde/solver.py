"""Pathwise solvers for the singular-kernel stochastic integral equation.

Two routes to the same equation:

- :func:`solve_em` - a product-integration Euler-Maruyama scheme.  The
  drift uses the exact kernel moment over each subinterval,
  w_{n,k} = ((t_n - t_k)^alpha - (t_n - t_{k+1})^alpha) / alpha, with
  left-point coefficient evaluation; the stochastic term uses the
  left-point kernel value (t_n - t_k)^(alpha - 1), keeping the sum a
  martingale transform of the increments (adapted states).

- :func:`picard_solve` - the discrete fixed-point iteration of the
  solution operator, same quadrature weights, coefficients evaluated
  along the previous iterate; distances between iterates are measured in
  the Mittag-Leffler weighted norm.

Paths are processed in fixed-size chunks; chunks may run on a thread pool
(the kernels drop the GIL) and results are combined in chunk order, so
parallel and sequential runs agree bitwise for a fixed chunk size.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import get_backend
from .exceptions import BlowUpError, FsdeValueError
from .models import FsdeProblem, InitialCondition
from .specfun import gamma_fn
from .stochastic import BrownianEnsemble, TimeGrid

__all__ = [
    "PathEnsemble",
    "PicardHistory",
    "drift_weights",
    "stoch_weights",
    "solve_em",
    "picard_apply",
    "picard_solve",
    "simulate",
    "save_paths_npz",
    "load_paths_npz",
    "paths_to_csv",
]

SCHEMES = ("left", "l2")
DEFAULT_CHUNK = 2048
_BLOCK = 64


def drift_weights(alpha, h, n_steps):
    """Product-integration drift weights by lag, w[m] for m = 1..n_steps.

    w[m] = h^alpha (m^alpha - (m-1)^alpha) / alpha is the exact kernel
    integral over one subinterval; the weights telescope to t_n^alpha/alpha.
    Index 0 is unused and set to 0.
    """
    m = np.arange(n_steps + 1, dtype=np.float64)
    w = np.zeros(n_steps + 1)
    w[1:] = h ** alpha / alpha * (m[1:] ** alpha - m[:-1] ** alpha)
    return w


def stoch_weights(alpha, h, n_steps, scheme="left"):
    """Stochastic-term kernel weights by lag.

    ``left``: (m h)^(alpha-1), the kernel at the left endpoint (default).
    ``l2``: root-mean-square kernel value over the subinterval, which
    reproduces the Ito-isometry variance exactly at the nodes.
    """
    if scheme not in SCHEMES:
        raise FsdeValueError("unknown scheme %r (have: %s)" % (scheme, SCHEMES))
    m = np.arange(n_steps + 1, dtype=np.float64)
    w = np.zeros(n_steps + 1)
    if scheme == "left":
        w[1:] = (m[1:] * h) ** (alpha - 1.0)
    else:
        two_am1 = 2.0 * alpha - 1.0
        w[1:] = np.sqrt(
            h ** (2.0 * alpha - 2.0)
            * (m[1:] ** two_am1 - m[:-1] ** two_am1) / two_am1
        )
    return w


@dataclass(frozen=True)
class PathEnsemble:
    """Monte Carlo ensemble of solution trajectories on a grid.

    ``states`` has shape (n_nodes, n_paths, dim) so per-node cross sections
    are contiguous; ``provenance`` records problem, scheme, seed and backend
    for replay.
    """

    grid: TimeGrid
    states: np.ndarray = field(repr=False)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.ndim != 3 or self.states.shape[0] != self.grid.n_steps + 1:
            raise FsdeValueError(
                "states must be (n_nodes, n_paths, dim), got %s" % (self.states.shape,)
            )
        self.states.setflags(write=False)

    @property
    def n_paths(self):
        return self.states.shape[1]

    @property
    def dim(self):
        return self.states.shape[2]


@dataclass(frozen=True)
class PicardHistory:
    """Iterates of the fixed-point map and their weighted distances.

    ``distances[i]`` estimates ||xi_{i+1} - xi_i|| in the gamma-weighted
    norm with ``stderrs[i]`` its Monte Carlo standard error.
    """

    iterates: list
    distances: list
    stderrs: list
    config: object
    converged: bool
    tol: float


# ---------------------------------------------------------------------------
# chunked driver

def _n_jobs(n_jobs):
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get("FSDE_NUM_THREADS", "")
    return max(1, int(env)) if env.strip() else 1


def _chunks(n_paths, chunk_size):
    size = int(chunk_size) if chunk_size else DEFAULT_CHUNK
    return [(lo, min(lo + size, n_paths)) for lo in range(0, n_paths, size)]


def _check_problem_ic(problem, ic):
    if not isinstance(problem, FsdeProblem):
        raise FsdeValueError("problem must be an FsdeProblem")
    if not isinstance(ic, InitialCondition):
        raise FsdeValueError("ic must be an InitialCondition")
    if ic.dim != problem.dim:
        raise FsdeValueError(
            "initial condition dim %d does not match problem dim %d"
            % (ic.dim, problem.dim)
        )


def _simulate_chunk(backend, problems, etas, nodes, dW_T, dw, sw, sink, offset):
    """Advance all coupled solutions through one chunk of paths.

    ``etas[s]`` is (C, d); ``dW_T`` is (n_steps, C); ``dw``/``sw`` carry the
    1/Gamma(alpha) factor.  ``sink.node(r, states)`` is called for every
    node r = 0..n_steps with the list of current (C, d) state arrays.
    """
    n_steps = dW_T.shape[0]
    C = dW_T.shape[1]
    sols = []
    for problem, eta in zip(problems, etas):
        d = problem.dim
        cols = C * d
        sols.append({
            "p": problem,
            "d": d,
            "eta": eta.reshape(cols).copy(),
            "Fb": np.empty((n_steps, cols)) if n_steps else np.empty((0, cols)),
            "Fs": np.empty((n_steps, cols)) if n_steps else np.empty((0, cols)),
            "acc": np.zeros((_BLOCK, cols)),
            "X": eta.copy(),
        })
    sink.node(0, [s["X"] for s in sols])
    for r0 in range(0, n_steps, _BLOCK):
        r1 = min(r0 + _BLOCK, n_steps)
        rows = r1 - r0
        for s in sols:
            s["acc"][:rows] = 0.0
            if r0:
                backend.far_field(dw, sw, s["Fb"], s["Fs"], 0, r0, r0 + 1,
                                  s["acc"][:rows])
        for r in range(r0, r1):
            i = r - r0
            t_r = nodes[r]
            dW_r = dW_T[r]
            for s in sols:
                X = s["X"]
                s["Fb"][r] = s["p"].drift(t_r, X).reshape(-1)
                s["Fs"][r] = (s["p"].diffusion(t_r, X) * dW_r[:, None]).reshape(-1)
                backend.near_row(dw, sw, s["Fb"], s["Fs"], r0, r + 1, r + 1,
                                 s["acc"][i])
                Xn = s["eta"] + s["acc"][i]
                if not np.isfinite(Xn).all():
                    bad = int(np.flatnonzero(~np.isfinite(Xn))[0])
                    raise BlowUpError(
                        "non-finite state in %r at path %d, node %d"
                        % (s["p"].name, offset + bad // s["d"], r + 1),
                        path=offset + bad // s["d"], node=r + 1,
                    )
                s["X"] = Xn.reshape(C, s["d"])
            sink.node(r + 1, [s["X"] for s in sols])
    return sink


def simulate(problem_ic_pairs, noise, make_sink, scheme="left",
             chunk_size=None, n_jobs=None, backend=None):
    """Chunked lockstep simulation of one or more solutions on shared noise.

    ``make_sink(offset, n_chunk_paths)`` builds a per-chunk accumulator
    whose ``node`` method receives every node's states; the list of sinks
    is returned in chunk order (combine them in that order to keep results
    independent of thread scheduling).
    """
    if not isinstance(noise, BrownianEnsemble):
        raise FsdeValueError("noise must be a BrownianEnsemble")
    problems, ics = zip(*problem_ic_pairs)
    for problem, ic in problem_ic_pairs:
        _check_problem_ic(problem, ic)
    alphas = {p.alpha for p in problems}
    if len(alphas) > 1:
        raise FsdeValueError("coupled solutions must share the order alpha")
    alpha = problems[0].alpha
    be = get_backend(backend)
    grid = noise.grid
    c = 1.0 / gamma_fn(alpha)
    dw = drift_weights(alpha, grid.h, grid.n_steps) * c
    sw = stoch_weights(alpha, grid.h, grid.n_steps, scheme) * c
    nodes = grid.nodes
    eta_full = [ic.draw(noise.n_paths, noise.master_seed) for ic in ics]

    jobs = []
    for lo, hi in _chunks(noise.n_paths, chunk_size):
        dW_T = np.ascontiguousarray(noise.increments[lo:hi].T)
        etas = [e[lo:hi] for e in eta_full]
        sink = make_sink(lo, hi - lo)
        jobs.append((be, problems, etas, nodes, dW_T, dw, sw, sink, lo))

    workers = _n_jobs(n_jobs)
    if workers == 1 or len(jobs) == 1:
        return [_simulate_chunk(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_simulate_chunk, *j) for j in jobs]
        return [f.result() for f in futures]


class _PathSink:
    """Writes states into a disjoint slice of a shared output array."""

    def __init__(self, out_arrays, offset, n_chunk):
        self.out = out_arrays
        self.lo = offset
        self.hi = offset + n_chunk

    def node(self, r, states):
        for out, X in zip(self.out, states):
            out[r, self.lo:self.hi] = X


def _provenance(problem, noise, scheme, backend, extra=None):
    prov = {
        "problem": problem.name,
        "alpha": problem.alpha,
        "dim": problem.dim,
        "scheme": scheme,
        "master_seed": noise.master_seed,
        "n_paths": noise.n_paths,
        "horizon": noise.grid.horizon,
        "n_steps": noise.grid.n_steps,
        "backend": get_backend(backend).BACKEND_NAME,
    }
    if extra:
        prov.update(extra)
    return prov


def solve_em(problem, ic, noise, scheme="left", chunk_size=None, n_jobs=None,
             backend=None):
    """Solve the integral equation pathwise on the ensemble's grid.

    X_n = eta + (1/Gamma(alpha)) * [ sum_k w_{n,k} b(t_k, X_k)
          + sum_k (t_n - t_k)^(alpha-1) sigma(t_k, X_k) dW_k ].

    Returns a :class:`PathEnsemble`; raises :class:`BlowUpError` with the
    first offending (path, node) if any state becomes non-finite.
    """
    _check_problem_ic(problem, ic)
    out = np.empty((noise.grid.n_steps + 1, noise.n_paths, problem.dim))
    simulate(
        [(problem, ic)], noise,
        make_sink=lambda lo, n: _PathSink([out], lo, n),
        scheme=scheme, chunk_size=chunk_size, n_jobs=n_jobs, backend=backend,
    )
    return PathEnsemble(
        grid=noise.grid, states=out,
        provenance=_provenance(problem, noise, scheme, backend),
    )


def picard_apply(problem, ic, noise, xi, scheme="left", chunk_size=None,
                 backend=None):
    """One application of the discrete solution operator to the process xi.

    Same quadrature as :func:`solve_em` but with the coefficients evaluated
    along the given input process instead of the evolving state.
    """
    _check_problem_ic(problem, ic)
    if not isinstance(xi, PathEnsemble) or xi.grid != noise.grid:
        raise FsdeValueError("xi must be a PathEnsemble on the noise grid")
    if xi.n_paths != noise.n_paths or xi.dim != problem.dim:
        raise FsdeValueError("xi shape does not match noise/problem")
    be = get_backend(backend)
    grid = noise.grid
    n_steps, d = grid.n_steps, problem.dim
    alpha = problem.alpha
    c = 1.0 / gamma_fn(alpha)
    dw = drift_weights(alpha, grid.h, n_steps) * c
    sw = stoch_weights(alpha, grid.h, n_steps, scheme) * c
    nodes = grid.nodes
    eta_full = ic.draw(noise.n_paths, noise.master_seed)
    out = np.empty((n_steps + 1, noise.n_paths, d))

    for lo, hi in _chunks(noise.n_paths, chunk_size):
        C = hi - lo
        cols = C * d
        dW_T = np.ascontiguousarray(noise.increments[lo:hi].T)
        eta = eta_full[lo:hi].reshape(cols)
        Fb = np.empty((n_steps, cols)) if n_steps else np.empty((0, cols))
        Fs = np.empty_like(Fb)
        for r in range(n_steps):
            X = xi.states[r, lo:hi]
            Fb[r] = problem.drift(nodes[r], X).reshape(-1)
            Fs[r] = (problem.diffusion(nodes[r], X) * dW_T[r][:, None]).reshape(-1)
        out[0, lo:hi] = eta_full[lo:hi]
        acc = np.zeros((_BLOCK, cols))
        for r0 in range(0, n_steps, _BLOCK):
            r1 = min(r0 + _BLOCK, n_steps)
            rows = r1 - r0
            acc[:rows] = 0.0
            if r0:
                be.far_field(dw, sw, Fb, Fs, 0, r0, r0 + 1, acc[:rows])
            for r in range(r0, r1):
                i = r - r0
                be.near_row(dw, sw, Fb, Fs, r0, r + 1, r + 1, acc[i])
                Xn = eta + acc[i]
                if not np.isfinite(Xn).all():
                    bad = int(np.flatnonzero(~np.isfinite(Xn))[0])
                    raise BlowUpError(
                        "non-finite operator image at path %d, node %d"
                        % (lo + bad // d, r + 1),
                        path=lo + bad // d, node=r + 1,
                    )
                out[r + 1, lo:hi] = Xn.reshape(C, d)
    return PathEnsemble(
        grid=noise.grid, states=out,
        provenance=_provenance(problem, noise, scheme, backend,
                               {"operator": "picard_apply"}),
    )


def picard_solve(problem, ic, noise, config, tol=1e-8, max_iter=25,
                 scheme="left", chunk_size=None, backend=None, warn=None):
    """Fixed-point iteration from the constant initial process xi_0 = eta.

    Iterates until the estimated weighted distance ||xi_{n+1} - xi_n||_gamma
    falls to ``tol`` or ``max_iter`` is reached (``converged`` records
    which).  ``config`` is an :class:`fsde.analysis.WeightedNormConfig`; a
    warning callback fires if its gamma is at or below the contraction
    threshold (the discrete iteration may still converge).
    """
    from .analysis import gamma_threshold, weighted_distance

    _check_problem_ic(problem, ic)
    if config.grid != noise.grid:
        raise FsdeValueError("config grid does not match the noise grid")
    thr = gamma_threshold(problem.lipschitz, config.horizon, problem.alpha)
    if config.gamma_coef <= thr and warn is not None:
        warn(
            "gamma=%g is not above the contraction threshold %g; the "
            "iteration may still converge but has no contraction guarantee"
            % (config.gamma_coef, thr)
        )
    eta_full = ic.draw(noise.n_paths, noise.master_seed)
    const = np.broadcast_to(
        eta_full, (noise.grid.n_steps + 1,) + eta_full.shape
    ).copy()
    xi = PathEnsemble(
        grid=noise.grid, states=const,
        provenance=_provenance(problem, noise, scheme, backend,
                               {"operator": "picard_iterate", "iterate": 0}),
    )
    iterates = [xi]
    distances, stderrs = [], []
    converged = False
    for it in range(int(max_iter)):
        nxt = picard_apply(problem, ic, noise, xi, scheme=scheme,
                           chunk_size=chunk_size, backend=backend)
        dist, se = weighted_distance(nxt, xi, config)
        iterates.append(nxt)
        distances.append(dist)
        stderrs.append(se)
        xi = nxt
        if dist <= tol:
            converged = True
            break
    return PicardHistory(
        iterates=iterates, distances=distances, stderrs=stderrs,
        config=config, converged=converged, tol=float(tol),
    )


# ---------------------------------------------------------------------------
# persistence

def save_paths_npz(ensemble, path):
    """Binary replay artifact with the provenance header."""
    import json

    np.savez(
        path,
        states=ensemble.states,
        horizon=ensemble.grid.horizon,
        n_steps=ensemble.grid.n_steps,
        provenance=json.dumps(ensemble.provenance, sort_keys=True),
    )


def load_paths_npz(path):
    import json

    with np.load(path) as data:
        return PathEnsemble(
            grid=TimeGrid(float(data["horizon"]), int(data["n_steps"])),
            states=np.ascontiguousarray(data["states"]),
            provenance=json.loads(str(data["provenance"])),
        )


def paths_to_csv(ensemble, path):
    """Long-format CSV: path, t, component, value (17 significant digits)."""
    import json

    nodes = ensemble.grid.nodes
    with open(path, "w") as fh:
        fh.write("# fsde-path-ensemble v1\n")
        fh.write("# %s\n" % json.dumps(ensemble.provenance, sort_keys=True))
        fh.write("path,t,component,value\n")
        for j in range(ensemble.n_paths):
            for r, t in enumerate(nodes):
                for comp in range(ensemble.dim):
                    fh.write(
                        "%d,%.17g,%d,%.17g\n"
                        % (j, t, comp, ensemble.states[r, j, comp])
                    )
