"""Reproducible Brownian increment ensembles on uniform time grids.

Streams are counter-based: path ``j`` of an ensemble draws from a Philox
generator keyed by the 128-bit value ``(namespace || j) << 64 | seed``, so
every path is a pure function of ``(master_seed, j)`` and can be produced
in any order, in parallel, or in isolation with bit-identical results.
Normal variates come from NumPy's ziggurat sampler; bit-reproducibility is
therefore guaranteed per NumPy version, not across versions.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FsdeValueError

__all__ = [
    "TimeGrid",
    "BrownianEnsemble",
    "make_grid",
    "sample_ensemble",
    "path_generator",
    "save_ensemble_npz",
    "load_ensemble_npz",
    "save_ensemble_csv",
    "load_ensemble_csv",
]

_MASK64 = (1 << 64) - 1

# stream namespaces (kept distinct so noise and initial-condition draws
# seeded from the same master seed can never collide)
STREAM_NOISE = 0
STREAM_INITIAL = 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*h on [0, T] with h = T / n_steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        T = float(self.horizon)
        n = int(self.n_steps)
        if not math.isfinite(T) or T <= 0.0:
            raise FsdeValueError("grid horizon must be a finite positive real")
        if n < 1:
            raise FsdeValueError("n_steps must be a positive integer")
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "n_steps", n)

    @property
    def h(self):
        return self.horizon / self.n_steps

    @property
    def nodes(self):
        """All n_steps + 1 nodes, t_0 = 0 through t_n = T."""
        return np.arange(self.n_steps + 1) * (self.horizon / self.n_steps)


def make_grid(T, n_steps):
    """Build the uniform :class:`TimeGrid` on [0, T] with ``n_steps`` steps."""
    return TimeGrid(T, n_steps)


def path_generator(master_seed, path_index, stream=STREAM_NOISE):
    """Counter-based generator for one path's private stream.

    The Philox key is the 128-bit integer ``(stream*2^62 + j) * 2^64 + s``
    with ``s = master_seed mod 2^64``; distinct (stream, path) pairs give
    distinct keys by construction, so streams never overlap.
    """
    if path_index < 0:
        raise FsdeValueError("path_index must be nonnegative")
    s = int(master_seed) & _MASK64
    key = ((int(stream) << 62) + int(path_index)) << 64 | s
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class BrownianEnsemble:
    """Seeded ensemble of Brownian increments, one row per path.

    ``increments[j, k]`` is the increment W(t_{k+1}) - W(t_k) of path j,
    distributed N(0, h), independent across k and across paths.
    """

    grid: TimeGrid
    n_paths: int
    master_seed: int
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.increments.shape != (self.n_paths, self.grid.n_steps):
            raise FsdeValueError(
                "increments shape %s does not match (n_paths, n_steps) = %s"
                % (self.increments.shape, (self.n_paths, self.grid.n_steps))
            )
        self.increments.setflags(write=False)


def sample_ensemble(grid, n_paths, master_seed):
    """Draw a :class:`BrownianEnsemble` on ``grid``.

    Bit-identical output for identical arguments; path j is a function of
    (master_seed, j) only, independent of n_paths and of generation order.
    """
    if not isinstance(grid, TimeGrid):
        raise FsdeValueError("grid must be a TimeGrid")
    n_paths = int(n_paths)
    if n_paths < 1:
        raise FsdeValueError("n_paths must be a positive integer")
    sqrt_h = math.sqrt(grid.h)
    out = np.empty((n_paths, grid.n_steps), dtype=np.float64)
    for j in range(n_paths):
        rng = path_generator(master_seed, j, STREAM_NOISE)
        out[j] = rng.standard_normal(grid.n_steps)
        out[j] *= sqrt_h
    return BrownianEnsemble(grid=grid, n_paths=n_paths,
                            master_seed=int(master_seed), increments=out)


# ---------------------------------------------------------------------------
# persistence (binary replay artifact + row-per-path CSV)

_CSV_MAGIC = "# fsde-brownian-ensemble v1"


def save_ensemble_npz(ensemble, path):
    """Binary replay artifact: increments plus grid/seed metadata."""
    np.savez(
        path,
        increments=ensemble.increments,
        horizon=ensemble.grid.horizon,
        n_steps=ensemble.grid.n_steps,
        n_paths=ensemble.n_paths,
        master_seed=str(ensemble.master_seed),
    )


def load_ensemble_npz(path):
    with np.load(path) as data:
        grid = TimeGrid(float(data["horizon"]), int(data["n_steps"]))
        return BrownianEnsemble(
            grid=grid,
            n_paths=int(data["n_paths"]),
            master_seed=int(str(data["master_seed"])),
            increments=np.ascontiguousarray(data["increments"]),
        )


def save_ensemble_csv(ensemble, path):
    """CSV artifact: metadata header comments, then one row per path.

    Floats are written with 17 significant digits, so a round trip restores
    increments bit for bit.  Intended for small ensembles; use the npz
    format for production sizes.
    """
    with open(path, "w") as fh:
        fh.write(_CSV_MAGIC + "\n")
        fh.write(
            "# horizon=%.17g n_steps=%d n_paths=%d master_seed=%d\n"
            % (ensemble.grid.horizon, ensemble.grid.n_steps,
               ensemble.n_paths, ensemble.master_seed)
        )
        for row in ensemble.increments:
            fh.write(",".join("%.17g" % v for v in row))
            fh.write("\n")


def load_ensemble_csv(path):
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != _CSV_MAGIC:
            raise FsdeValueError("not a fsde brownian ensemble CSV: %r" % magic)
        meta = {}
        for tok in fh.readline().lstrip("# ").split():
            k, v = tok.split("=")
            meta[k] = v
        rows = np.loadtxt(io.StringIO(fh.read()), delimiter=",", ndmin=2)
    grid = TimeGrid(float(meta["horizon"]), int(meta["n_steps"]))
    return BrownianEnsemble(
        grid=grid,
        n_paths=int(meta["n_paths"]),
        master_seed=int(meta["master_seed"]),
        increments=np.ascontiguousarray(rows),
    )
