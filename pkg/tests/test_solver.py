"""Solver oracles: exact weight identities, deterministic Mittag-Leffler
reduction, Ito-isometry variance, the renewal-form second moment for pure
multiplicative noise, Picard fixed-point structure, adaptedness, blow-up
reporting, and backend agreement."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsde import (
    BlowUpError,
    FsdeProblem,
    FsdeValueError,
    InitialCondition,
    WeightedNormConfig,
    available_backends,
    builtin,
    make_grid,
    picard_apply,
    picard_solve,
    sample_ensemble,
    solve_em,
)
from fsde.solver import (
    drift_weights,
    load_paths_npz,
    paths_to_csv,
    save_paths_npz,
    stoch_weights,
)
from fsde.specfun import gamma_fn, mittag_leffler

BACKENDS = available_backends()


def ml_curve(alpha, a, nodes):
    return np.array([mittag_leffler(alpha, a * t ** alpha) for t in nodes])


class TestWeights:
    @given(
        alpha=st.floats(0.51, 0.99),
        h=st.floats(1e-4, 2.0),
        n=st.integers(1, 200),
    )
    @settings(max_examples=60, deadline=None)
    def test_drift_weights_telescope(self, alpha, h, n):
        # sum_{k<n} w_{n,k} = t_n^alpha / alpha exactly
        w = drift_weights(alpha, h, n)
        total = w[1:].sum()
        target = (n * h) ** alpha / alpha
        assert total == pytest.approx(target, rel=1e-12)

    def test_stoch_weights_left_is_kernel(self):
        w = stoch_weights(0.75, 0.25, 4, "left")
        assert w[1] == pytest.approx(0.25 ** -0.25)
        assert w[4] == pytest.approx(1.0)

    def test_stoch_weights_l2_reproduces_kernel_integral(self):
        # sum of squared l2 weights times h telescopes to t^(2a-1)/(2a-1)
        alpha, h, n = 0.75, 1.0 / 64, 64
        w = stoch_weights(alpha, h, n, "l2")
        total = (w[1:] ** 2).sum() * h
        assert total == pytest.approx(1.0 / (2 * alpha - 1), rel=1e-12)

    def test_unknown_scheme(self):
        with pytest.raises(FsdeValueError):
            stoch_weights(0.75, 0.1, 4, "midpoint")


class TestZeroModel:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_constant_eta_bitwise(self, backend):
        noise = sample_ensemble(make_grid(1.0, 32), 16, 5)
        p = builtin("zero", {"alpha": 0.75})
        ens = solve_em(p, InitialCondition.deterministic(3.0), noise,
                       backend=backend)
        assert (ens.states == 3.0).all()


class TestDeterministicReduction:
    def test_converges_to_mittag_leffler(self):
        # scalar_linear(a=-1, s=0): solution is E_alpha(-t^alpha); the
        # sup-node error must shrink monotonically under refinement
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.0, "alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        errs = []
        for n in (64, 128, 256, 512):
            g = make_grid(1.0, n)
            ens = solve_em(p, ic, sample_ensemble(g, 1, 0))
            ref = ml_curve(0.75, -1.0, g.nodes)
            errs.append(np.abs(ens.states[:, 0, 0] - ref).max())
        ratios = [b / a for a, b in zip(errs, errs[1:])]
        assert all(r <= 0.75 for r in ratios), (errs, ratios)

    def test_alpha06(self):
        p = builtin("scalar_linear", {"a": -0.5, "s": 0.0, "alpha": 0.6})
        ic = InitialCondition.deterministic(2.0)
        g = make_grid(1.0, 512)
        ens = solve_em(p, ic, sample_ensemble(g, 1, 0))
        ref = 2.0 * ml_curve(0.6, -0.5, g.nodes)
        assert np.abs(ens.states[:, 0, 0] - ref).max() < 5e-3


class TestVarianceOracles:
    def test_ito_isometry_additive(self):
        # constant_diffusion: E[X(1)^2] = 1 / ((2a-1) Gamma(a)^2)
        alpha = 0.75
        p = builtin("constant_diffusion", {"s": 1.0, "alpha": alpha})
        ic = InitialCondition.deterministic(0.0)
        noise = sample_ensemble(make_grid(1.0, 256), 4000, 11)
        ens = solve_em(p, ic, noise)
        x = ens.states[-1, :, 0]
        target = 1.0 / ((2 * alpha - 1) * gamma_fn(alpha) ** 2)
        est = np.mean(x ** 2)
        se = np.std(x ** 2, ddof=1) / math.sqrt(len(x))
        assert abs(est - target) < 4.0 * se + 0.1 * target  # coarse grid allowance

    def test_l2_weights_make_variance_exact_per_node(self):
        # with the L2-exact weights the discrete variance of the additive
        # case matches t^(2a-1)/((2a-1) Gamma(a)^2) at every node, up to
        # Monte Carlo error only
        alpha = 0.75
        p = builtin("constant_diffusion", {"s": 1.0, "alpha": alpha})
        ic = InitialCondition.deterministic(0.0)
        g = make_grid(1.0, 64)
        noise = sample_ensemble(g, 20_000, 3)
        ens = solve_em(p, ic, noise, scheme="l2")
        x = ens.states[1:, :, 0]
        target = g.nodes[1:] ** (2 * alpha - 1) / ((2 * alpha - 1) * gamma_fn(alpha) ** 2)
        est = (x ** 2).mean(axis=1)
        se = (x ** 2).std(axis=1, ddof=1) / math.sqrt(noise.n_paths)
        assert (np.abs(est - target) < 4.0 * se).all()

    def test_multiplicative_second_moment_renewal(self):
        # pure multiplicative noise (a=0): E[X(t)^2] solves the renewal
        # equation whose solution is E_{2a-1}(g t^(2a-1)) with
        # g = s^2 Gamma(2a-1) / Gamma(a)^2 -- an exact closed form
        alpha, s = 0.75, 0.5
        p = builtin("scalar_linear", {"a": 0.0, "s": s, "alpha": alpha})
        ic = InitialCondition.deterministic(1.0)
        g = make_grid(4.0, 512)
        noise = sample_ensemble(g, 20_000, 17)
        ens = solve_em(p, ic, noise)
        geff = s * s * gamma_fn(2 * alpha - 1) / gamma_fn(alpha) ** 2
        for k in (128, 256, 384, 512):
            x = ens.states[k, :, 0]
            est = np.mean(x ** 2)
            se = np.std(x ** 2, ddof=1) / math.sqrt(len(x))
            exact = mittag_leffler(2 * alpha - 1, geff * g.nodes[k] ** (2 * alpha - 1))
            assert abs(est - exact) < 4.0 * se + 0.02 * exact, (k, est, exact)


class TestAdaptedness:
    def test_states_ignore_future_increments(self):
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        g = make_grid(1.0, 64)
        noise = sample_ensemble(g, 8, 21)
        base = solve_em(p, ic, noise).states
        cut = 40
        tampered = noise.increments.copy()
        tampered[:, cut:] *= -3.0
        from fsde.stochastic import BrownianEnsemble
        noise2 = BrownianEnsemble(grid=g, n_paths=8, master_seed=21,
                                  increments=tampered)
        other = solve_em(p, ic, noise2).states
        assert np.array_equal(base[: cut + 1], other[: cut + 1])
        assert not np.allclose(base[cut + 1:], other[cut + 1:])


class TestBlowUp:
    def test_superlinear_drift_blows_up_with_location(self):
        p = FsdeProblem(
            alpha=0.75, dim=1,
            drift=lambda t, x: x ** 3,
            diffusion=lambda t, x: np.zeros_like(x),
            lipschitz=1e6, name="cubic",
        )
        ics = np.zeros((6, 1))
        ics[4, 0] = 40.0  # only path 4 explodes
        ic = InitialCondition.sampled(
            lambda rng: np.array([0.0]), dim=1
        )
        # deterministic per-path IC via a tiny custom sampler is awkward;
        # use a chunked run with an explicit sampled IC instead
        noise = sample_ensemble(make_grid(1.0, 128), 6, 2)

        class PerPath:
            def __init__(self, table):
                self.table = table
                self.calls = 0

        def sampler(rng):
            # path streams are deterministic; recover the index from the
            # first uniform draw of the private stream
            u = rng.random()
            return np.array([40.0 if u < 0.5 else 0.0])

        ic = InitialCondition.sampled(sampler, dim=1)
        draws = ic.draw(6, 2)
        hot = np.flatnonzero(draws[:, 0] > 0)
        if hot.size == 0:
            pytest.skip("sampler produced no exploding path for this seed")
        with pytest.raises(BlowUpError) as err:
            solve_em(p, ic, noise, chunk_size=2)
        assert err.value.path == int(hot[0])
        assert err.value.node is not None and err.value.node >= 1


class TestPicard:
    def setup_method(self):
        self.p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        self.ic = InitialCondition.deterministic(1.0)
        self.g = make_grid(1.0, 128)
        self.noise = sample_ensemble(self.g, 400, 9)
        from fsde import gamma_threshold
        gam = 2.0 * gamma_threshold(self.p.lipschitz, 1.0, 0.75)
        self.config = WeightedNormConfig(
            horizon=1.0, gamma_coef=gam, alpha=0.75, grid=self.g
        )

    def test_zero_model_one_iteration(self):
        p = builtin("zero", {"alpha": 0.75})
        hist = picard_solve(p, InitialCondition.deterministic(2.0), self.noise,
                            self.config, tol=1e-12)
        assert hist.converged
        assert len(hist.distances) == 1
        assert hist.distances[0] == 0.0

    def test_first_iterate_matches_direct_quadrature(self):
        # for the constant process xi = eta the operator image has the
        # closed form eta + (1/G(a)) (a eta t^a/a + s eta sum_k sw dW_k)
        eta = 1.0
        const = np.broadcast_to(
            eta, (self.g.n_steps + 1, self.noise.n_paths, 1)
        ).copy()
        from fsde.solver import PathEnsemble
        xi = PathEnsemble(grid=self.g, states=const, provenance={})
        out = picard_apply(self.p, self.ic, self.noise, xi)
        alpha = 0.75
        c = 1.0 / gamma_fn(alpha)
        sw = stoch_weights(alpha, self.g.h, self.g.n_steps)
        for n in (1, 17, 128):
            t = self.g.nodes[n]
            drift_part = -1.0 * eta * t ** alpha / alpha
            lags = n - np.arange(n)
            stoch_part = 0.5 * eta * (sw[lags] * self.noise.increments[:, :n]).sum(axis=1)
            expect = eta + c * (drift_part + stoch_part)
            assert np.allclose(out.states[n, :, 0], expect, rtol=1e-12, atol=1e-14)

    def test_fixed_point_is_em_solution(self):
        # the discrete operator's fixed point satisfies exactly the
        # explicit recursion integrated by solve_em.  A modest gamma keeps
        # the weighted tolerance meaningful pointwise (a large gamma only
        # controls early times, which is the norm's whole design).
        cfg = WeightedNormConfig(horizon=1.0, gamma_coef=1.0, alpha=0.75,
                                 grid=self.g)
        hist = picard_solve(self.p, self.ic, self.noise, cfg,
                            tol=1e-12, max_iter=80)
        assert hist.converged
        em = solve_em(self.p, self.ic, self.noise)
        final = hist.iterates[-1]
        gap = np.abs(final.states - em.states).max()
        assert gap < 1e-9

    def test_applying_operator_at_fixed_point_moves_little(self):
        from fsde import weighted_distance
        cfg = WeightedNormConfig(horizon=1.0, gamma_coef=1.0, alpha=0.75,
                                 grid=self.g)
        hist = picard_solve(self.p, self.ic, self.noise, cfg,
                            tol=1e-9, max_iter=80)
        fixed = hist.iterates[-1]
        again = picard_apply(self.p, self.ic, self.noise, fixed)
        d, _ = weighted_distance(again, fixed, cfg)
        assert d <= max(1e-9, 2.0 * hist.distances[-1])

    def test_below_threshold_warns(self):
        messages = []
        picard_solve(self.p, self.ic, self.noise,
                     WeightedNormConfig(horizon=1.0, gamma_coef=0.5,
                                        alpha=0.75, grid=self.g),
                     tol=1e-3, max_iter=3, warn=messages.append)
        assert messages and "threshold" in messages[0]


class TestBackends:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_rerun_bitwise(self, backend):
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        noise = sample_ensemble(make_grid(1.0, 128), 200, 13)
        a = solve_em(p, ic, noise, backend=backend).states
        b = solve_em(p, ic, noise, backend=backend).states
        assert np.array_equal(a, b)

    @pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
    def test_backends_agree(self):
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        noise = sample_ensemble(make_grid(1.0, 256), 300, 4)
        a = solve_em(p, ic, noise, backend="cython").states
        b = solve_em(p, ic, noise, backend="numpy").states
        assert np.allclose(a, b, rtol=1e-10, atol=1e-13)

    def test_parallel_equals_sequential(self):
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        noise = sample_ensemble(make_grid(1.0, 64), 330, 6)
        seq = solve_em(p, ic, noise, chunk_size=64, n_jobs=1).states
        par = solve_em(p, ic, noise, chunk_size=64, n_jobs=2).states
        assert np.array_equal(seq, par)


class TestPersistence:
    def test_npz_roundtrip(self, tmp_path):
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        ens = solve_em(p, InitialCondition.deterministic(1.0),
                       sample_ensemble(make_grid(1.0, 16), 3, 8))
        f = tmp_path / "paths.npz"
        save_paths_npz(ens, f)
        back = load_paths_npz(f)
        assert np.array_equal(back.states, ens.states)
        assert back.provenance == ens.provenance

    def test_csv_long_format(self, tmp_path):
        p = builtin("zero", {"alpha": 0.75})
        ens = solve_em(p, InitialCondition.deterministic(2.0),
                       sample_ensemble(make_grid(1.0, 2), 2, 8))
        f = tmp_path / "paths.csv"
        paths_to_csv(ens, f)
        lines = f.read_text().splitlines()
        assert lines[2] == "path,t,component,value"
        assert lines[3].split(",") == ["0", "0", "0", "2"]
        assert len(lines) == 3 + 2 * 3  # header + 2 paths x 3 nodes


class TestValidation:
    def test_dim_mismatch(self):
        p = builtin("zero", {"alpha": 0.75, "d": 2})
        with pytest.raises(FsdeValueError):
            solve_em(p, InitialCondition.deterministic(1.0),
                     sample_ensemble(make_grid(1.0, 4), 2, 0))

    def test_picard_grid_mismatch(self):
        p = builtin("zero", {"alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        noise = sample_ensemble(make_grid(1.0, 8), 2, 0)
        other = solve_em(p, ic, sample_ensemble(make_grid(1.0, 16), 2, 0))
        with pytest.raises(FsdeValueError):
            picard_apply(p, ic, noise, other)
