"""Estimator oracles and experiment-level checks for the analysis module."""

import json
import math

import numpy as np
import pytest

from fsde import (
    FsdeValueError,
    InitialCondition,
    LinearFsde,
    PathEnsemble,
    WeightedNormConfig,
    builtin,
    contraction_diagnostic,
    gamma_threshold,
    kappa,
    lyapunov_experiment,
    make_grid,
    ms_norm,
    picard_solve,
    sample_ensemble,
    separation_experiment,
    solve_em,
    weighted_norm,
)
from fsde.analysis import report_to_json
from fsde.solver import PicardHistory
from fsde.specfun import gamma_fn


def constant_ensemble(grid, n_paths, vec):
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    states = np.tile(vec, (grid.n_steps + 1, n_paths, 1))
    return PathEnsemble(grid=grid, states=states, provenance={})


class TestMsNorm:
    def test_constant_vector(self):
        g = make_grid(1.0, 4)
        ens = constant_ensemble(g, 50, [3.0, 4.0])
        est, se = ms_norm(ens, 2)
        assert est == pytest.approx(5.0, rel=1e-14)
        assert se == 0.0

    def test_zero(self):
        g = make_grid(1.0, 4)
        est, se = ms_norm(constant_ensemble(g, 10, [0.0]), 0)
        assert est == 0.0 and se == 0.0

    def test_variance_oracle(self):
        # additive noise at t=1: sqrt(E[X^2]) = sqrt(1/(0.5 Gamma(0.75)^2))
        alpha = 0.75
        p = builtin("constant_diffusion", {"s": 1.0, "alpha": alpha})
        noise = sample_ensemble(make_grid(1.0, 512), 4000, 5)
        ens = solve_em(p, InitialCondition.deterministic(0.0), noise)
        est, se = ms_norm(ens, 512)
        target = math.sqrt(1.0 / ((2 * alpha - 1) * gamma_fn(alpha) ** 2))
        # left-point kernel bias is ~1.6% of the value at this h
        assert abs(est - target) < 3.0 * se + 0.02 * target

    def test_bad_node(self):
        g = make_grid(1.0, 4)
        with pytest.raises(FsdeValueError):
            ms_norm(constant_ensemble(g, 3, [1.0]), 9)


class TestWeightedNorm:
    def test_constant_sup_at_zero(self):
        g = make_grid(1.0, 16)
        cfg = WeightedNormConfig(horizon=1.0, gamma_coef=1.0, alpha=0.75, grid=g)
        ens = constant_ensemble(g, 20, [2.0])
        assert weighted_norm(ens, cfg) == pytest.approx(2.0, rel=1e-12)

    def test_zero_ensemble(self):
        g = make_grid(1.0, 16)
        cfg = WeightedNormConfig(horizon=1.0, gamma_coef=1.0, alpha=0.75, grid=g)
        assert weighted_norm(constant_ensemble(g, 20, [0.0]), cfg) == 0.0

    def test_monotone_in_gamma(self):
        g = make_grid(1.0, 32)
        rng = np.random.Generator(np.random.Philox(key=3))
        states = rng.normal(size=(33, 40, 1))
        ens = PathEnsemble(grid=g, states=states, provenance={})
        vals = [
            weighted_norm(ens, WeightedNormConfig(1.0, gam, 0.75, g))
            for gam in (0.5, 1.0, 2.0, 5.0, 20.0)
        ]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_huge_gamma_stays_finite(self):
        # the weight overflows the double range; the norm must still work
        g = make_grid(4.0, 8)
        cfg = WeightedNormConfig(horizon=4.0, gamma_coef=400.0, alpha=0.6, grid=g)
        ens = constant_ensemble(g, 5, [1.0])
        v = weighted_norm(ens, cfg)
        assert v == pytest.approx(1.0, rel=1e-12)  # sup still at t = 0


class TestContractionConstants:
    def test_kappa_zero_L(self):
        assert kappa(0.0, 1.0, 0.75, 1.0) == 0.0

    def test_threshold_zero_L(self):
        assert gamma_threshold(0.0, 1.0, 0.75) == 0.0

    def test_threshold_value(self):
        # 6 sqrt(pi) / Gamma(0.75)^2
        expect = 6.0 * math.sqrt(math.pi) / gamma_fn(0.75) ** 2
        assert gamma_threshold(1.0, 1.0, 0.75) == pytest.approx(expect, rel=1e-13)
        assert expect == pytest.approx(7.082043594096577, rel=1e-12)

    def test_threshold_L_scaling(self):
        a = gamma_threshold(1.0, 1.0, 0.75)
        b = gamma_threshold(2.0, 1.0, 0.75)
        assert b == pytest.approx(4.0 * a, rel=1e-14)

    def test_kappa_at_multiples_of_threshold(self):
        # kappa^2 = (2/3) * threshold / gamma, independent of L, T, alpha
        for L, T, alpha in [(1.0, 1.0, 0.75), (1.5, 2.0, 0.6), (0.7, 5.0, 0.9)]:
            thr = gamma_threshold(L, T, alpha)
            assert kappa(L, T, alpha, 1.5 * thr) == pytest.approx(2.0 / 3.0, rel=1e-12)
            assert kappa(L, T, alpha, 2.0 * thr) == pytest.approx(
                math.sqrt(1.0 / 3.0), rel=1e-12
            )

    def test_kappa_lt_one_iff_gamma_above_two_thirds_threshold(self):
        thr = gamma_threshold(1.0, 1.0, 0.75)
        assert kappa(1.0, 1.0, 0.75, thr * (1 + 1e-9)) <= math.sqrt(2.0 / 3.0) + 1e-6
        assert kappa(1.0, 1.0, 0.75, thr * 2.0 / 3.0 * 0.999) > 1.0
        assert kappa(1.0, 1.0, 0.75, thr * 2.0 / 3.0 * 1.001) < 1.0


def fake_history(ds, ses=None):
    ses = ses if ses is not None else [0.0] * len(ds)
    return PicardHistory(
        iterates=[None] * (len(ds) + 1), distances=list(ds), stderrs=list(ses),
        config=None, converged=True, tol=0.0,
    )


class TestContractionDiagnostic:
    def test_geometric_passes(self):
        hist = fake_history([0.5 ** n for n in range(6)])
        rep = contraction_diagnostic(hist, 0.6)
        assert rep.passed
        assert all(r == pytest.approx(0.5) for r in rep.ratios)

    def test_slow_decay_fails(self):
        hist = fake_history([0.9 ** n for n in range(6)])
        rep = contraction_diagnostic(hist, 0.5)
        assert not rep.passed
        assert rep.n_exceeding == len(rep.ratios)

    def test_needs_three_iterates(self):
        with pytest.raises(FsdeValueError):
            contraction_diagnostic(fake_history([0.5]), 0.9)

    def test_end_to_end_picard_ratios_below_kappa(self):
        # the measured ratios of the affine model iteration stay below the
        # closed-form contraction constant
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        ic = InitialCondition.deterministic(1.0)
        g = make_grid(1.0, 128)
        noise = sample_ensemble(g, 1000, 12)
        gam = 2.0 * gamma_threshold(p.lipschitz, 1.0, 0.75)
        cfg = WeightedNormConfig(horizon=1.0, gamma_coef=gam, alpha=0.75, grid=g)
        hist = picard_solve(p, ic, noise, cfg, tol=0.0, max_iter=7)
        kap = kappa(p.lipschitz, 1.0, 0.75, gam)
        assert kap == pytest.approx(math.sqrt(1.0 / 3.0), abs=1e-10)
        rep = contraction_diagnostic(hist, kap)
        assert len(rep.ratios) >= 5
        assert rep.passed, rep.ratios


class TestSeparation:
    def test_zero_model_flat_distance(self):
        p = builtin("zero", {"alpha": 0.75})
        noise = sample_ensemble(make_grid(2.0, 64), 50, 3)
        rep = separation_experiment(
            p,
            (InitialCondition.deterministic(1.0), InitialCondition.deterministic(0.5)),
            noise,
        )
        assert np.allclose(rep.distances, 0.5, rtol=1e-12)
        assert rep.slope == pytest.approx(0.0, abs=1e-9)
        assert rep.passed
        assert rep.distances[0] == pytest.approx(0.5, rel=1e-14)

    def test_degenerate_pair_rejected(self):
        p = builtin("zero", {"alpha": 0.75})
        noise = sample_ensemble(make_grid(1.0, 8), 4, 0)
        ic = InitialCondition.deterministic(1.0)
        with pytest.raises(FsdeValueError):
            separation_experiment(p, (ic, ic), noise)

    def test_linear_distance_is_scaled_fundamental(self):
        # coupled linear solutions: X_eta - X_zeta = (eta - zeta) * Phi,
        # so D(t) = 0.5 ||Phi(t)||_ms; verify against a direct solve
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        noise = sample_ensemble(make_grid(1.0, 64), 400, 8)
        rep = separation_experiment(
            p,
            (InitialCondition.deterministic(1.0), InitialCondition.deterministic(0.5)),
            noise,
        )
        phi = solve_em(p, InitialCondition.deterministic(1.0), noise)
        for k in (0, 32, 64):
            est, _ = ms_norm(phi, k)
            assert rep.distances[k] == pytest.approx(0.5 * est, rel=1e-10)

    def test_report_serialization(self, tmp_path):
        p = builtin("zero", {"alpha": 0.75})
        noise = sample_ensemble(make_grid(2.0, 16), 10, 3)
        rep = separation_experiment(
            p,
            (InitialCondition.deterministic(1.0), InitialCondition.deterministic(0.5)),
            noise,
        )
        f = tmp_path / "sep.json"
        report_to_json(rep, f, config={"x": 1}, version="0.1.0", backend="numpy")
        data = json.loads(f.read_text())
        assert data["report"]["passed"] is True
        assert "slope" in data["report"]
        csv = tmp_path / "sep.csv"
        rep.write_csv(csv)
        lines = csv.read_text().splitlines()
        assert lines[0] == "t,distance,stderr"
        assert len(lines) == 1 + 17
        assert "PASS" in rep.to_text()


class TestLyapunov:
    def test_zero_system_exactly_zero(self):
        lin = LinearFsde.constant([[0.0]], [[0.0]], alpha=0.75)
        noise = sample_ensemble(make_grid(2.0, 32), 20, 4)
        rep = lyapunov_experiment(lin, InitialCondition.deterministic(1.0), noise)
        assert rep.lambda_hat == 0.0
        assert rep.passed

    def test_zero_ic_rejected(self):
        lin = LinearFsde.constant([[-1.0]], [[0.5]], alpha=0.75)
        noise = sample_ensemble(make_grid(1.0, 8), 4, 0)
        with pytest.raises(FsdeValueError):
            lyapunov_experiment(lin, InitialCondition.deterministic(0.0), noise)

    def test_report_csv(self, tmp_path):
        lin = LinearFsde.constant([[0.0]], [[0.0]], alpha=0.75)
        noise = sample_ensemble(make_grid(2.0, 8), 5, 4)
        rep = lyapunov_experiment(lin, InitialCondition.deterministic(2.0), noise)
        f = tmp_path / "lyap.csv"
        rep.write_csv(f)
        lines = f.read_text().splitlines()
        assert lines[0] == "t,ms_norm,stderr,lambda"
        assert len(lines) == 1 + 9


class TestContinuousDependence:
    def test_distance_scales_linearly_in_delta(self):
        # fixed noise, linear model: the solution map is linear in eta, so
        # the sup-node ms distance halves exactly when delta halves
        p = builtin("scalar_linear", {"a": -1.0, "s": 0.5, "alpha": 0.75})
        noise = sample_ensemble(make_grid(1.0, 64), 300, 19)
        base = solve_em(p, InitialCondition.deterministic(1.0), noise)

        def sup_dist(delta):
            other = solve_em(p, InitialCondition.deterministic(1.0 + delta), noise)
            diff = other.states - base.states
            ms = np.sqrt(np.mean(diff[:, :, 0] ** 2, axis=1))
            return ms.max()

        d = {delta: sup_dist(delta) for delta in (0.1, 0.05, 0.025)}
        assert d[0.05] <= 0.75 * d[0.1]
        assert d[0.025] <= 0.75 * d[0.05]
        assert d[0.05] == pytest.approx(0.5 * d[0.1], rel=1e-9)
