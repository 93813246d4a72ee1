import numpy as np
import pytest

from groundnmf import (
    CountMatrix,
    FactorModel,
    SolverConfig,
    SolverError,
    SupportSets,
    a_b_step,
    check_feasibility,
    fit,
    i_divergence,
    init_model,
    reconstruct,
    transform,
    w_step,
)
from groundnmf.datagen import GenConfig, generate

from conftest import random_model


@pytest.fixture(scope="module")
def small_instance():
    return generate(GenConfig(d=15, N=40, K=3, lam=5.0, phenotype_support_size=5), seed=3)


@pytest.fixture(scope="module")
def small_fit(small_instance):
    cfg = SolverConfig(lam=5.0, n_restarts=2, max_outer_iters=60, rng_seed=7)
    return fit(small_instance.X, small_instance.supports_true, cfg)


class TestSolverConfig:
    @pytest.mark.parametrize("kw", [dict(armijo_beta=1.0), dict(armijo_beta=0.0), dict(armijo_sigma=0.6),
                                    dict(armijo_sigma=0.0), dict(n_restarts=0), dict(max_outer_iters=0),
                                    dict(max_inner_iters=0), dict(lam=0.0), dict(epsilon_floor=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_replace(self):
        assert SolverConfig().replace(lam=2.0).lam == 2.0


class TestInitModel:
    def test_feasible(self, small_instance):
        cfg = SolverConfig(lam=5.0)
        model = init_model(small_instance.X, small_instance.supports_true, cfg, rng=1)
        assert check_feasibility(model, small_instance.supports_true).max_violation <= 1e-8

    def test_deterministic(self, small_instance):
        cfg = SolverConfig(lam=5.0)
        m1 = init_model(small_instance.X, small_instance.supports_true, cfg, rng=4)
        m2 = init_model(small_instance.X, small_instance.supports_true, cfg, rng=4)
        for name in ("A", "W", "b"):
            np.testing.assert_array_equal(getattr(m1, name), getattr(m2, name))

    def test_single_feature(self):
        X = np.array([[1.0, 2.0, 0.0]])
        model = init_model(X, SupportSets.full(3, 2), SolverConfig(lam=0.4), rng=0)
        np.testing.assert_array_equal(model.A, [[0.4, 0.4]])

    def test_needs_k(self):
        with pytest.raises(ValueError):
            init_model(np.ones((2, 2)), None, SolverConfig())


class TestWStep:
    def test_one_dimensional_minimizer(self):
        model = FactorModel(A=[[1.0]], W=[[0.9]], b=[0.0], lam=1.0)
        cfg = SolverConfig(lam=1.0, max_inner_iters=500, outer_tol=1e-14)
        W = w_step(np.array([[0.5]]), model, SupportSets((frozenset({0}),), 1), cfg)
        assert abs(W[0, 0] - 0.5) < 1e-4

    def test_fixed_point(self):
        # w = 0.5 is the exact minimizer of w - 0.5 log w
        model = FactorModel(A=[[1.0]], W=[[0.5]], b=[0.0], lam=1.0)
        W = w_step(np.array([[0.5]]), model, SupportSets((frozenset({0}),), 1), SolverConfig(lam=1.0))
        assert abs(W[0, 0] - 0.5) <= 1e-10

    def test_empty_support_stays_zero(self, rng):
        model, supports = random_model(rng, 6, 3, 5, lam=1.0)
        sets = list(supports.sets)
        sets[2] = frozenset()
        supports = SupportSets(tuple(sets), 3)
        model = model.replace(W=np.where(supports.mask(), model.W, 0.0))
        X = rng.poisson(2.0, size=(6, 5)).astype(float)
        W = w_step(X, model, supports, SolverConfig(lam=1.0))
        assert np.all(W[:, 2] == 0.0)

    def test_does_not_increase_objective(self, rng):
        model, supports = random_model(rng, 8, 3, 10, lam=2.0)
        X = rng.poisson(1.5, size=(8, 10)).astype(float)
        W = w_step(X, model, supports, SolverConfig(lam=2.0))
        assert i_divergence(X, reconstruct(model.replace(W=W))) <= i_divergence(X, reconstruct(model)) + 1e-9
        assert check_feasibility(model.replace(W=W), supports).max_violation == 0.0


class TestABStep:
    def test_column_sums(self, rng):
        model, _ = random_model(rng, 8, 3, 10, lam=0.4)
        X = rng.poisson(1.5, size=(8, 10)).astype(float)
        A, b = a_b_step(X, model, SolverConfig(lam=0.4))
        np.testing.assert_allclose(A.sum(axis=0), 0.4, atol=1e-8)
        assert b.min() >= 0

    def test_row_means_without_simplex(self, rng):
        # with unit loadings the A column and b receive the same gradient, so
        # their sum is what reaches the unconstrained optimum: the row means
        X = rng.uniform(0.5, 3.0, size=(4, 7))
        model = FactorModel(A=np.full((4, 1), 0.3), W=np.ones((1, 7)), b=np.zeros(4), lam=1.0,
                            simplex_enabled=False)
        cfg = SolverConfig(lam=1.0, simplex_enabled=False, max_inner_iters=2000, outer_tol=1e-15)
        A, b = a_b_step(X, model, cfg)
        np.testing.assert_allclose(A[:, 0] + b, X.mean(axis=1), atol=1e-3)

    def test_fixed_point(self):
        # A column on the simplex matching the data exactly: zero projected gradient
        X = np.array([[0.3], [0.1]])
        model = FactorModel(A=[[0.3], [0.1]], W=[[1.0]], b=[0.0, 0.0], lam=0.4)
        A, b = a_b_step(X, model, SolverConfig(lam=0.4))
        np.testing.assert_allclose(A, model.A, atol=1e-10)
        np.testing.assert_allclose(b, model.b, atol=1e-10)


class TestFit:
    def test_trace_monotone_and_feasible(self, small_instance, small_fit):
        model, report = small_fit
        trace = np.array(report.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9)
        assert max(report.feasibility_trace) <= 1e-8
        assert report.feasibility_max_violation <= 1e-8
        assert len(trace) == report.outer_iterations + 1
        assert report.final_objective == pytest.approx(i_divergence(small_instance.X, reconstruct(model)),
                                                       rel=1e-9)

    def test_selects_lowest_restart(self, small_fit):
        _, report = small_fit
        assert len(report.restart_objectives) == 2
        assert report.restart_objectives[report.selected_restart] == min(report.restart_objectives)

    def test_deterministic(self, small_instance, small_fit):
        cfg = SolverConfig(lam=5.0, n_restarts=2, max_outer_iters=60, rng_seed=7)
        model, report = fit(small_instance.X, small_instance.supports_true, cfg)
        assert report == small_fit[1]
        np.testing.assert_array_equal(model.A, small_fit[0].A)
        np.testing.assert_array_equal(model.W, small_fit[0].W)

    def test_beats_planted_model(self, small_instance, small_fit):
        planted = i_divergence(small_instance.X, small_instance.mean)
        assert small_fit[1].final_objective <= planted + 1e-6

    def test_noise_free_planted_upper_bound(self):
        inst = generate(GenConfig(d=12, N=30, K=3, lam=4.0, phenotype_support_size=4), seed=2)
        Y = reconstruct(inst.model)
        cfg = SolverConfig(lam=4.0, n_restarts=1, max_outer_iters=2000, outer_tol=1e-14)
        _, report = fit(Y, inst.supports_true, cfg)
        assert report.final_objective <= i_divergence(Y, Y) + 1e-6

    def test_bias_only_fit(self):
        x = np.array([[3.0], [5.0]])
        supports = SupportSets((frozenset(),), 1)
        cfg = SolverConfig(lam=1.0, n_restarts=1, max_outer_iters=2000, outer_tol=1e-15)
        model, _ = fit(x, supports, cfg)
        np.testing.assert_allclose(model.b, x[:, 0], atol=1e-4)
        assert model.W[0, 0] == 0.0

    def test_no_simplex_leaves_sums_free(self, small_instance):
        cfg = SolverConfig(lam=5.0, simplex_enabled=False, n_restarts=1, max_outer_iters=30)
        model, report = fit(small_instance.X, small_instance.supports_true, cfg)
        assert not model.simplex_enabled
        assert np.abs(model.A.sum(axis=0) - 5.0).max() > 1e-6
        assert model.A.min() >= 0
        assert np.all(np.diff(report.objective_trace) <= 1e-9)

    def test_unsupported_shapes(self, small_instance):
        with pytest.raises(ValueError):
            fit(small_instance.X, SupportSets.full(3, 3), SolverConfig(lam=5.0))
        with pytest.raises(ValueError):
            fit(CountMatrix([], [], [], (4, 0)), None, SolverConfig(n_components=2))

    def test_all_zero_row(self, rng):
        X = rng.poisson(2.0, size=(6, 12)).astype(float)
        X[3] = 0
        model, report = fit(X, SupportSets.full(12, 2), SolverConfig(lam=3.0, n_restarts=1, max_outer_iters=50))
        assert np.isfinite(report.final_objective)
        assert model.A[3].max() < 0.05


class TestTransform:
    def test_training_columns(self, small_instance, small_fit):
        model, report = small_fit
        cfg = SolverConfig(lam=5.0, max_outer_iters=60)
        W = transform(small_instance.X, model, small_instance.supports_true, cfg, W_init=model.W)
        value = i_divergence(small_instance.X, reconstruct(model.replace(W=W)))
        assert value <= report.final_objective * (1 + cfg.outer_tol)

    def test_bias_column_gets_zero_loading(self, small_fit, rng):
        model, _ = small_fit
        x = model.b[:, None].copy()
        cfg = SolverConfig(lam=5.0, max_inner_iters=200)
        w = transform(x, model, None, cfg)
        f = lambda v: i_divergence(x, reconstruct(model.replace(W=v)))
        assert np.abs(w).max() < 1e-3
        zero = np.zeros_like(w)
        for _ in range(20):
            assert f(zero) <= f(np.clip(zero + rng.uniform(0, 1e-3, size=w.shape), 0, 1))

    def test_box_without_supports(self, small_instance, small_fit):
        W = transform(small_instance.X, small_fit[0])
        assert W.min() >= 0 and W.max() <= 1

    def test_feature_mismatch(self, small_fit):
        with pytest.raises(ValueError):
            transform(np.ones((3, 2)), small_fit[0])

    def test_non_finite_objective_raises(self):
        from groundnmf.solver import _projected_descent
        cfg = SolverConfig()
        with pytest.raises(SolverError):
            _projected_descent(lambda x: (np.nan, 0), lambda x: (np.ones(1),), lambda x: (x,),
                               (np.zeros(1),), (1.0, 0), cfg, 1.0, 5, 0.0)
