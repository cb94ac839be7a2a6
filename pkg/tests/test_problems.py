import numpy as np
import pytest

from blockapg.numkit import ColMatrix, make_partition
from blockapg.problems import (
    ProblemInstance,
    ResidualCache,
    StandardizationError,
    StepPolicy,
    UndefinedStepError,
    build_problem,
    gen_sparse_ls,
    grad_block,
    load_instance,
    objective,
    reference_optimum,
    save_instance,
    standardize,
    stationarity_residual,
    step_size,
)
from blockapg.regularizers import ConfigurationError, RegularizerSpec
from conftest import small_instance
from oracles import dense_objective, lasso_enumeration


class TestGenerator:
    def test_deterministic(self):
        A1, b1, x1 = gen_sparse_ls(4, 4, 1.0, 7)
        A2, b2, x2 = gen_sparse_ls(4, 4, 1.0, 7)
        assert np.array_equal(A1.toarray(), A2.toarray())
        assert np.array_equal(b1, b2) and np.array_equal(x1, x2)

    def test_density(self):
        A, _, _ = gen_sparse_ls(100, 500, 0.1, 3)
        # binomial(50000, 0.1): sd of the fraction is 0.0013, window is +-15 sd
        assert 0.08 <= A.nnz / (100 * 500) <= 0.12
        assert A.is_sparse

    def test_dense_storage_above_half(self):
        A, _, _ = gen_sparse_ls(5, 5, 0.8, 0)
        assert not A.is_sparse

    def test_planted_solution_without_noise(self):
        A, b, x0 = gen_sparse_ls(10, 10, 1.0, 1, noise=0.0)
        assert np.count_nonzero(x0) == 1
        assert np.linalg.norm(A.matvec(x0) - b) == 0.0

    def test_rejects_bad_density(self):
        with pytest.raises(ValueError):
            gen_sparse_ls(3, 3, 0.0, 0)


class TestStandardize:
    def test_hand_example(self):
        A, b = standardize(np.array([[1.0], [3.0]]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(A.toarray().ravel(), [-1.0, 1.0])
        np.testing.assert_allclose(b, [-0.5, 0.5])

    def test_moments(self, rng):
        A, b = standardize(rng.standard_normal((30, 6)) * 3 + 2, rng.standard_normal(30) + 5)
        M = A.toarray()
        np.testing.assert_allclose(M.mean(0), 0, atol=1e-14)
        np.testing.assert_allclose(M.std(0), 1, atol=1e-14)
        assert abs(b.mean()) < 1e-14

    def test_idempotent(self, rng):
        A, b = standardize(rng.standard_normal((20, 4)), rng.standard_normal(20))
        A2, b2 = standardize(A, b)
        np.testing.assert_allclose(A2.toarray(), A.toarray(), atol=1e-12)
        np.testing.assert_allclose(b2, b, atol=1e-12)

    def test_constant_b(self):
        with pytest.raises(StandardizationError):
            standardize(np.array([[1.0], [2.0], [4.0]]), np.array([5.0, 5.0, 5.0]))

    def test_zero_variance_column_named(self):
        with pytest.raises(StandardizationError, match="column 1"):
            standardize(np.array([[1.0, 2.0], [3.0, 2.0]]), np.array([0.0, 1.0]))

    def test_needs_two_rows(self):
        with pytest.raises(StandardizationError):
            standardize(np.array([[1.0, 2.0]]), np.array([1.0]))


class TestObjective:
    def test_identity_at_zero(self):
        P = build_problem(np.eye(2), [1.0, 1.0], RegularizerSpec.l1(1.0))
        assert objective(P, np.zeros(2)) == 0.5

    def test_zero_residual(self):
        P = build_problem([[1.0]], [2.0], RegularizerSpec.l1(1.0))
        assert objective(P, [2.0]) == 2.0

    @pytest.mark.parametrize("kind", ["l1", "capped-l1", "scad", "group-l2"])
    @pytest.mark.parametrize("loss_scale", ["cols", "rows", "unit"])
    def test_vs_dense_oracle(self, rng, kind, loss_scale):
        M = rng.standard_normal((5, 5))
        b = rng.standard_normal(5)
        x = rng.standard_normal(5)
        groups = (0, 2, 5)
        spec = RegularizerSpec.from_dict({"type": kind, "lambda": 0.3, "theta": 0.4, "gamma": 3.5,
                                          "groups": list(groups)}, n=5)
        P = build_problem(M, b, spec, 1, loss_scale)
        divisor = {"cols": 5, "rows": 5, "unit": 1}[loss_scale]
        expected = dense_objective(M, b, x, kind, 0.3, divisor, theta=0.4, gamma=3.5, groups=groups)
        assert objective(P, x) == pytest.approx(expected, abs=1e-10)

    def test_rows_scaling_uses_m(self, rng):
        M = rng.standard_normal((4, 6))
        b = rng.standard_normal(4)
        P = build_problem(M, b, RegularizerSpec.l1(1e-9), 1, "rows")
        assert objective(P, np.zeros(6)) == pytest.approx(b @ b / 8, rel=1e-9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigurationError):
            build_problem(np.zeros((2, 2)), [1.0, 1.0], RegularizerSpec.l1(1.0))
        with pytest.raises(ConfigurationError):
            build_problem(np.eye(2), [1.0], RegularizerSpec.l1(1.0))
        with pytest.raises(ConfigurationError):
            build_problem(np.eye(2), [1.0, 1.0], RegularizerSpec.l1(1.0), 1, "samples")
        P = build_problem(np.eye(2), [1.0, 1.0], RegularizerSpec.l1(1.0))
        with pytest.raises(ConfigurationError):
            objective(P, np.zeros(3))


class TestGradient:
    def test_zero_residual(self):
        P = build_problem(np.eye(2), [0.0, 0.0], RegularizerSpec.l1(1.0), 2)
        np.testing.assert_array_equal(grad_block(P, np.zeros(2), 0), [0.0])

    def test_hand_example(self):
        P = build_problem(np.eye(2), [0.0, 0.0], RegularizerSpec.l1(1.0), 2)
        r = P.A.matvec(np.array([3.0, 0.0])) - P.b
        assert grad_block(P, r, 0)[0] == 1.5

    @pytest.mark.parametrize("seed", range(20))
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 21))
        m = int(rng.integers(2, 25))
        s = int(rng.integers(1, n + 1))
        P = build_problem(rng.standard_normal((m, n)), rng.standard_normal(m),
                          RegularizerSpec.l1(0.1), s, ["cols", "rows", "unit"][seed % 3])
        x = rng.standard_normal(n)
        r = P.A.matvec(x) - P.b
        g = np.concatenate([grad_block(P, r, i) for i in range(P.s)])

        def f(z):
            res = P.A.matvec(z) - P.b
            return res @ res / (2 * P.divisor)

        eps = 1e-6
        fd = np.array([(f(x + eps * e) - f(x - eps * e)) / (2 * eps) for e in np.eye(n)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


class TestSteps:
    def test_identity(self):
        P = build_problem(np.eye(4), np.ones(4), RegularizerSpec.l1(1.0), 2)
        for i in range(2):
            assert step_size(P, i, "paper-block") == pytest.approx(1.0)
            assert step_size(P, i, StepPolicy.LIPSCHITZ_BLOCK) == pytest.approx(4.0)
        assert step_size(P, 0, "full-lipschitz") == pytest.approx(4.0)

    def test_reciprocal(self):
        P = build_problem(2 * np.eye(4), np.ones(4), RegularizerSpec.l1(1.0), 2)
        assert step_size(P, 1, "paper-block") == pytest.approx(0.25)

    def test_zero_block_undefined(self):
        M = np.array([[1.0, 0.0], [1.0, 0.0]])
        P = build_problem(M, [1.0, 1.0], RegularizerSpec.l1(1.0), 2)
        with pytest.raises(UndefinedStepError):
            step_size(P, 1, "paper-block")
        with pytest.raises(ValueError):
            step_size(P, 0, "armijo")

    @pytest.mark.parametrize("seed", range(5))
    def test_block_step_at_least_full(self, seed):
        P = small_instance(seed, m=9, n=12, s=4)
        full = step_size(P, 0, "full-lipschitz")
        for i in range(P.s):
            assert step_size(P, i, "lipschitz-block") >= full * (1 - 1e-9)


class TestStationarity:
    def test_exact_minimizer(self):
        P = build_problem([[1.0]], [2.0], RegularizerSpec.l1(1e-300))
        assert stationarity_residual(P, [2.0], 1.0) == 0.0

    def test_subdifferential_absorbs_gradient(self):
        P = build_problem([[1.0]], [0.5], RegularizerSpec.l1(1.0))
        assert stationarity_residual(P, [0.0], 1.0) == 0.0
        assert stationarity_residual(P, [0.0], 0.3) == 0.0

    def test_pure(self, lasso_small, rng):
        x = rng.standard_normal(lasso_small.n)
        assert stationarity_residual(lasso_small, x, 0.7) == stationarity_residual(lasso_small, x, 0.7)

    def test_rejects_nonpositive_step(self, lasso_small):
        with pytest.raises(ValueError):
            stationarity_residual(lasso_small, np.zeros(lasso_small.n), 0.0)


class TestResidualCache:
    def test_drift_after_many_updates(self, rng):
        P = small_instance(4, m=30, n=40, s=8, density=0.3)
        cache = ResidualCache(P, np.zeros(P.n))
        for _ in range(1000):
            i = int(rng.integers(P.s))
            cache.set_block(i, rng.standard_normal(P.partition.size(i)))
        exact = P.A.matvec(cache.x) - P.b
        assert np.linalg.norm(cache.r - exact) <= 1e-6 * (1 + np.linalg.norm(P.b))
        drift = cache.refresh(pass_index=1)
        assert drift <= 1e-8 * (1 + np.linalg.norm(P.b))
        assert cache.last_refresh == 1
        assert cache.objective() == pytest.approx(objective(P, cache.x), rel=1e-12)

    def test_shifted_leaves_cache(self, lasso_small):
        cache = ResidualCache(lasso_small, np.zeros(lasso_small.n))
        r0 = cache.r.copy()
        xi = np.ones(lasso_small.partition.size(0))
        rs = cache.shifted(0, xi)
        np.testing.assert_array_equal(cache.r, r0)
        x = np.zeros(lasso_small.n)
        x[lasso_small.partition.slice(0)] = xi
        np.testing.assert_allclose(rs, lasso_small.A.matvec(x) - lasso_small.b, atol=1e-13)


class TestReferenceOptimum:
    def test_least_squares(self):
        rng = np.random.default_rng(2)
        M = rng.standard_normal((8, 3))
        b = rng.standard_normal(8)
        lam = 1e-12
        P = build_problem(M, b, RegularizerSpec.l1(lam), 3)
        x_ls = np.linalg.solve(M.T @ M, M.T @ b)
        _, F, info = reference_optimum(P, budget=10000)
        assert F == pytest.approx(objective(P, x_ls), abs=1e-8)
        assert all(v["residual"] < 1e-8 for v in info.values())

    @pytest.mark.parametrize("seed", range(3))
    def test_lasso_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        M = rng.standard_normal((4, 2))
        b = rng.standard_normal(4) * 2
        lam = 0.2
        P = build_problem(M, b, RegularizerSpec.l1(lam), 2)
        x_enum, F_enum = lasso_enumeration(M, b, lam, P.divisor)
        x, F, _ = reference_optimum(P, budget=10000)
        assert F == pytest.approx(F_enum, abs=1e-6)
        np.testing.assert_allclose(x, x_enum, atol=1e-5)

    def test_deterministic(self, lasso_small):
        F1 = reference_optimum(lasso_small, budget=2000)[1]
        F2 = reference_optimum(lasso_small, budget=2000)[1]
        assert F1 == F2


def test_instance_round_trip(tmp_path):
    spec = RegularizerSpec.group_l2(0.5, make_partition(10, 5))
    A, b, _ = gen_sparse_ls(6, 10, 0.3, 9)
    P = build_problem(A, b, spec, 5, "unit", meta={"seed": 9, "density": 0.3})
    meta = save_instance(P, tmp_path)
    Q = load_instance(meta)
    assert isinstance(Q, ProblemInstance)
    np.testing.assert_array_equal(Q.A.toarray(), P.A.toarray())
    np.testing.assert_array_equal(Q.b, P.b)
    assert Q.reg == P.reg and Q.partition == P.partition and Q.loss_scale == "unit"
    assert Q.meta == {"seed": 9, "density": 0.3}
    x = np.linspace(-1, 1, 10)
    assert objective(Q, x) == objective(P, x)


def test_colmatrix_instance_accepts_dense_and_sparse(rng):
    M = rng.standard_normal((5, 4))
    P1 = build_problem(M, np.ones(5), RegularizerSpec.l1(0.1), 2)
    import scipy.sparse as sp
    P2 = build_problem(ColMatrix(sp.csc_matrix(M)), np.ones(5), RegularizerSpec.l1(0.1), 2)
    np.testing.assert_allclose(P1.block_gram, P2.block_gram, rtol=1e-10)
