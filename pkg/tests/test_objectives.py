import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groupsparse.groups import GroupPartition
from groupsparse.objectives import (
    LeastSquaresObjective,
    MultinomialLogisticObjective,
    QuadraticObjective,
    load_csv,
    tau_threshold,
)

from conftest import central_fd, rel_err


def random_ls(rng, K=1):
    m, d = rng.integers(3, 10), rng.integers(1, 6)
    return LeastSquaresObjective(rng.normal(size=(m, d)), rng.normal(size=(m, K)), ridge=rng.uniform(0, 0.1))


def random_logistic(rng):
    m, d, K = rng.integers(4, 12), rng.integers(1, 5), rng.integers(2, 4)
    return MultinomialLogisticObjective(rng.normal(size=(m, d)), rng.integers(0, K, size=m), K,
                                        ridge=rng.uniform(0, 0.1))


class TestLeastSquares:
    def test_value_at_zero(self):
        Y = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 1.0]])
        obj = LeastSquaresObjective(np.ones((3, 2)), Y)
        assert obj.value(np.zeros(4)) == pytest.approx(0.5 * np.sum(Y ** 2))

    def test_exact_fit(self):
        y = np.array([1.0, -2.0, 0.5])
        obj = LeastSquaresObjective(np.eye(3), y, ridge=0.0)
        assert obj.value(y) == 0.0

    def test_gradient_at_zero(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        obj = LeastSquaresObjective(X, Y)
        np.testing.assert_allclose(obj.gradient(np.zeros(6)), -(X.T @ Y).ravel())

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            LeastSquaresObjective(np.ones((3, 2)), np.ones(4))
        with pytest.raises(ValueError):
            LeastSquaresObjective(np.ones((3, 2)), np.ones(3)).value(np.zeros(3))
        with pytest.raises(ValueError):
            LeastSquaresObjective(np.ones((3, 2)), np.ones(3), GroupPartition.contiguous([3]))

    def test_gradient_fd_50_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            obj = random_ls(rng, K=int(rng.integers(1, 3)))
            b = rng.normal(size=obj.n)
            assert rel_err(obj.gradient(b), central_fd(obj.value, b)) <= 1e-5

    def test_hessian_is_exact(self):
        rng = np.random.default_rng(2)
        obj = random_ls(rng, K=2)
        b, d = rng.normal(size=obj.n), rng.normal(size=obj.n)
        np.testing.assert_allclose(obj.gradient(b + d) - obj.gradient(b), obj.hessian() @ d, atol=1e-10)


class TestMultinomial:
    def test_value_at_zero_is_log_k(self):
        rng = np.random.default_rng(3)
        obj = MultinomialLogisticObjective(rng.normal(size=(7, 3)), [0, 1, 2, 3, 0, 1, 2], 4)
        assert obj.value(np.zeros(obj.n)) == pytest.approx(np.log(4))

    def test_gradient_at_zero_balanced(self):
        rng = np.random.default_rng(4)
        K, m = 3, 9
        X = rng.normal(size=(m, 2))
        X -= X.mean(axis=0)
        y = np.arange(m) % K
        obj = MultinomialLogisticObjective(X, y, K, ridge=0.0)
        expected = X.T @ (np.full((m, K), 1 / K) - np.eye(K)[y]) / m
        np.testing.assert_allclose(obj.gradient(np.zeros(obj.n)), expected.ravel(), atol=1e-15)

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            MultinomialLogisticObjective(np.ones((3, 2)), [0, 1, 3], n_classes=3)
        with pytest.raises(ValueError):
            MultinomialLogisticObjective(np.ones((3, 2)), [0, 1])

    def test_gradient_fd_50_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            obj = random_logistic(rng)
            b = rng.normal(size=obj.n)
            assert rel_err(obj.gradient(b), central_fd(obj.value, b)) <= 1e-5


class TestConvexity:
    @given(seed=st.integers(0, 10**6), kind=st.sampled_from(["ls", "logistic"]))
    def test_midpoint_inequality(self, seed, kind):
        rng = np.random.default_rng(seed)
        obj = random_ls(rng) if kind == "ls" else random_logistic(rng)
        a, b = rng.normal(size=obj.n), rng.normal(size=obj.n)
        mid = obj.value(0.5 * (a + b))
        avg = 0.5 * (obj.value(a) + obj.value(b))
        # strong convexity from the ridge term alone gives this margin
        margin = obj.ridge / 8 * np.sum((a - b) ** 2)
        assert mid <= avg - margin + 1e-9 * max(1.0, abs(avg))

    def test_quadratic_strictness(self):
        assert QuadraticObjective(np.diag([1.0, 2.0])).is_strictly_convex()
        assert not QuadraticObjective(np.diag([1.0, 0.0])).is_strictly_convex()


class TestTau:
    def test_worked_example(self, identity_ls):
        tau, i = tau_threshold(identity_ls)
        assert tau == pytest.approx(3.0)
        assert i == 0

    def test_zero_response(self, two_groups):
        obj = LeastSquaresObjective(np.eye(4), np.zeros(4), two_groups)
        assert tau_threshold(obj)[0] == 0.0

    def test_single_group(self):
        rng = np.random.default_rng(6)
        X, y = rng.normal(size=(5, 3)), rng.normal(size=5)
        obj = LeastSquaresObjective(X, y, GroupPartition.contiguous([3]))
        tau, i = tau_threshold(obj)
        assert i == 0
        assert tau == pytest.approx(np.linalg.norm(X.T @ y))


class TestCsv:
    def test_reads_named_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y,b\n1,2,3\n4,5,6\n")
        X, y, names = load_csv(p, "y")
        np.testing.assert_array_equal(X, [[1, 3], [4, 6]])
        np.testing.assert_array_equal(y, [2, 5])
        assert names == ["a", "b"]

    def test_missing_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="label column"):
            load_csv(p, "y")
