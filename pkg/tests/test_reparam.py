import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groupsparse.experiments import equivalence_instance
from groupsparse.groups import GroupPartition, group_norms
from groupsparse.objectives import LeastSquaresObjective
from groupsparse.oracle import best_regularized
from groupsparse.reparam import (
    MASK_KINDS,
    MaskedObjective,
    effective_coefficients,
    equivalent_regularized_value,
    group_penalty,
    group_penalty_derivative,
    masked_gradient,
    masked_value,
    minimize_masked,
    optimal_mask,
)
from groupsparse.rng import stream

from conftest import central_fd, rel_err


def small_objective(seed, sizes=(2, 2, 1)):
    rng = np.random.default_rng(seed)
    P = GroupPartition.contiguous(list(sizes))
    X = rng.normal(size=(8, P.n))
    return LeastSquaresObjective(X, rng.normal(size=8), P, ridge=1e-2)


class TestMaskedValue:
    def test_softmax_identity_mask(self):
        obj = small_objective(0)
        beta = np.random.default_rng(1).normal(size=obj.n)
        M = MaskedObjective(obj, "softmax", 0.3)
        assert masked_value(M, np.zeros(3), beta) == pytest.approx(obj.value(beta) + 0.3 * beta @ beta)

    def test_powerprop_at_zero(self):
        obj = small_objective(0)
        M = MaskedObjective(obj, "powerprop", 0.3)
        assert masked_value(M, None, np.zeros(obj.n)) == obj.value(np.zeros(obj.n))

    def test_l1_unit_mask(self):
        obj = small_objective(0)
        beta = np.random.default_rng(2).normal(size=obj.n)
        M = MaskedObjective(obj, "l1", 0.3)
        assert masked_value(M, np.ones(3), beta) == pytest.approx(obj.value(beta) + 0.3 * (3 + beta @ beta))

    def test_mask_presence_checked(self):
        obj = small_objective(0)
        with pytest.raises(ValueError):
            masked_value(MaskedObjective(obj, "softmax", 1.0), None, np.zeros(obj.n))
        with pytest.raises(ValueError):
            masked_value(MaskedObjective(obj, "powerprop", 1.0), np.zeros(3), np.zeros(obj.n))
        with pytest.raises(ValueError):
            MaskedObjective(obj, "dropout", 1.0)


class TestEffectiveCoefficients:
    def test_examples(self, two_groups):
        obj = LeastSquaresObjective(np.eye(4), np.zeros(4), two_groups)
        beta = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_array_equal(effective_coefficients(MaskedObjective(obj, "softmax", 1), np.zeros(2), beta),
                                      beta)
        unit = np.array([0.6, 0.8, 0.0, 1.0])
        np.testing.assert_allclose(effective_coefficients(MaskedObjective(obj, "powerprop", 1), None, unit), unit)
        np.testing.assert_array_equal(
            effective_coefficients(MaskedObjective(obj, "l1", 1), np.array([2.0, 0.0]), np.ones(4)), [2, 2, 0, 0])


class TestEquivalentValue:
    def test_at_zero(self):
        obj = small_objective(1)
        for kind in MASK_KINDS:
            M = MaskedObjective(obj, kind, 0.7)
            assert equivalent_regularized_value(M, np.zeros(obj.n)) == obj.value(np.zeros(obj.n))

    def test_powerprop_one_group(self):
        obj = LeastSquaresObjective(np.eye(2), np.array([1.0, 1.0]), GroupPartition.contiguous([2]))
        u = np.array([3.0, 4.0])
        M = MaskedObjective(obj, "powerprop", 2.0)
        assert equivalent_regularized_value(M, u) == pytest.approx(obj.value(u) + 10.0)


class TestGradients:
    @pytest.mark.parametrize("kind", MASK_KINDS)
    def test_fd_50_probes(self, kind):
        rng = np.random.default_rng(3)
        t = 3
        for probe in range(50):
            obj = small_objective(probe)
            M = MaskedObjective(obj, kind, float(rng.uniform(0.05, 1.0)))
            beta = rng.normal(size=obj.n)
            if kind == "powerprop":
                f = lambda z: masked_value(M, None, z)
                _, gb = masked_gradient(M, None, beta)
                assert rel_err(gb, central_fd(f, beta)) <= 1e-5
                continue
            # keep l1 masks away from the kink of |w|
            w = rng.uniform(0.2, 2.0, size=t) * rng.choice([-1, 1], size=t) if kind == "l1" else rng.normal(size=t)
            z = np.concatenate([w, beta])
            f = lambda z: masked_value(M, z[:t], z[t:])
            gw, gb = masked_gradient(M, w, beta)
            assert rel_err(np.concatenate([gw, gb]), central_fd(f, z)) <= 1e-5

    def test_powerprop_zero_group_has_zero_mask_term(self):
        obj = small_objective(4)
        M = MaskedObjective(obj, "powerprop", 0.5)
        beta = np.random.default_rng(5).normal(size=obj.n)
        beta[:2] = 0.0
        _, gb = masked_gradient(M, None, beta)
        np.testing.assert_array_equal(gb[:2], 0.0)

    def test_l1_zero_mask_cuts_data_path(self):
        obj = small_objective(4)
        M = MaskedObjective(obj, "l1", 0.5)
        beta = np.random.default_rng(6).normal(size=obj.n)
        _, gb = masked_gradient(M, np.zeros(3), beta)
        np.testing.assert_allclose(gb, 2 * 0.5 * beta)

    @pytest.mark.parametrize("kind", MASK_KINDS)
    @given(a=st.floats(1e-2, 20.0))
    def test_penalty_derivative(self, kind, a):
        M = MaskedObjective(small_objective(0), kind, 0.9)
        h = 1e-6 * a
        fd = (group_penalty(M, np.array(a + h)) - group_penalty(M, np.array(a - h))) / (2 * h)
        assert float(group_penalty_derivative(M, np.array(a))) == pytest.approx(float(fd), rel=1e-5)


class TestSubstitution:
    @pytest.mark.parametrize("kind", MASK_KINDS)
    @given(seed=st.integers(0, 10**6))
    def test_masked_never_below_equivalent(self, kind, seed):
        rng = np.random.default_rng(seed)
        obj = small_objective(seed % 7)
        M = MaskedObjective(obj, kind, float(rng.uniform(0.05, 2.0)))
        beta = rng.normal(scale=2.0, size=obj.n)
        w = None if kind == "powerprop" else rng.normal(size=3)
        u = effective_coefficients(M, w, beta)
        assert masked_value(M, w, beta) >= equivalent_regularized_value(M, u) - 1e-10 * max(1.0, abs(masked_value(M, w, beta)))

    @pytest.mark.parametrize("kind", MASK_KINDS)
    @given(seed=st.integers(0, 10**6))
    def test_optimal_mask_attains_equivalent(self, kind, seed):
        rng = np.random.default_rng(seed)
        obj = small_objective(seed % 7)
        M = MaskedObjective(obj, kind, float(rng.uniform(0.05, 2.0)))
        u = rng.normal(scale=2.0, size=obj.n)
        u[:2] *= rng.integers(0, 2)
        w, beta = optimal_mask(M, u)
        np.testing.assert_allclose(effective_coefficients(M, w, beta), u, atol=1e-12)
        assert masked_value(M, w, beta) == pytest.approx(equivalent_regularized_value(M, u), rel=1e-12)

    @given(seed=st.integers(0, 10**6))
    def test_powerprop_exact_when_norms_square(self, seed):
        rng = np.random.default_rng(seed)
        obj = small_objective(seed % 7)
        M = MaskedObjective(obj, "powerprop", 0.4)
        beta = rng.normal(size=obj.n)
        u = effective_coefficients(M, None, beta)
        np.testing.assert_allclose(group_norms(obj.partition, u), group_norms(obj.partition, beta) ** 2)
        assert masked_value(M, None, beta) == pytest.approx(equivalent_regularized_value(M, u), rel=1e-12)


class TestOptimaAgree:
    @pytest.mark.parametrize("kind", MASK_KINDS)
    @pytest.mark.parametrize("seed", [100, 101])
    def test_masked_and_regularized_minima(self, kind, seed):
        obj, lam = equivalence_instance(stream(seed, "equivalence"))
        M = MaskedObjective(obj, kind, lam)
        res, _, _ = minimize_masked(M, seed=seed)
        _, reg = best_regularized(obj, lambda a: group_penalty(M, a), lambda a: group_penalty_derivative(M, a))
        assert abs(res.objective - reg) <= 1e-4 * abs(reg)

    @pytest.mark.parametrize("seed", [3, 11])
    def test_l1_escapes_dead_groups(self, seed):
        # random starts alone left a group at w = 0, beta = 0 on these instances
        obj, lam = equivalence_instance(stream(seed, "equivalence"))
        M = MaskedObjective(obj, "l1", lam)
        res, _, _ = minimize_masked(M, restarts=16, seed=seed)
        _, reg = best_regularized(obj, lambda a: group_penalty(M, a), lambda a: group_penalty_derivative(M, a),
                                  seed=seed)
        assert abs(res.objective - reg) <= 1e-4 * abs(reg)

    def test_dead_group_is_a_local_minimum(self):
        obj = small_objective(0)
        M = MaskedObjective(obj, "l1", 0.5)
        w, beta = np.array([1.0, 0.0, 1.0]), np.array([0.3, -0.2, 0.0, 0.0, 0.4])
        base = masked_value(M, w, beta)
        rng = np.random.default_rng(0)
        for _ in range(200):
            dw, db = 1e-3 * rng.uniform(0, 1), 1e-3 * rng.normal(size=2)
            w2, b2 = w.copy(), beta.copy()
            w2[1], b2[2:4] = dw, db
            assert masked_value(M, w2, b2) >= base

    def test_gradient_descent_path_agrees(self):
        obj, lam = equivalence_instance(stream(3, "equivalence"))
        M = MaskedObjective(obj, "powerprop", lam)
        fast, _, _ = minimize_masked(M, restarts=2, seed=0)
        slow, _, _ = minimize_masked(M, restarts=2, seed=0, method="gd")
        assert slow.objective == pytest.approx(fast.objective, rel=1e-4)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            minimize_masked(MaskedObjective(small_objective(0), "l1", 1.0), method="newton")
