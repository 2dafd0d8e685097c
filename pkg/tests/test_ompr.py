import numpy as np
import pytest

from groupsparse.experiments import ompr_instance
from groupsparse.groups import GroupPartition, group_norms, support
from groupsparse.objectives import LeastSquaresObjective, tau_threshold
from groupsparse.ompr import (
    NoImprovingGroup,
    OmprConfig,
    bicriteria_diagnostic,
    run_ompr,
    select_entering_group,
    select_leaving_group,
)
from groupsparse.oracle import restricted_minimizer
from groupsparse.regularizers import QFunction
from groupsparse.rng import stream


def random_instance(seed, groups=5, size=2, m=9):
    rng = np.random.default_rng(seed)
    P = GroupPartition.contiguous([size] * groups)
    X = rng.normal(size=(m, P.n)) / np.sqrt(m)
    return LeastSquaresObjective(X, rng.normal(size=m), P, ridge=1e-2), rng


class TestEnteringGroup:
    def test_empty_support_is_tau_rule(self):
        for seed in range(5):
            obj, _ = random_instance(seed)
            expected = tau_threshold(obj)[1]
            assert select_entering_group(obj, [], method="fast") == expected
            assert select_entering_group(obj, [], method="sweep") == expected

    def test_orthogonal_design_picks_largest_unexplained(self):
        obj, planted, beta = ompr_instance(stream(1, "t"), 3, groups=6)
        P = obj.partition
        S = [planted[0]]
        norms = group_norms(P, beta)
        rest = [i for i in planted if i not in S]
        expected = max(rest, key=lambda i: norms[i])
        assert select_entering_group(obj, S, method="fast") == expected
        assert select_entering_group(obj, S, method="sweep") == expected

    def test_no_residual(self):
        obj, planted, _ = ompr_instance(stream(2, "t"), 2, groups=5)
        with pytest.raises(NoImprovingGroup):
            select_entering_group(obj, planted)

    def test_full_support_rejected(self):
        obj, _ = random_instance(0, groups=2)
        with pytest.raises(ValueError):
            select_entering_group(obj, [0, 1])

    def test_sweep_matches_fast_on_100_instances(self):
        mismatches = 0
        for seed in range(100):
            obj, rng = random_instance(seed)
            S = sorted(rng.choice(obj.partition.t, size=int(rng.integers(0, 3)), replace=False).tolist())
            fast = select_entering_group(obj, S, method="fast")
            sweep = select_entering_group(obj, S, QFunction("logsum"), method="sweep")
            mismatches += fast != sweep
        assert mismatches == 0


class TestLeavingGroup:
    def test_examples(self):
        P = GroupPartition.contiguous([1, 1, 1])
        assert select_leaving_group(np.array([0.0, 2.0, 0.0]), [1], P) == 1
        assert select_leaving_group(np.array([5.0, 1.0, 3.0]), [0, 1, 2], P) == 1
        assert select_leaving_group(np.array([2.0, 2.0, 2.0]), [2, 0, 1], P) == 0

    def test_empty(self):
        with pytest.raises(ValueError):
            select_leaving_group(np.zeros(2), [], GroupPartition.contiguous([1, 1]))


class TestRunOmpr:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_recovers_planted_support(self, k):
        for seed in range(5):
            obj, planted, _ = ompr_instance(stream(seed, "ompr-test"), k)
            state, res = run_ompr(obj, OmprConfig(k_prime=k, init="random", seed=seed))
            assert sorted(state.S) == planted
            assert res.objective <= 1e-8
            assert state.round <= k * obj.partition.t

    def test_invariants_along_history(self):
        obj, planted, _ = ompr_instance(stream(9, "ompr-test"), 3, groups=8, samples=24)
        state, res = run_ompr(obj, OmprConfig(k_prime=3, init="random", seed=4, selection="both"))
        objs = [state.initial_objective] + [f for _, _, f in state.history]
        assert all(b <= a - 1e-10 for a, b in zip(objs, objs[1:]))
        assert len(state.S) == 3
        assert support(obj.partition, res.beta) <= set(state.S)
        assert state.selection_mismatches == 0

    def test_zero_rounds_keeps_initial_support(self):
        obj, _ = random_instance(3)
        state, res = run_ompr(obj, OmprConfig(k_prime=2, rounds=0))
        g = group_norms(obj.partition, obj.gradient(np.zeros(obj.n)))
        assert state.S == sorted(np.argsort(-g, kind="stable")[:2].tolist())
        assert state.history == []
        _, val = restricted_minimizer(obj, state.S)
        assert res.objective == pytest.approx(val, abs=1e-10)

    def test_full_support_is_ridge_optimum(self):
        obj, _ = random_instance(4)
        state, res = run_ompr(obj, OmprConfig(k_prime=obj.partition.t))
        H = obj.X.T @ obj.X + obj.ridge * np.eye(obj.n)
        ridge = np.linalg.solve(H, obj.X.T @ obj.Y[:, 0])
        assert res.objective == pytest.approx(obj.value(ridge), abs=1e-10)

    def test_k_prime_too_large(self):
        obj, _ = random_instance(5, groups=3)
        with pytest.raises(ValueError):
            run_ompr(obj, OmprConfig(k_prime=4))

    def test_history_export(self, tmp_path):
        obj, _, _ = ompr_instance(stream(6, "ompr-test"), 2)
        state, _ = run_ompr(obj, OmprConfig(k_prime=2, init="random", seed=1))
        state.export_history(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "round,in,out,objective"
        assert len(lines) == 1 + len(state.history)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OmprConfig(k_prime=0)
        with pytest.raises(ValueError):
            OmprConfig(k_prime=1, lam_select=-1.0)
        with pytest.raises(ValueError):
            OmprConfig(k_prime=1, selection="greedy")
        cfg = OmprConfig.from_config({"k_prime": 2, "q": {"kind": "power", "p": 0.5}, "inner": {"max_iters": 10}})
        assert cfg.q == QFunction("power", p=0.5) and cfg.inner.max_iters == 10


def test_bicriteria_diagnostic_on_isometry():
    obj, _, _ = ompr_instance(stream(0, "t"), 2)
    d = bicriteria_diagnostic(obj, 2, 2, samples=20)
    # mu = L = 1 gives a required k' of 2 * (1 + 1)
    assert d["required_k_prime"] == pytest.approx(4.0, abs=1e-8)
    assert not d["satisfied"]
