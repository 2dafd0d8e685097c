"""Brute-force ground truth for small group-sparse problems."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy.optimize import minimize

from .groups import GroupPartition, group_norms
from .objectives import ConvexObjective, Restricted
from .regularizers import CompositeRegularizer, composite_from_norms, q_derivative
from .solvers import SolverConfig, solve_smooth

ENUMERATION_BUDGET = 10**6


class BudgetExceeded(ValueError):
    def __init__(self, required: int, budget: int):
        super().__init__(f"enumeration needs {required} supports, budget is {budget}")
        self.required = required


def _supports(t: int, max_size: int, budget: int, min_size: int = 0):
    required = sum(comb(t, j) for j in range(min_size, max_size + 1))
    if required > budget:
        raise BudgetExceeded(required, budget)
    for j in range(min_size, max_size + 1):
        yield from combinations(range(t), j)


def restricted_minimizer(obj: ConvexObjective, S, cfg: SolverConfig = SolverConfig(), x0=None):
    """Minimize ``obj`` over vectors supported on the groups in ``S``.

    Returns ``(beta, objective)``.
    """
    coords = obj.partition.coords(S)
    if coords.size == 0:
        return np.zeros(obj.n), obj.value(np.zeros(obj.n))
    sub = Restricted(obj, coords)
    start = np.zeros(coords.size) if x0 is None else np.asarray(x0, dtype=float)[coords]
    # quasi-Newton gets close fast; gradient descent polishes to cfg.grad_tol
    x, _ = _lbfgs(sub.value_and_grad, start, cfg)
    res = solve_smooth(sub, x, cfg)
    return sub.embed(res.beta), res.objective


def best_support(obj: ConvexObjective, s: int, inner: SolverConfig = SolverConfig(),
                 budget: int = ENUMERATION_BUDGET):
    """Exhaustive search over supports of at most ``s`` groups.

    Returns ``(support, beta, objective)``; ties go to the support found first
    (smaller, then lexicographically lower).
    """
    t = obj.partition.t
    best = None
    for S in _supports(t, min(s, t), budget):
        beta, val = restricted_minimizer(obj, S, inner)
        if best is None or val < best[2] - 1e-12 * max(1.0, abs(val)):
            best = (frozenset(S), beta, val)
    return best


def best_regularized(obj: ConvexObjective, penalty, penalty_grad, inner: SolverConfig = SolverConfig(),
                     starts: int = 3, seed: int = 0, budget: int = ENUMERATION_BUDGET):
    """Global minimum of ``L(u) + sum_i penalty(||u_i||)`` by support enumeration.

    On each support every group norm is kept positive so the objective is
    smooth there; each support is solved from the restricted minimizer of
    ``L`` and ``starts - 1`` random points. Returns ``(u, objective)``.
    """
    P = obj.partition
    rng = np.random.default_rng(seed)
    best_u, best_val = np.zeros(obj.n), obj.value(np.zeros(obj.n)) + float(np.sum(penalty(np.zeros(P.t))))
    for S in _supports(P.t, P.t, budget, min_size=1):
        coords = P.coords(S)
        sub_part = GroupPartition.from_lists(
            [np.searchsorted(coords, P.index(i)).tolist() for i in S], n=coords.size)
        sub = Restricted(obj, coords)

        def fn(x, sub=sub, sub_part=sub_part):
            f, g = sub.value_and_grad(x)
            nrm = group_norms(sub_part, x)
            safe = np.maximum(nrm, 1e-300)
            f += float(np.sum(penalty(nrm)))
            g = g + (penalty_grad(safe) / safe)[sub_part.labels] * x
            return f, g

        x_ls, _ = restricted_minimizer(obj, S, inner)
        inits = [x_ls[coords]]
        scale = max(np.linalg.norm(inits[0]) / np.sqrt(coords.size), 1e-2)
        inits += [rng.normal(scale=scale, size=coords.size) for _ in range(starts - 1)]
        for x0 in inits:
            if np.any(group_norms(sub_part, x0) == 0):
                continue
            x, val = _lbfgs(fn, x0, inner)
            if val < best_val:
                best_val, best_u = val, sub.embed(x)
    return best_u, best_val


def _lbfgs(fn, x0, cfg: SolverConfig):
    """Quasi-Newton local minimization; returns ``(x, value)``.

    Restricted objectives with a penalty that is nonsmooth at a zero group
    norm make plain gradient descent crawl when a group wants to vanish;
    L-BFGS reaches the same limit in a few hundred evaluations.
    """
    try:
        res = minimize(fn, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 0.0})
    except (FloatingPointError, ValueError):
        return x0, np.inf
    val = float(res.fun)
    return res.x, val if np.isfinite(val) else np.inf


def _composite_objective_fn(obj, R: CompositeRegularizer, coords, sub_part):
    sub = Restricted(obj, coords)
    q = R.q

    def fn(x):
        f, g = sub.value_and_grad(x)
        nrm = group_norms(sub_part, x)
        C = composite_from_norms(q, nrm)
        safe = np.maximum(nrm, 1e-300)
        dC = q_derivative(q, max(C, 1e-300))
        with np.errstate(over="ignore", invalid="ignore"):
            coef = q_derivative(q, safe) / dC / safe
        return f + R.lam * C, g + R.lam * coef[sub_part.labels] * x

    return sub, fn


@dataclass
class Verification:
    verified: bool
    gap: float
    candidate_objective: float
    best_probe_objective: float
    probes: int


def verify_global_min(obj: ConvexObjective, R: CompositeRegularizer, candidate, grid: dict | None = None,
                      tol: float = 1e-8, seed: int = 0, inner: SolverConfig = SolverConfig(max_iters=3000),
                      budget: int = ENUMERATION_BUDGET) -> Verification:
    """Check that no probe beats ``candidate`` on ``L + composite penalty``.

    Probes are axis grids through the candidate, Gaussian clouds around the
    candidate and the origin, and local minimizers restricted to every
    nonempty support. ``grid={"mode": "dense", "points": k}`` adds a full
    ``k**n`` grid (n <= 8 only). Reports; never raises on failure.
    """
    P = obj.partition
    candidate = np.asarray(candidate, dtype=float)
    F = lambda b: obj.value(b) + R.value(b)
    f_cand = F(candidate)
    rng = np.random.default_rng(seed)
    grid = grid or {}

    ref, _ = restricted_minimizer(obj, range(P.t), inner)
    radius = 1.5 * max(np.abs(ref).max(), np.abs(candidate).max(), 1e-3)
    best = np.inf
    count = 0

    def probe(b):
        nonlocal best, count
        v = F(b)
        count += 1
        if v < best:
            best = v

    k = int(grid.get("axis_points", 9))
    for j in range(P.n):
        for delta in np.linspace(-radius, radius, k):
            b = candidate.copy()
            b[j] += delta
            probe(b)
    for sigma in (1e-3, 1e-2, 1e-1, 1.0):
        for _ in range(int(grid.get("gaussian", 25))):
            probe(candidate + sigma * radius * rng.normal(size=P.n))
            probe(sigma * radius * rng.normal(size=P.n))
    if grid.get("mode") == "dense":
        if P.n > 8:
            raise ValueError("dense grid mode supports n <= 8")
        axis = np.linspace(-radius, radius, int(grid.get("points", 5)))
        for pt in np.array(np.meshgrid(*[axis] * P.n)).reshape(P.n, -1).T:
            probe(pt)

    for S in _supports(P.t, P.t, budget, min_size=1):
        coords = P.coords(S)
        sub_part = GroupPartition.from_lists(
            [np.searchsorted(coords, P.index(i)).tolist() for i in S], n=coords.size)
        sub, fn = _composite_objective_fn(obj, R, coords, sub_part)
        x_ls, _ = restricted_minimizer(obj, S, inner)
        inits = [x_ls[coords], candidate[coords]]
        inits.append(rng.normal(scale=radius / 3, size=coords.size))
        for x0 in inits:
            x0 = x0.copy()
            zero = group_norms(sub_part, x0) == 0
            if zero.any():
                x0 = x0 + (1e-3 * radius * rng.normal(size=coords.size)) * zero[sub_part.labels]
            x, _ = _lbfgs(fn, x0, inner)
            probe(sub.embed(x))

    gap = max(0.0, f_cand - best)
    return Verification(gap <= tol, gap, f_cand, best, count)


@dataclass(frozen=True)
class RscEstimate:
    mu: float
    L: float
    s: int
    samples: int


def estimate_rsc(obj: ConvexObjective, s: int, samples: int = 200, seed: int = 0,
                 scale: float = 1.0) -> RscEstimate:
    """Empirical restricted strong convexity / smoothness constants.

    Each sample draws a base point, a Gaussian direction and a random group
    order; the direction truncated to its first ``j`` groups is a probe at
    group sparsity ``j``. The estimate at ``s`` pools levels ``1..s`` so
    estimates are monotone in ``s`` under a fixed seed.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    P = obj.partition
    s = min(s, P.t)
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, 0.0
    for _ in range(samples):
        beta = scale * rng.normal(size=P.n)
        full = scale * rng.normal(size=P.n)
        order = rng.permutation(P.t)
        f0, g0 = obj.value_and_grad(beta)
        for j in range(1, s + 1):
            delta = np.zeros(P.n)
            idx = P.coords(order[:j])
            delta[idx] = full[idx]
            dd = delta @ delta
            if dd == 0:
                continue
            ratio = 2 * (obj.value(beta + delta) - f0 - g0 @ delta) / dd
            lo, hi = min(lo, ratio), max(hi, ratio)
    return RscEstimate(mu=float(lo), L=float(hi), s=s, samples=samples)
