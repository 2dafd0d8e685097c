"""Gradient descent, proximal gradient for the group LASSO, and
majorization-minimization for q-regularized objectives."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .groups import group_norms
from .objectives import ConvexObjective
from .regularizers import (
    NORM_FLOOR,
    CompositeRegularizer,
    QFunction,
    composite_from_norms,
    group_soft_threshold,
    q_derivative,
)

# smallest step before a line search is declared stalled
MIN_STEP = 1e-20


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"objective became {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    grad_tol: float = 1e-8
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    seed: int = 0
    restarts: int = 4
    max_outer: int = 100

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not self.grad_tol > 0 or not self.step_init > 0:
            raise ValueError("grad_tol and step_init must be positive")
        if not 0 < self.backtrack_factor < 1 or not 0 < self.armijo_c < 1:
            raise ValueError("backtrack_factor and armijo_c must lie in (0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")

    @classmethod
    def from_config(cls, spec: dict | None) -> "SolverConfig":
        return cls(**(spec or {}))


@dataclass
class SolveResult:
    beta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    grad_norm_final: float
    trace: list[float] = field(default_factory=list)
    message: str = ""
    grad_trace: list[float] = field(default_factory=list)

    def export_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "grad_norm"])
            grads = self.grad_trace or [float("nan")] * len(self.trace)
            for i, (f, g) in enumerate(zip(self.trace, grads)):
                w.writerow([i, repr(f), repr(g)])


def _as_fn(f):
    return f.value_and_grad if hasattr(f, "value_and_grad") else f


def solve_smooth(f, x0, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Gradient descent with Armijo backtracking.

    ``f`` is a callable returning ``(value, gradient)`` or an object with a
    ``value_and_grad`` method. The objective trace is non-increasing.
    """
    fn = _as_fn(f)
    x = np.array(x0, dtype=float)
    val, g = fn(x)
    if not np.isfinite(val) or not np.all(np.isfinite(g)):
        raise DivergenceError(0, val)
    trace, gtrace = [val], [float(np.linalg.norm(g))]
    step = cfg.step_init
    it = 0
    msg = ""
    while True:
        gn = gtrace[-1]
        if gn <= cfg.grad_tol:
            return SolveResult(x, val, it, True, gn, trace, "gradient tolerance reached", gtrace)
        if it >= cfg.max_iters:
            msg = "iteration limit"
            break
        gg = gn * gn
        step = min(cfg.step_init, step / cfg.backtrack_factor)
        while True:
            x_new = x - step * g
            v_new, g_new = fn(x_new)
            if np.isfinite(v_new) and v_new <= val - cfg.armijo_c * step * gg:
                break
            step *= cfg.backtrack_factor
            if step < MIN_STEP:
                break
        it += 1
        if step < MIN_STEP:
            msg = "line search stalled"
            break
        if not np.all(np.isfinite(g_new)):
            raise DivergenceError(it, v_new)
        x, val, g = x_new, v_new, g_new
        trace.append(val)
        gtrace.append(float(np.linalg.norm(g)))
    return SolveResult(x, val, it, False, gtrace[-1], trace, msg, gtrace)


def _check_problem(obj: ConvexObjective, lam: float):
    if not lam > 0:
        raise ValueError("regularization strength must be positive")
    if not obj.is_strictly_convex():
        raise ValueError("objective must be strictly convex (set ridge > 0)")


def _sufficient_decrease(val, v_new, g, g_new, d, step) -> bool:
    dd = d @ d
    if abs(v_new - val) > 1e-10 * max(1.0, abs(val)):
        return v_new <= val + g @ d + dd / (2 * step)
    # value differences are at rounding level here; use the curvature along d
    return (g_new - g) @ d <= dd / step


def solve_composite(fn, prox, penalty, x0, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Proximal gradient with backtracking for ``f(x) + h(x)``.

    ``fn`` returns ``(f, grad f)``; ``prox(v, s)`` is the proximal map of
    ``s * h`` and ``penalty(x)`` evaluates ``h``. Converges when the gradient
    mapping ``(x - prox(x - s*grad, s)) / s`` has norm at most ``cfg.grad_tol``.
    """
    fn = _as_fn(fn)
    x = np.array(x0, dtype=float)
    val, g = fn(x)
    if not np.isfinite(val):
        raise DivergenceError(0, val)
    F = val + penalty(x)
    trace, gtrace = [F], []
    step = cfg.step_init
    for it in range(cfg.max_iters + 1):
        step = min(cfg.step_init, step / cfg.backtrack_factor)
        while True:
            x_new = prox(x - step * g, step)
            d = x_new - x
            v_new, g_new = fn(x_new)
            if np.isfinite(v_new) and _sufficient_decrease(val, v_new, g, g_new, d, step):
                break
            step *= cfg.backtrack_factor
            if step < MIN_STEP:
                raise DivergenceError(it, v_new)
        gm = float(np.linalg.norm(d)) / step
        gtrace.append(gm)
        if gm <= cfg.grad_tol:
            F_new = v_new + penalty(x_new)
            # keep the better of the two final points
            if F_new <= F:
                x, F = x_new, F_new
                trace.append(F)
            return SolveResult(x, F, it, True, gm, trace, "fixed-point residual reached", gtrace)
        if it == cfg.max_iters:
            break
        x, val, g = x_new, v_new, g_new
        F = val + penalty(x)
        if not np.isfinite(F):
            raise DivergenceError(it + 1, F)
        trace.append(F)
    return SolveResult(x, F, cfg.max_iters, False, gtrace[-1], trace, "iteration limit", gtrace)


def proximal_gradient(obj: ConvexObjective, thresholds, cfg: SolverConfig = SolverConfig(),
                      x0=None) -> SolveResult:
    """Minimize ``L(beta) + sum_i thresholds[i] * ||beta|_{T_i}||_2``."""
    P = obj.partition
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), (P.t,))
    x0 = np.zeros(obj.n) if x0 is None else x0
    return solve_composite(
        obj.value_and_grad,
        lambda v, s: group_soft_threshold(P, v, s * thresholds),
        lambda b: float(thresholds @ group_norms(P, b)),
        x0, cfg,
    )


def solve_group_lasso(obj: ConvexObjective, lam: float, cfg: SolverConfig = SolverConfig(),
                      x0=None, weights=None) -> SolveResult:
    """Group LASSO ``L(beta) + lam * sum_i w_i ||beta|_{T_i}||_2`` by proximal gradient.

    ``weights`` defaults to all ones; a zero weight leaves a group unpenalized.
    """
    _check_problem(obj, lam)
    w = np.ones(obj.partition.t) if weights is None else np.asarray(weights, dtype=float)
    return proximal_gradient(obj, lam * w, cfg, x0=x0)


def _mm_weights(q: QFunction, norms, penalized) -> np.ndarray:
    # d/dn_i q^{-1}(sum_j q(n_j)) = q'(n_i) / q'(q^{-1}(sum_j q(n_j)))
    pn = np.where(penalized, norms, 0.0)
    C = composite_from_norms(q, pn[penalized])
    dC = q_derivative(q, max(C, NORM_FLOOR))
    w = q_derivative(q, np.maximum(pn, NORM_FLOOR)) / dC
    return np.where(penalized, w, 0.0)


def q_objective(obj: ConvexObjective, R: CompositeRegularizer, beta, penalized=None) -> float:
    norms = group_norms(R.partition, beta)
    if penalized is not None:
        norms = norms[np.asarray(penalized, dtype=bool)]
    return obj.value(beta) + R.lam * composite_from_norms(R.q, norms)


def _mm_run(obj, R, cfg, x0, penalized):
    P = obj.partition
    x = np.array(x0, dtype=float)
    F = q_objective(obj, R, x, penalized)
    trace = [F]
    inner = None
    msg = "outer iteration limit"
    total = 0
    for outer in range(cfg.max_outer):
        w = _mm_weights(R.q, group_norms(P, x), penalized)
        inner = proximal_gradient(obj, R.lam * w, cfg, x0=x)
        total += inner.iterations
        F_new = q_objective(obj, R, inner.beta, penalized)
        if not np.isfinite(F_new):
            raise DivergenceError(total, F_new)
        if F_new > F:
            msg = f"outer objective increased at outer step {outer}; kept best iterate"
            break
        decrease = F - F_new
        x, F = inner.beta, F_new
        trace.append(F)
        if decrease < cfg.grad_tol * max(1.0, abs(F)):
            msg = "outer objective decrease below tolerance"
            break
    converged = inner is not None and inner.converged
    gn = inner.grad_norm_final if inner is not None else 0.0
    return SolveResult(x, F, total, converged, gn, trace, msg)


def solve_q_regularized(obj: ConvexObjective, R: CompositeRegularizer,
                        cfg: SolverConfig = SolverConfig(), penalized=None, x0=None) -> SolveResult:
    """Minimize ``L(beta) + lam * q^{-1}(sum_i q(||beta|_{T_i}||))`` by reweighted group LASSO.

    Each outer step linearizes the composite penalty in the group norms at
    the current iterate and solves the resulting weighted group LASSO.
    Restart 0 starts at ``x0`` (zero by default), which makes the first
    subproblem the plain group LASSO; the remaining ``cfg.restarts - 1``
    start from seeded Gaussian points. The best objective wins.

    ``penalized`` is an optional boolean mask over groups; unpenalized
    groups are left out of the composite.
    """
    _check_problem(obj, R.lam)
    P = obj.partition
    penalized = np.ones(P.t, dtype=bool) if penalized is None else np.asarray(penalized, dtype=bool)
    rng = np.random.default_rng(cfg.seed)
    scale = np.linalg.norm(obj.gradient(np.zeros(obj.n))) / np.sqrt(obj.n)
    starts = [np.zeros(obj.n) if x0 is None else np.asarray(x0, dtype=float)]
    starts += [rng.normal(scale=max(scale, 1e-3), size=obj.n) for _ in range(cfg.restarts - 1)]
    best = None
    for s in starts:
        res = _mm_run(obj, R, cfg, s, penalized)
        if best is None or res.objective < best.objective:
            best = res
    return best


def kkt_violation(obj: ConvexObjective, lam: float, beta, tol: float = 1e-8) -> float:
    """Largest violation of the group LASSO optimality conditions at ``beta``.

    Active groups need ``grad|_T = -lam * beta|_T / ||beta|_T||``; inactive
    groups need ``||grad|_T|| <= lam``.
    """
    P = obj.partition
    g = obj.gradient(beta)
    norms = group_norms(P, beta)
    worst = 0.0
    for i in range(P.t):
        idx = P.index(i)
        if norms[i] > tol:
            v = np.linalg.norm(g[idx] + lam * beta[idx] / norms[i])
        else:
            v = max(0.0, np.linalg.norm(g[idx]) - lam)
        worst = max(worst, float(v))
    return worst

