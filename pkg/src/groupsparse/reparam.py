"""Masked reparameterizations of a loss and their equivalent group penalties.

Three ways of masking the groups of a coefficient vector, each paired with
the explicit regularizer it is equivalent to after minimizing out the mask:

``softmax``   L({exp(w_i) beta_i}) + lam (||w||^2 + ||beta||^2)
              ~ L(u) + lam * sum_i q_lambert(||u_i||)
``l1``        L({w_i beta_i}) + lam (||w||_1 + ||beta||^2)
              ~ L(u) + 1.5 * 2**(1/3) * lam * sum_i ||u_i||^(2/3)
``powerprop`` L({||beta_i|| beta_i}) + lam ||beta||^2
              ~ L(u) + lam * sum_i ||u_i||
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .groups import group_norms
from .objectives import ConvexObjective
from .regularizers import QFunction, lambert_w, q_derivative, q_eval
from .solvers import SolveResult, SolverConfig, solve_composite, solve_smooth

MASK_KINDS = ("softmax", "l1", "powerprop")

L1_CONSTANT = 1.5 * 2.0 ** (1.0 / 3.0)
_LAMBERT = QFunction("lambert")


@dataclass(frozen=True)
class MaskedObjective:
    base: ConvexObjective
    mask_kind: str
    lam: float

    def __post_init__(self):
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.mask_kind!r}; expected one of {MASK_KINDS}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def partition(self):
        return self.base.partition

    @property
    def has_mask(self) -> bool:
        return self.mask_kind != "powerprop"

    def _check(self, w, beta):
        if self.has_mask and w is None:
            raise ValueError(f"{self.mask_kind} mask needs mask weights w")
        if not self.has_mask and w is not None:
            raise ValueError("powerprop has no separate mask weights")
        beta = np.asarray(beta, dtype=float)
        if w is not None:
            w = np.asarray(w, dtype=float)
            if w.shape != (self.partition.t,):
                raise ValueError(f"mask weights need shape ({self.partition.t},)")
        return w, beta

    def group_scale(self, w, beta) -> np.ndarray:
        """Per-group factor multiplying beta_i in the effective coefficients."""
        w, beta = self._check(w, beta)
        if self.mask_kind == "softmax":
            return np.exp(w)
        if self.mask_kind == "l1":
            return w
        return group_norms(self.partition, beta)


def effective_coefficients(M: MaskedObjective, w, beta) -> np.ndarray:
    w, beta = M._check(w, beta)
    return M.group_scale(w, beta)[M.partition.labels] * beta


def _mask_penalty(M, w, beta):
    bb = beta @ beta
    if M.mask_kind == "softmax":
        return M.lam * (w @ w + bb)
    if M.mask_kind == "l1":
        return M.lam * (np.abs(w).sum() + bb)
    return M.lam * bb


def masked_value(M: MaskedObjective, w, beta) -> float:
    w, beta = M._check(w, beta)
    return M.base.value(effective_coefficients(M, w, beta)) + float(_mask_penalty(M, w, beta))


def masked_gradient(M: MaskedObjective, w, beta):
    """Gradients ``(grad_w, grad_beta)``; ``grad_w`` is None for powerprop.

    For the l1 mask the |w| term contributes sign(w) (0 at w = 0).
    """
    w, beta = M._check(w, beta)
    P = M.partition
    lab = P.labels
    u = effective_coefficients(M, w, beta)
    gu = M.base.gradient(u)
    # <beta_i, grad_u_i> per group
    inner = np.bincount(lab, weights=beta * gu, minlength=P.t)
    if M.mask_kind == "softmax":
        s = np.exp(w)
        return s * inner + 2 * M.lam * w, s[lab] * gu + 2 * M.lam * beta
    if M.mask_kind == "l1":
        return inner + M.lam * np.sign(w), w[lab] * gu + 2 * M.lam * beta
    n = group_norms(P, beta)
    safe = np.where(n > 0, n, 1.0)
    # d(||b|| b)/db = ||b|| I + b b' / ||b||, which vanishes at b = 0
    corr = np.where(n > 0, inner / safe, 0.0)
    return None, n[lab] * gu + beta * corr[lab] + 2 * M.lam * beta


def group_penalty(M: MaskedObjective, norms):
    """The equivalent per-group regularizer evaluated at group norms of u."""
    norms = np.asarray(norms, dtype=float)
    if M.mask_kind == "softmax":
        return M.lam * q_eval(_LAMBERT, norms)
    if M.mask_kind == "l1":
        return L1_CONSTANT * M.lam * norms ** (2.0 / 3.0)
    return M.lam * norms


def group_penalty_derivative(M: MaskedObjective, norms):
    norms = np.asarray(norms, dtype=float)
    if M.mask_kind == "softmax":
        return M.lam * q_derivative(_LAMBERT, norms)
    if M.mask_kind == "l1":
        with np.errstate(divide="ignore"):
            return (2.0 / 3.0) * L1_CONSTANT * M.lam * norms ** (-1.0 / 3.0)
    return np.full_like(norms, M.lam)


def equivalent_regularized_value(M: MaskedObjective, u) -> float:
    u = np.asarray(u, dtype=float)
    return M.base.value(u) + float(np.sum(group_penalty(M, group_norms(M.partition, u))))


def optimal_mask(M: MaskedObjective, u):
    """The (w, beta) attaining the equivalent penalty at ``u``.

    Per group with a = ||u_i||: softmax takes w_i = W(2a^2)/2, l1 takes
    w_i = 2**(1/3) a**(2/3), powerprop takes beta_i = u_i / sqrt(a).
    """
    u = np.asarray(u, dtype=float)
    P = M.partition
    a = group_norms(P, u)
    lab = P.labels
    if M.mask_kind == "softmax":
        w = lambert_w(2.0 * a * a) / 2.0
        return w, u * np.exp(-w)[lab]
    if M.mask_kind == "l1":
        w = 2.0 ** (1.0 / 3.0) * a ** (2.0 / 3.0)
        inv = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), 0.0)
        return w, u * inv[lab]
    inv = np.where(a > 0, 1.0 / np.sqrt(np.where(a > 0, a, 1.0)), 0.0)
    return None, u * inv[lab]


def minimize_masked(M: MaskedObjective, cfg: SolverConfig = SolverConfig(), restarts: int = 8,
                    seed: int = 0, method: str = "lbfgs") -> tuple[SolveResult, np.ndarray | None, np.ndarray]:
    """Best-of-``restarts`` local minimization of :func:`masked_value`.

    Softmax logits start at 0 and l1 masks at 1 (the unmasked model) on the
    first restart and are perturbed on later ones; beta starts Gaussian.
    Later restarts cycle through on/off patterns of the groups (all off on
    restart 1), zeroing beta on the off groups; l1 restarts then take the
    balanced (w, beta) of :func:`optimal_mask`. Random starts alone miss
    basins, since a group with zero mask and zero beta never revives.

    ``method="lbfgs"`` uses scipy's L-BFGS-B, with the l1 mask restricted to
    w >= 0 (flipping the signs of w_i and beta_i together changes nothing,
    so this loses no minima and makes |w| smooth). ``method="gd"`` uses
    :func:`solve_smooth`, handling |w| by soft-thresholding.
    Returns ``(result, w, beta)`` for the best restart.
    """
    if method not in ("lbfgs", "gd"):
        raise ValueError(f"unknown method {method!r}")
    P = M.partition
    t, n = P.t, P.n
    rng = np.random.default_rng(seed)
    scale = max(np.linalg.norm(M.base.gradient(np.zeros(n))) / np.sqrt(n), 1e-2)
    smooth_l1 = method == "lbfgs"

    if M.has_mask:
        def fn(z):
            w, beta = z[:t], z[t:]
            gw, gb = masked_gradient(M, w, beta)
            val = masked_value(M, w, beta)
            if M.mask_kind == "l1":
                if smooth_l1:
                    # w >= 0 here, so |w| = w with derivative 1 (also at 0)
                    gw = gw - M.lam * np.sign(w) + M.lam
                else:
                    # |w| moves to the prox term
                    val -= M.lam * np.abs(w).sum()
                    gw = gw - M.lam * np.sign(w)
            return val, np.concatenate([gw, gb])
    else:
        def fn(z):
            return masked_value(M, None, z), masked_gradient(M, None, z)[1]

    best = None
    for r in range(restarts):
        beta0 = rng.normal(scale=scale, size=n)
        if r >= 1:
            # cycle through on/off patterns, starting with every group off
            off = ((r - 1) % 2 ** min(t, 30)) >> np.arange(t) & 1 == 0
            beta0[off[P.labels]] = 0.0
        if M.mask_kind == "softmax":
            z0 = np.concatenate([np.zeros(t) if r == 0 else rng.normal(scale=0.5, size=t), beta0])
        elif M.mask_kind == "l1":
            # balanced start: a dead group (w_i = 0, beta_i = 0) is always a local minimum
            z0 = np.concatenate([np.ones(t), beta0] if r == 0 else optimal_mask(M, beta0))
        else:
            z0 = beta0
        if method == "lbfgs":
            res = _lbfgs_masked(M, fn, z0, cfg)
        elif M.mask_kind == "l1":
            lam = M.lam

            def prox(v, s):
                out = v.copy()
                out[:t] = np.sign(v[:t]) * np.maximum(np.abs(v[:t]) - s * lam, 0.0)
                return out

            res = solve_composite(fn, prox, lambda z: lam * np.abs(z[:t]).sum(), z0, cfg)
        else:
            res = solve_smooth(fn, z0, cfg)
        if best is None or res.objective < best.objective:
            best = res
    z = best.beta
    if M.has_mask:
        return best, z[:t], z[t:]
    return best, None, z


def _lbfgs_masked(M, fn, z0, cfg):
    t = M.partition.t
    bounds = None
    if M.mask_kind == "l1":
        bounds = [(0.0, None)] * t + [(None, None)] * (z0.size - t)
    r = minimize(fn, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                 options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 0.0})
    g = r.jac
    if bounds is not None:
        # projected gradient: at w = 0 only a negative derivative counts
        g = g.copy()
        at_bound = (r.x[:t] <= 0) & (g[:t] > 0)
        g[:t][at_bound] = 0.0
    gn = float(np.linalg.norm(g))
    return SolveResult(r.x, float(r.fun), int(r.nit), gn <= cfg.grad_tol, gn, [], str(r.message))
