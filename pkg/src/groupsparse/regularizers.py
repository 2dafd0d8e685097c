"""Nonconvex group regularizers and the group soft-threshold operator.

A q-function is a strictly increasing map of the nonnegative reals with
q(0) = 0. The composite group penalty is

    lam * q^{-1}( sum_i q(||beta|_{T_i}||_2) )

which is the plain group LASSO penalty when q is the absolute value and,
for any subadditive q, is bounded below by it with equality on vectors
supported on a single group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .groups import GroupPartition, group_norms

KINDS = ("abs", "power", "logsum", "lambert")

# norms below this are clamped before evaluating q' (power kinds blow up at 0)
NORM_FLOOR = 1e-10
_EPS = np.finfo(float).eps


def lambert_w(x):
    """Principal branch of the Lambert W function for ``x >= 0``.

    Solves ``w * exp(w) = x`` by Halley iteration from a logarithmic
    starting guess. Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("lambert_w only supports x >= 0 (principal branch)")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    w = np.where(x < np.e, np.log1p(x), 0.0)
    big = x >= np.e
    if big.any():
        lx = np.log(x[big])
        w[big] = lx - np.log(lx)
    for _ in range(64):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w = w - dw
        if np.all(np.abs(dw) <= 1e-15 * (1.0 + np.abs(w))):
            break
    # one Newton polish step; Halley's last update can leave an ulp-level residual
    ew = np.exp(w)
    w = w - (w * ew - x) / (ew * (w + 1.0))
    w = np.where(x == 0, 0.0, w)
    return float(w[0]) if scalar else w


@dataclass(frozen=True)
class QFunction:
    """A regularizer shape ``q``: ``abs``, ``power`` (x**p), ``logsum``
    (eps*log(1 + x/eps)) or ``lambert`` (the softmax-mask induced form)."""

    kind: str = "lambert"
    p: float = 0.5
    eps: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown q kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "power" and not 0 < self.p <= 1:
            raise ValueError("power q needs p in (0, 1]")
        if self.kind == "logsum" and self.eps <= 0:
            raise ValueError("logsum q needs eps > 0")

    @classmethod
    def from_config(cls, spec) -> "QFunction":
        if isinstance(spec, str):
            return cls(kind=spec)
        spec = dict(spec)
        kind = spec.pop("kind")
        return cls(kind=kind, **{k: float(v) for k, v in spec.items()})

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "power":
            out["p"] = self.p
        if self.kind == "logsum":
            out["eps"] = self.eps
        return out

    @property
    def label(self) -> str:
        if self.kind == "power":
            return f"power(p={self.p:g})"
        if self.kind == "logsum":
            return f"logsum(eps={self.eps:g})"
        return self.kind


def _nonneg(x, what):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError(f"{what} must be nonnegative")
    return x


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def q_eval(q: QFunction, x):
    x_in = x
    x = _nonneg(x, "q argument")
    if q.kind == "abs":
        y = x.copy()
    elif q.kind == "power":
        y = x ** q.p
    elif q.kind == "logsum":
        y = q.eps * np.log1p(x / q.eps)
    elif x.ndim == 0:
        return _lambert_q_scalar(float(x))
    else:
        w = lambert_w(2.0 * x * x)
        y = w * w / 4.0 + w / 2.0
    return _out(y, x_in)


def q_derivative(q: QFunction, x):
    """q'(x). Infinite at 0 for ``power`` with p < 1; callers clamp."""
    x_in = x
    x = _nonneg(x, "q argument")
    if q.kind == "abs":
        d = np.ones_like(x)
    elif q.kind == "power":
        with np.errstate(divide="ignore"):
            d = q.p * x ** (q.p - 1.0)
    elif q.kind == "logsum":
        d = 1.0 / (1.0 + x / q.eps)
    else:
        # q'(a) = W(2a^2) / a, which tends to 2a as a -> 0
        if x.ndim == 0:
            a = float(x)
            return _lambert_w_scalar(2.0 * a * a) / a if a > 0 else 0.0
        w = lambert_w(2.0 * x * x)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(x > 0, w / np.where(x > 0, x, 1.0), 0.0)
    return _out(d, x_in)


def _lambert_w_scalar(x: float) -> float:
    if x == 0.0:
        return 0.0
    if x < math.e:
        w = math.log1p(x)
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - x
        dw = f / (ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0))
        w -= dw
        if abs(dw) <= 1e-15 * (1.0 + abs(w)):
            break
    ew = math.exp(w)
    return w - (w * ew - x) / (ew * (w + 1.0))


def _lambert_q_scalar(a: float) -> float:
    w = _lambert_w_scalar(2.0 * a * a)
    return w * w / 4.0 + w / 2.0


def _lambert_q_inverse_scalar(y: float) -> float:
    """Invert the Lambert-induced q by safeguarded Newton inside a bracket."""
    if y == 0.0:
        return 0.0
    lo, hi = 0.0, y + 1.0 + y * y
    # q grows like log(a)^2, so the polynomial bracket is too small for large y
    while _lambert_q_scalar(hi) < y:
        lo, hi = hi, hi * hi + 1.0
    a = math.sqrt(y) if y < 1.0 else 0.5 * (lo + hi)
    a = min(max(a, lo), hi)
    for _ in range(200):
        w = _lambert_w_scalar(2.0 * a * a)
        fa = w * w / 4.0 + w / 2.0 - y
        if fa == 0.0:
            break
        if fa > 0:
            hi = a
        else:
            lo = a
        cand = a - fa * a / w if w > 0 else 0.5 * (lo + hi)
        if not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        if abs(cand - a) <= 4 * _EPS * a:
            a = cand
            break
        a = cand
    return a


def q_inverse(q: QFunction, y):
    y_in = y
    y = _nonneg(y, "q^{-1} argument")
    if q.kind == "abs":
        x = y.copy()
    elif q.kind == "power":
        x = y ** (1.0 / q.p)
    elif q.kind == "logsum":
        x = q.eps * np.expm1(y / q.eps)
    elif y.ndim == 0:
        return _lambert_q_inverse_scalar(float(y))
    else:
        x = np.array([_lambert_q_inverse_scalar(v) for v in y.ravel()]).reshape(y.shape)
    return _out(x, y_in)


def q_inverse_derivative(q: QFunction, y) -> float:
    """(q^{-1})'(y) = 1 / q'(q^{-1}(y))."""
    x = max(q_inverse(q, y), NORM_FLOOR)
    return 1.0 / q_derivative(q, x)


@dataclass(frozen=True)
class CompositeRegularizer:
    q: QFunction
    lam: float
    partition: GroupPartition

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("regularization strength must be positive")

    def value(self, beta) -> float:
        return composite_value(self, beta)


def composite_from_norms(q: QFunction, norms) -> float:
    """q^{-1}(sum q(norms)) without the lam factor."""
    norms = np.asarray(norms, dtype=float)
    if q.kind == "abs":
        return float(norms.sum())
    return float(q_inverse(q, float(np.sum(q_eval(q, norms)))))


def composite_value(R: CompositeRegularizer, beta) -> float:
    return R.lam * composite_from_norms(R.q, group_norms(R.partition, beta))


def block_soft_threshold(v, theta: float) -> np.ndarray:
    """Prox of ``theta * ||.||_2``: shrink ``v`` toward 0 by ``theta`` in norm."""
    if theta < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv <= theta:
        return np.zeros_like(v)
    return (1.0 - theta / nv) * v


def group_soft_threshold(partition: GroupPartition, v, thresholds) -> np.ndarray:
    """Apply :func:`block_soft_threshold` group-wise with per-group thresholds."""
    v = np.asarray(v, dtype=float)
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), (partition.t,))
    norms = group_norms(partition, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > thresholds, 1.0 - thresholds / np.where(norms > 0, norms, 1.0), 0.0)
    return v * scale[partition.labels]
