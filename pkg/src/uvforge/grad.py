"""Differentiation contract and a central-difference gradient checker.

Every differentiable operation in the package comes in a ``*_vjp`` form that
returns ``(value, pullback)``; ``pullback`` maps an output cotangent to input
cotangents at the recorded forward point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

REL_FLOOR = 1e-8


@dataclass(frozen=True)
class DifferentiableOp:
    """A forward map bundled with its vector-Jacobian product.

    ``pullback(x, cotangent)`` evaluates the VJP at forward point ``x``.
    """

    forward: Callable
    pullback: Callable

    def vjp(self, x):
        y = self.forward(x)
        return y, lambda ct: self.pullback(x, ct)


@dataclass
class GradCheckReport:
    max_abs_error: float
    max_rel_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray

    def ok(self, rtol: float) -> bool:
        return self.max_rel_error < rtol


def rel_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return np.abs(a - n) / denom


def gradcheck(f, x, eps: float = 1e-4, indices=None) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` against central differences.

    ``f(x)`` must return ``(value, pullback)``; ``pullback(1.0)`` gives the
    gradient with the shape of ``x``. ``indices`` restricts the check to a
    subset of flattened coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    value, pullback = f(x)
    value = float(np.asarray(value))
    if not np.isfinite(value):
        raise FloatingPointError("non-finite function value at the base point")
    grad = np.asarray(pullback(1.0), dtype=np.float64).reshape(-1)
    if grad.size != x.size:
        raise ValueError(f"gradient has {grad.size} entries, input has {x.size}")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite analytic gradient at index {int(bad[0])}")

    idx = np.arange(x.size) if indices is None else np.asarray(indices, dtype=np.int64)
    flat = x.reshape(-1)
    numeric = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        fp = float(np.asarray(f(x)[0]))
        flat[i] = old - eps
        fm = float(np.asarray(f(x)[0]))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value perturbing index {int(i)}")
        numeric[j] = (fp - fm) / (2.0 * eps)

    analytic = grad[idx]
    abs_err = np.abs(analytic - numeric)
    rel = rel_error(analytic, numeric)
    worst = int(np.argmax(rel)) if len(idx) else 0
    return GradCheckReport(
        max_abs_error=float(abs_err.max(initial=0.0)),
        max_rel_error=float(rel.max(initial=0.0)),
        worst_index=int(idx[worst]) if len(idx) else 0,
        analytic=analytic,
        numeric=numeric,
    )


def scalarize(vjp_fn, weights):
    """Turn an array-valued ``x -> (y, pullback)`` into a scalar one via ``sum(w*y)``."""

    def f(x):
        y, back = vjp_fn(x)
        return float(np.sum(weights * y)), lambda ct: back(ct * weights)

    return f


def check_pullback_linearity(pullback, out_shape, rng, trials: int = 3) -> float:
    """Largest deviation of ``pullback(a*u + b*v)`` from ``a*pullback(u) + b*pullback(v)``."""
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(out_shape)
        v = rng.standard_normal(out_shape)
        a, b = rng.standard_normal(2)
        lhs = _flatten(pullback(a * u + b * v))
        rhs = a * _flatten(pullback(u)) + b * _flatten(pullback(v))
        scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
        worst = max(worst, float(np.abs(lhs - rhs).max(initial=0.0)) / scale)
    zero = _flatten(pullback(np.zeros(out_shape)))
    return max(worst, float(np.abs(zero).max(initial=0.0)))


def _flatten(ct) -> np.ndarray:
    if isinstance(ct, dict):
        return np.concatenate([np.ravel(ct[k]) for k in sorted(ct)]) if ct else np.zeros(0)
    if isinstance(ct, (tuple, list)):
        return np.concatenate([np.ravel(c) for c in ct]) if ct else np.zeros(0)
    return np.ravel(np.asarray(ct, dtype=np.float64))
