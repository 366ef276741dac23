"""Smooth targets with mixed partial derivatives, plus a registry of builtins.

The builtins are scaled so that ``max_{|a| <= n} sup |d^a f| <= 1``, i.e. they
sit in the unit ball of ``W^{n,inf}([0,1]^d)``: for ``s*sin(pi x)`` and
``s*prod cos(pi x_j)`` every derivative of order ``m`` is bounded by
``s*pi^m``, and ``s = 1/(2(1 + pi^n))`` keeps that below 1/2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["SmoothTarget", "finite_difference_target", "builtin_target", "BUILTIN_TARGETS",
           "sobolev_norm_estimate"]


@dataclass(frozen=True)
class SmoothTarget:
    """``f: [0,1]^d -> R`` with ``partial(alpha, x)`` for ``|alpha| <= n - 1``.

    ``evaluate`` and ``partial`` accept a point of shape ``(d,)`` or a batch
    ``(P, d)``. ``norm_bound`` is the caller's claim on ``||f||_{n,inf}``.
    """

    name: str
    d: int
    n: int
    evaluate: Callable
    partial: Callable
    norm_bound: float = 1.0
    note: str = field(default="", compare=False)

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float))


def _sin_partial(s):
    def partial(alpha, x):
        (m,) = alpha
        x = np.asarray(x, dtype=float)[..., 0]
        # d^m/dx^m sin(pi x) = pi^m sin(pi x + m pi/2)
        return s * math.pi ** m * np.sin(math.pi * x + m * math.pi / 2)
    return partial


def _cos_partial(s):
    def partial(alpha, x):
        x = np.asarray(x, dtype=float)
        out = s * np.ones(x.shape[:-1])
        for j, m in enumerate(alpha):
            out = out * math.pi ** m * np.cos(math.pi * x[..., j] + m * math.pi / 2)
        return out
    return partial


def _scale(n):
    return 1.0 / (2.0 * (1.0 + math.pi ** n))


def sin1d(n: int = 2) -> SmoothTarget:
    s = _scale(n)
    part = _sin_partial(s)
    return SmoothTarget("sin1d", 1, n, lambda x: part((0,), x), part, s * math.pi ** n,
                        note=f"f(x) = sin(pi x) / (2 (1 + pi^{n}))")


def cos2d(n: int = 2) -> SmoothTarget:
    s = _scale(n)
    part = _cos_partial(s)
    return SmoothTarget("cos2d", 2, n, lambda x: part((0, 0), x), part, s * math.pi ** n,
                        note=f"f(x) = cos(pi x1) cos(pi x2) / (2 (1 + pi^{n}))")


def constant(value: float = 0.5, d: int = 1, n: int = 2) -> SmoothTarget:
    def partial(alpha, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], value if not any(alpha) else 0.0)
    return SmoothTarget(f"const{d}d", d, n, lambda x: partial((0,) * d, x), partial, abs(value))


def zero(d: int = 1, n: int = 2) -> SmoothTarget:
    t = constant(0.0, d, n)
    return SmoothTarget(f"zero{d}d", d, n, t.evaluate, t.partial, 0.0)


BUILTIN_TARGETS = {
    "sin1d": lambda n, d: sin1d(n),
    "cos2d": lambda n, d: cos2d(n),
    "const": lambda n, d: constant(0.5, d, n),
    "zero": lambda n, d: zero(d, n),
}


def builtin_target(name: str, n: int, d: int) -> SmoothTarget:
    if name not in BUILTIN_TARGETS:
        raise KeyError(f"unknown target {name!r}; choose from {sorted(BUILTIN_TARGETS)}")
    t = BUILTIN_TARGETS[name](n, d)
    if t.d != d:
        raise ValueError(f"target {name!r} has dimension {t.d}, requested {d}")
    return t


def finite_difference_target(name: str, f: Callable, d: int, n: int, h: float = 1e-4,
                             norm_bound: float = 1.0) -> SmoothTarget:
    """Wrap a plain function, approximating partials by nested central differences.

    Accuracy degrades quickly with the derivative order (roughly ``h^2`` per
    level plus ``eps / h^m`` round-off); fine for ``n <= 3`` on smooth ``f``.
    """
    def ev(x):
        return np.asarray(f(np.asarray(x, dtype=float)), dtype=float)

    def partial(alpha, x):
        x = np.asarray(x, dtype=float)
        shifts = []
        for j, m in enumerate(alpha):
            shifts.extend([j] * m)
        if not shifts:
            return ev(x)
        total = 0.0
        for signs in itertools.product((1, -1), repeat=len(shifts)):
            dx = np.zeros(d)
            for j, sg in zip(shifts, signs):
                dx[j] += sg * h
            total = total + np.prod(signs) * ev(x + dx)
        return total / (2 * h) ** len(shifts)

    return SmoothTarget(name, d, n, ev, partial, norm_bound, note="finite-difference partials")


def sobolev_norm_estimate(target: SmoothTarget, grid: int = 41) -> float:
    """Grid estimate of ``max_{|a| <= n-1} sup |d^a f|`` (the orders we can evaluate)."""
    axes = [np.linspace(0, 1, grid)] * target.d
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, target.d)
    best = 0.0
    for alpha in itertools.product(range(target.n), repeat=target.d):
        if sum(alpha) < target.n:
            best = max(best, float(np.max(np.abs(target.partial(alpha, X)))))
    return best
