"""Seven-segment bootstrap: load ``ln(x_j + shift)`` and ``ln(psi_k(x_j))`` into the state.

State blocks (0-based, ``d`` inputs, ``N + 1`` partition functions):

    alpha_j       j                       inputs, then work slots
    lambda_{j,k}  d + k*d + j             tanh / psi values, then work slots
    beta_j        (N+2)d + j              ln(x_j + shift)
    mu_{j,k}      (N+3)d + k*d + j        ln(psi_k(x_j))
    sum           2(N+2)d                 running sum (unused here)

The blocks are k-major so that distinct ``(j, k)`` never share a slot.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import expm, solve_triangular
from scipy.special import expit

from .gadgets import add_ln, add_tanh
from .schedule import SegmentBuilder

__all__ = [
    "PartitionParams",
    "StateLayout",
    "STEP2_MODES",
    "psi_eval",
    "psi_all",
    "phi_eval",
    "step2_matrix",
    "step2_exp",
    "step2_bias",
    "step2_correction",
    "build_bootstrap",
    "expected_state_after_step",
    "plain_step2_mu",
]

STEP2_MODES = ("plain", "corrected")


@dataclass(frozen=True)
class PartitionParams:
    """Breakpoint count ``N`` and sharpness ``c`` of the tanh partition of unity."""

    N: int
    c: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"c must be positive, got {self.c}")

    @property
    def gammas(self) -> np.ndarray:
        """Breakpoints ``(2k - 1) / (2N)`` for ``k = 1..N``."""
        k = np.arange(1, self.N + 1)
        return (2 * k - 1) / (2 * self.N)

    def gamma(self, k: int) -> float:
        return (2 * k - 1) / (2 * self.N)


def psi_all(x, params: PartitionParams) -> np.ndarray:
    """All ``N + 1`` partition functions at ``x``; result has shape ``x.shape + (N+1,)``.

    Uses ``(1 + tanh z)/2 = expit(2z)`` and picks the subtraction order that
    avoids cancellation, so tails far below machine epsilon stay accurate.
    """
    x = np.asarray(x, dtype=float)
    z = 2.0 * params.c * (x[..., None] - params.gammas)  # (..., N)
    N = params.N
    out = np.empty(x.shape + (N + 1,))
    out[..., 0] = expit(-z[..., 0])
    out[..., N] = expit(z[..., N - 1])
    if N > 1:
        u, v = z[..., :-1], z[..., 1:]
        # u > v; both large positive -> use expit(-v) - expit(-u)
        high = v > 0
        out[..., 1:N] = np.where(high, expit(-v) - expit(-u), expit(u) - expit(v))
    return out


def psi_eval(k: int, x, params: PartitionParams):
    if not 0 <= k <= params.N:
        raise ValueError(f"partition index k={k} outside [0, {params.N}]")
    out = psi_all(x, params)[..., k]
    return float(out) if np.ndim(out) == 0 else out


def phi_eval(ks, x, params: PartitionParams):
    """Tensor-product partition function ``prod_j psi_{k_j}(x_j)``."""
    x = np.asarray(x, dtype=float)
    ks = tuple(ks)
    if len(ks) != x.shape[-1]:
        raise ValueError(f"index tuple has length {len(ks)}, point has dimension {x.shape[-1]}")
    P = psi_all(x, params)
    val = np.ones(x.shape[:-1])
    for j, k in enumerate(ks):
        if not 0 <= k <= params.N:
            raise ValueError(f"partition index k={k} outside [0, {params.N}]")
        val = val * P[..., j, k]
    return float(val) if np.ndim(val) == 0 else val


def step2_matrix(N: int) -> np.ndarray:
    """Upper-triangular generator with ``-ln 2`` on the diagonal and ``-1/m`` on the m-th superdiagonal.

    Its exponential is ``(I - shift)/2``: diagonal 1/2, first superdiagonal -1/2.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    A = np.zeros((N + 1, N + 1))
    for r in range(N + 1):
        A[r, r] = -math.log(2.0)
        for m in range(1, N + 1 - r):
            A[r, r + m] = -1.0 / m
    return A


def step2_exp(N: int) -> np.ndarray:
    return expm(step2_matrix(N))


def step2_bias(N: int) -> np.ndarray:
    """Constant input making the time-1 affine flow land ``lambda_N`` on ``psi_N``.

    ``b = A (e^A - I)^{-1} e_N / 2``, computed with one triangular solve.
    """
    A = step2_matrix(N)
    E = expm(A) - np.eye(N + 1)
    rhs = np.zeros(N + 1)
    rhs[-1] = 0.5
    return A @ solve_triangular(E, rhs, lower=False)


def _phi_psi(A):
    """``int_0^1 e^{sA} ds`` and ``int_0^1 (1-s) e^{sA} ds`` via one block exponential."""
    n = A.shape[0]
    Z = np.zeros((3 * n, 3 * n))
    Z[:n, :n] = A
    Z[:n, n:2 * n] = np.eye(n)
    Z[n:2 * n, 2 * n:] = np.eye(n)
    F = expm(Z)
    return F[:n, n:2 * n], F[:n, 2 * n:]


def step2_correction(N: int):
    """Linear coupling that returns every ``mu_{j,k}`` to 0 over Step 2.

    Returns ``(G, h)`` with ``int_1^2 (G lambda + h) dt = lambda(1)`` for the
    Step-2 affine flow ``lambda' = A lambda + b``. Setting
    ``mu_k' = -c (alpha - gamma_k) (G lambda + h)_k`` then cancels
    ``mu_k(1) = c (x - gamma_k) lambda_k(1)`` exactly.
    """
    A = step2_matrix(N)
    b = step2_bias(N)
    Phi, Psi = _phi_psi(A)
    G = np.linalg.solve(Phi.T, np.eye(N + 1)).T  # Phi^{-1}
    h = -G @ (Psi @ b)
    return G, h


@dataclass(frozen=True)
class StateLayout:
    d: int
    N: int

    @property
    def width(self) -> int:
        return 2 * (self.N + 2) * self.d + 1

    def alpha(self, j: int) -> int:
        return j

    def lam(self, j: int, k: int) -> int:
        return self.d + k * self.d + j

    def beta(self, j: int) -> int:
        return (self.N + 2) * self.d + j

    def mu(self, j: int, k: int) -> int:
        return (self.N + 3) * self.d + k * self.d + j

    @property
    def sum_slot(self) -> int:
        return 2 * (self.N + 2) * self.d

    @property
    def work_slots(self) -> list:
        """alpha and lambda slots, all equal to 1 after the bootstrap."""
        return list(range((self.N + 2) * self.d))

    @cached_property
    def roles(self) -> dict:
        r = {}
        for j in range(self.d):
            r[self.alpha(j)] = ("alpha", j, None)
            r[self.beta(j)] = ("beta", j, None)
            for k in range(self.N + 1):
                r[self.lam(j, k)] = ("lambda", j, k)
                r[self.mu(j, k)] = ("mu", j, k)
        r[self.sum_slot] = ("sum", None, None)
        return r

    def to_json(self) -> dict:
        return {
            "d": self.d, "N": self.N, "width": self.width,
            "alpha": [self.alpha(j) + 1 for j in range(self.d)],
            "lambda": [[self.lam(j, k) + 1 for k in range(self.N + 1)] for j in range(self.d)],
            "beta": [self.beta(j) + 1 for j in range(self.d)],
            "mu": [[self.mu(j, k) + 1 for k in range(self.N + 1)] for j in range(self.d)],
            "sum": self.sum_slot + 1,
        }


def build_bootstrap(d: int, params: PartitionParams, shift: float = 1.0,
                    step2: str = "plain", psi_floor: float = 0.0,
                    reset_gain: float | None = None):
    """Return ``(layout, segments)`` for the seven bootstrap steps.

    ``step2="plain"`` uses the mu coupling ``mu_k' = c (alpha - gamma_k) sum_l A[k-1, l] lambda_l``
    as printed; ``step2="corrected"`` uses :func:`step2_correction`, which
    does return mu to 0. Everything else is identical.

    ``psi_floor > 0`` shifts every lambda by ``-1 + psi_floor`` instead of
    ``-1`` in Step 3, so the downstream steps see ``psi_k + psi_floor``.

    ``reset_gain=r`` replaces the Step-7 inverse exponential flow by the
    contraction ``y' = -r (y - 1)`` on the alpha and lambda slots. Both land
    on 1, but the printed flow divides ``lambda(6) = psi`` by ``exp(mu)``,
    which amplifies the absolute error of tiny ``psi`` values; the
    contraction leaves a residual of ``e^{-r}`` instead.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not (np.isfinite(shift) and shift > 0):
        raise ValueError(f"shift must be positive, got {shift}")
    if step2 not in STEP2_MODES:
        raise ValueError(f"step2 must be one of {STEP2_MODES}, got {step2!r}")
    if psi_floor < 0:
        raise ValueError("psi_floor must be non-negative")
    N, c = params.N, params.c
    L = StateLayout(d, N)
    J, Ks = range(d), range(N + 1)
    A = step2_matrix(N)
    bvec = step2_bias(N)

    s1 = SegmentBuilder(label="bootstrap-1 tanh")
    for j in J:
        s1.constant(L.lam(j, 0), 1.0)
        for k in range(1, N + 1):
            add_tanh(s1, c, -c * params.gamma(k), L.alpha(j), L.lam(j, k), L.mu(j, k))

    s2 = SegmentBuilder(label=f"bootstrap-2 partition ({step2})")
    if step2 == "corrected":
        G, h = step2_correction(N)
    for j in J:
        for k in Ks:
            for l in Ks:
                s2.linear(L.lam(j, k), L.lam(j, l), A[k, l])
            s2.constant(L.lam(j, k), bvec[k])
        for k in range(1, N + 1):
            g = params.gamma(k)
            if step2 == "plain":
                row, const = A[k - 1], 0.0
            else:
                row, const = -G[k], -h[k]
            # c (alpha - g) (row . lambda + const)
            for l in Ks:
                s2.quadratic(L.mu(j, k), L.alpha(j), L.lam(j, l), c * row[l])
                s2.linear(L.mu(j, k), L.lam(j, l), -c * g * row[l])
            s2.linear(L.mu(j, k), L.alpha(j), c * const)
            s2.constant(L.mu(j, k), -c * g * const)

    s3 = SegmentBuilder(label="bootstrap-3 shift")
    for j in J:
        s3.constant(L.alpha(j), shift - 1.0)
        for k in Ks:
            s3.constant(L.lam(j, k), psi_floor - 1.0)

    s4 = SegmentBuilder(label="bootstrap-4 ln")
    for j in J:
        add_ln(s4, L.alpha(j), L.beta(j))
        for k in Ks:
            add_ln(s4, L.lam(j, k), L.mu(j, k))

    def exp_flow(sign, label):
        sb = SegmentBuilder(label=label)
        for j in J:
            sb.quadratic(L.alpha(j), L.beta(j), L.alpha(j), sign)
            for k in Ks:
                sb.quadratic(L.lam(j, k), L.mu(j, k), L.lam(j, k), sign)
        return sb.build()

    s6 = SegmentBuilder(label="bootstrap-6 shift")
    for j in J:
        s6.constant(L.alpha(j), 1.0)
        for k in Ks:
            s6.constant(L.lam(j, k), 1.0)

    if reset_gain is None:
        s7 = exp_flow(-1.0, "bootstrap-7 inverse exp")
    else:
        if not reset_gain > 0:
            raise ValueError("reset_gain must be positive")
        sb = SegmentBuilder(label="bootstrap-7 reset")
        for slot in L.work_slots:
            sb.linear(slot, slot, -reset_gain).constant(slot, reset_gain)
        s7 = sb.build()
    segs = (s1.build(), s2.build(), s3.build(), s4.build(),
            exp_flow(1.0, "bootstrap-5 exp"), s6.build(), s7)
    return L, segs


def expected_state_after_step(step: int, x, params: PartitionParams, shift: float = 1.0,
                              psi_floor: float = 0.0) -> np.ndarray:
    """Closed-form bootstrap state after ``step`` (0..7) segments, for one point ``x``."""
    if not 0 <= step <= 7:
        raise ValueError(f"step must be in 0..7, got {step}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d, N, c = len(x), params.N, params.c
    L = StateLayout(d, N)
    y = np.zeros(L.width)
    P = psi_all(x, params)  # (d, N+1)
    for j in range(d):
        xj = x[j]
        xs = xj + shift
        if step <= 2:
            y[L.alpha(j)] = xj
        else:
            y[L.alpha(j)] = {3: xs - 1, 4: (xs - 1) / xs, 5: xs - 1, 6: xs, 7: 1.0}[step]
        if step >= 4:
            y[L.beta(j)] = math.log(xs)
        for k in range(N + 1):
            p = P[j, k] + (psi_floor if step >= 3 else 0.0)
            if step == 1:
                if k == 0:
                    lam, mu = 1.0, 0.0
                else:
                    z = c * (xj - params.gamma(k))
                    lam, mu = math.tanh(z), z * math.tanh(z)
            else:
                lam = {0: 0.0, 2: p, 3: p - 1, 4: (p - 1) / p, 5: p - 1, 6: p, 7: 1.0}[step]
                mu = math.log(p) if step >= 4 else 0.0
            y[L.lam(j, k)] = lam
            y[L.mu(j, k)] = mu
    return y


def plain_step2_mu(x, params: PartitionParams) -> np.ndarray:
    """``mu_{j,k}(2)`` produced by the printed Step-2 coupling, in closed form.

    Integrating the printed coupling against the affine lambda flow gives
    ``mu_k(2) = -c (x - gamma_k) (psi_{k-1}(x) + b_{k-1})`` for ``k >= 1``
    (and 0 for ``k = 0``), which is not identically zero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = psi_all(x, params)
    b = step2_bias(params.N)
    out = np.zeros((len(x), params.N + 1))
    for k in range(1, params.N + 1):
        out[:, k] = -params.c * (x - params.gamma(k)) * (P[:, k - 1] + b[k - 1])
    return out


def warn_if_tiny_delta(delta: float):
    if delta < 1e-12:
        warnings.warn(
            f"delta={delta:.3g} < 1e-12: partition values this small make the ln flows "
            "nearly singular and may exceed double precision", RuntimeWarning, stacklevel=3)
