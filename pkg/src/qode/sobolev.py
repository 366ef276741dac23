"""Compile a Sobolev-ball target into a quadratic ODE schedule.

The approximant is the partition-of-unity stitched Taylor expansion

    fhat(x) = sum_k phi_k(x) P_k(x),

with ``P_k`` the degree ``n - 1`` Taylor polynomial of ``f`` at ``k / N``.
Each ``P_k`` is rewritten in the basis ``prod_j (x_j + shift)^{n_j}`` so that
every term ``a * prod (x_j + shift)^{n_j} * prod psi_{k_j}(x_j)`` is the
exponential of a linear form in the logs loaded by the bootstrap. Terms are
built in batches on the work slots and summed into the last state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .bootstrap import STEP2_MODES, PartitionParams, build_bootstrap, psi_all, warn_if_tiny_delta
from .gadgets import add_mul
from .schedule import ControlSchedule, SegmentBuilder
from .targets import SmoothTarget

__all__ = [
    "SobolevConfig",
    "SobolevParameters",
    "Term",
    "choose_parameters",
    "error_bound",
    "num_monomials",
    "multi_indices",
    "taylor_coefficients",
    "taylor_eval",
    "taylor_shift",
    "recenter",
    "recentered_eval",
    "taylor_terms",
    "direct_fhat_eval",
    "compile_sobolev",
    "formula_segment_count",
    "segment_count",
]

DELTA_CAP = 0.499


@dataclass(frozen=True)
class SobolevConfig:
    """User-facing knobs. ``N``, ``delta`` and ``c`` are derived by :func:`choose_parameters`.

    ``psi_floor`` adds a tiny constant to every partition value inside the
    ODE so that ``ln(psi)`` stays finite in double precision (see README);
    its effect on ``fhat`` is at most ``d (N+1) psi_floor max|P_k|``.

    ``reset_gain`` sets the contraction rate used to return work slots to 1,
    both in the last bootstrap step and during every accumulate segment.
    ``None`` selects the exact inverse flows instead (a division per slot),
    which lose absolute accuracy when a term is tiny.
    """

    eps: float
    gamma: float = 0.5
    shift: float = 1.0
    step2: str = "corrected"
    psi_floor: float = 1e-9
    reset_gain: float | None = 40.0

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (np.isfinite(self.shift) and self.shift > 0):
            raise ValueError(f"shift must be positive, got {self.shift}")
        if self.step2 not in STEP2_MODES:
            raise ValueError(f"step2 must be one of {STEP2_MODES}")
        if self.psi_floor < 0:
            raise ValueError("psi_floor must be non-negative")


@dataclass(frozen=True)
class SobolevParameters:
    N: int
    delta: float
    c: float

    @property
    def partition(self) -> PartitionParams:
        return PartitionParams(self.N, self.c)


def num_monomials(n: int, d: int) -> int:
    """Monomials of degree < n in d variables: C(d + n - 1, d)."""
    return math.comb(d + n - 1, d)


def multi_indices(n: int, d: int) -> list:
    """Exponent tuples with total degree < n, in lexicographic order."""
    return [m for m in itertools.product(range(n), repeat=d) if sum(m) < n]


def choose_parameters(n: int, d: int, eps: float, gamma: float = 0.5) -> SobolevParameters:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    lead = math.factorial(n) / d ** n
    raw = (lead * gamma * eps / 2 ** d) ** (-1.0 / n)
    N = max(1, math.ceil(raw * (1 - 1e-12)))  # guard exact integers against round-off
    denom = (N + 1) ** d - 2 ** d
    delta = DELTA_CAP if denom <= 0 else min(lead * (1 - gamma) * eps / denom, DELTA_CAP)
    if not delta > 0:
        raise ValueError(f"parameters give delta={delta}; increase eps or gamma")
    c = 2 * N * math.atanh(1 - 2 * delta)
    return SobolevParameters(N, delta, c)


def error_bound(n: int, d: int, N: int, delta: float) -> float:
    return d ** n / math.factorial(n) * (2 ** d * N ** (-n) + ((N + 1) ** d - 2 ** d) * delta)


def taylor_coefficients(f: SmoothTarget, k, N: int) -> dict:
    """``{exponents: f^(exponents)(k/N) / prod(exponents!)}`` for total degree < n."""
    k = tuple(k)
    if len(k) != f.d or any(not 0 <= kj <= N for kj in k):
        raise ValueError(f"grid index {k} not in {{0..{N}}}^{f.d}")
    center = np.array(k, dtype=float) / N
    out = {}
    for m in multi_indices(f.n, f.d):
        val = float(f.partial(m, center))
        out[m] = val / math.prod(math.factorial(mj) for mj in m)
    return out


def taylor_eval(coeffs: dict, center, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    t = x - np.asarray(center, dtype=float)
    out = np.zeros(x.shape[:-1])
    for m, a in coeffs.items():
        out = out + a * np.prod(t ** np.array(m), axis=-1)
    return out


def taylor_shift(p, s: float) -> np.ndarray:
    """Coefficients of ``q(u) = p(u - s)`` by repeated Horner (Ruffini) division."""
    q = np.array(p, dtype=float)
    n = len(q)
    for i in range(n - 1):
        for j in range(n - 2, i - 1, -1):
            q[j] -= s * q[j + 1]
    return q


def recenter(coeffs: dict, k, N: int, shift: float, n: int) -> dict:
    """Rewrite ``sum a_m prod (x_j - k_j/N)^{m_j}`` as ``sum b_m prod (x_j + shift)^{m_j}``."""
    d = len(k)
    dense = np.zeros((n,) * d)
    for m, a in coeffs.items():
        dense[m] = a
    for j in range(d):
        s = k[j] / N + shift
        dense = np.apply_along_axis(taylor_shift, j, dense, s)
    return {m: float(dense[m]) for m in multi_indices(n, d)}


def recentered_eval(coeffs: dict, shift: float, x) -> np.ndarray:
    return taylor_eval(coeffs, -shift * np.ones(np.shape(x)[-1]), x)


@dataclass(frozen=True)
class Term:
    k: tuple
    m: tuple
    coeff: float

    def value(self, x, params: PartitionParams, shift: float, psi_floor: float = 0.0):
        x = np.asarray(x, dtype=float)
        P = psi_all(x, params) + psi_floor
        out = self.coeff * np.prod((x + shift) ** np.array(self.m), axis=-1)
        for j, kj in enumerate(self.k):
            out = out * P[..., j, kj]
        return out


def taylor_terms(f: SmoothTarget, config: SobolevConfig, params: SobolevParameters | None = None):
    """Nonzero recentered terms in ``(k, m)`` lexicographic order."""
    params = params or choose_parameters(f.n, f.d, config.eps, config.gamma)
    terms = []
    for k in itertools.product(range(params.N + 1), repeat=f.d):
        rc = recenter(taylor_coefficients(f, k, params.N), k, params.N, config.shift, f.n)
        for m in multi_indices(f.n, f.d):
            if rc[m] != 0.0:
                terms.append(Term(k, m, rc[m]))
    return terms


def direct_fhat_eval(f: SmoothTarget, config: SobolevConfig, x,
                     params: SobolevParameters | None = None) -> np.ndarray:
    """``sum_k phi_k(x) P_k(x)`` evaluated directly, with no ODE in the loop."""
    params = params or choose_parameters(f.n, f.d, config.eps, config.gamma)
    x = np.asarray(x, dtype=float)
    pp = params.partition
    P = psi_all(x, pp)
    out = np.zeros(x.shape[:-1])
    for k in itertools.product(range(params.N + 1), repeat=f.d):
        coeffs = taylor_coefficients(f, k, params.N)
        phi = np.ones(x.shape[:-1])
        for j, kj in enumerate(k):
            phi = phi * P[..., j, kj]
        out = out + phi * taylor_eval(coeffs, np.array(k) / params.N, x)
    return float(out) if out.ndim == 0 else out


def formula_segment_count(n: int, d: int, N: int, terms: int | None = None) -> int:
    """``7 + ceil(2 T / ((N+2) d))`` with ``T`` defaulting to ``M (N+1)^d``."""
    T = num_monomials(n, d) * (N + 1) ** d if terms is None else terms
    return 7 + math.ceil(2 * T / ((N + 2) * d))


def segment_count(d: int, N: int, terms: int) -> int:
    """Segments actually emitted: bootstrap plus one multiply/accumulate pair per batch."""
    return 7 + 2 * math.ceil(terms / ((N + 2) * d))


def compile_sobolev(f: SmoothTarget, config: SobolevConfig) -> ControlSchedule:
    params = choose_parameters(f.n, f.d, config.eps, config.gamma)
    warn_if_tiny_delta(params.delta)
    d, N = f.d, params.N
    layout, boot = build_bootstrap(d, params.partition, config.shift, config.step2,
                                   psi_floor=config.psi_floor, reset_gain=config.reset_gain)
    terms = taylor_terms(f, config, params)
    slots = layout.work_slots
    B = len(slots)
    log_slots = [layout.beta(j) for j in range(d)] + \
                [layout.mu(j, k) for k in range(N + 1) for j in range(d)]
    log_pos = {s: i for i, s in enumerate(log_slots)}

    # With a reset gain r the accumulate segment also contracts every used
    # slot back to 1, so the next multiply starts fresh. Over unit time
    # int_0^1 slot = 1 + (p - 1) kappa with kappa = (1 - e^-r)/r, which the
    # sum coefficients undo exactly. Without a gain, each multiply divides
    # out the previous term instead.
    gain = config.reset_gain
    kappa = -math.expm1(-gain) / gain if gain else 1.0
    held = {s: (np.zeros(len(log_slots)), 0.0) for s in slots}
    segments = list(boot)
    for batch_no, lo in enumerate(range(0, len(terms), B)):
        batch = terms[lo:lo + B]
        mul = SegmentBuilder(label=f"multiply batch {batch_no + 1}")
        acc = SegmentBuilder(label=f"accumulate batch {batch_no + 1}")
        bias = 0.0
        for slot, term in zip(slots, batch):
            w = np.zeros(len(log_slots))
            for j in range(d):
                w[log_pos[layout.beta(j)]] += term.m[j]
                w[log_pos[layout.mu(j, term.k[j])]] += 1.0
            b = math.log(abs(term.coeff))
            w_old, b_old = held[slot]
            dw = w - w_old
            nz = [i for i in range(len(log_slots)) if dw[i] != 0.0]
            add_mul(mul, [dw[i] for i in nz], b - b_old, [log_slots[i] for i in nz], slot)
            sign = math.copysign(1.0, term.coeff)
            acc.linear(layout.sum_slot, slot, sign / kappa)
            if gain:
                acc.linear(slot, slot, -gain).constant(slot, gain)
                bias += sign * (kappa - 1.0) / kappa
            else:
                held[slot] = (w, b)
        if bias != 0.0:
            acc.constant(layout.sum_slot, bias)
        segments.append(mul.build())
        segments.append(acc.build())

    meta = {
        "kind": "sobolev",
        "target": f.name, "n": f.n, "d": d,
        "eps": config.eps, "gamma": config.gamma, "shift": config.shift,
        "step2": config.step2, "psi_floor": config.psi_floor, "reset_gain": config.reset_gain,
        "N": N, "delta": params.delta, "c": params.c,
        "W": layout.width, "D": len(segments),
        "D_formula": formula_segment_count(f.n, d, N),
        "D_formula_nonzero": formula_segment_count(f.n, d, N, len(terms)),
        "terms": len(terms), "terms_worst_case": num_monomials(f.n, d) * (N + 1) ** d,
        "bound": error_bound(f.n, d, N, params.delta),
        "layout": layout.to_json(),
    }
    return ControlSchedule(layout.width, d, tuple(segments), ((layout.sum_slot, 1.0),),
                           metadata=meta)
