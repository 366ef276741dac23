"""Numerical flow of piecewise-constant schedules.

The integrator is the Dormand-Prince 5(4) embedded pair with FSAL and
standard step-size control. It works on a batch of states at once (shape
``(P, W)``): all points share one step sequence, and a step is accepted only
if every component of every point passes the error test. That keeps grid
evaluation vectorised and still bounds the local error of each point.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .schedule import ControlSchedule, ControlSegment, ScheduleError, embed_input

__all__ = [
    "Tolerance",
    "IntegrationError",
    "CompiledField",
    "integrate_segment",
    "integrate_segment_fixed",
    "simulate",
    "simulate_batch",
    "SimulationResult",
    "Trajectory",
    "default_tolerance",
]


class IntegrationError(RuntimeError):
    """The adaptive integrator could not complete a segment."""

    def __init__(self, message, segment_index=None, time=None):
        self.segment_index = segment_index
        self.time = time
        where = "" if segment_index is None else f" in segment {segment_index + 1}"
        super().__init__(f"integration failure{where}: {message}")


@dataclass(frozen=True)
class Tolerance:
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")


def default_tolerance() -> Tolerance:
    """Default tolerance, overridable with ``QODE_DEFAULT_TOL="rtol,atol"``."""
    raw = os.environ.get("QODE_DEFAULT_TOL")
    if not raw:
        return Tolerance()
    parts = [float(p) for p in raw.replace(" ", "").split(",") if p]
    if len(parts) == 1:
        return Tolerance(parts[0], parts[0] * 1e-2)
    if len(parts) != 2:
        raise ValueError(f"QODE_DEFAULT_TOL must be 'rtol,atol', got {raw!r}")
    return Tolerance(*parts)


class CompiledField:
    """Vectorised form of a segment's vector field for a given width.

    Small widths use dense matrices; above :attr:`SPARSE_WIDTH` the linear
    part and the quadratic scatter are stored as CSR matrices.
    """

    SPARSE_WIDTH = 128

    def __init__(self, seg: ControlSegment, width: int):
        if seg.max_index >= width:
            raise ScheduleError(f"segment references index {seg.max_index} but width is {width}")
        self.width = width
        self.sparse = width > self.SPARSE_WIDTH
        self.A = None
        if seg.linear:
            rows, cols, vals = zip(*seg.linear)
            A = sp.csr_matrix((vals, (rows, cols)), shape=(width, width))
            self.A = A if self.sparse else A.toarray().T.copy()
        self.b = None
        if seg.constant:
            self.b = np.zeros(width)
            for i, v in seg.constant:
                self.b[i] = v
        self.qj = self.qk = self.qv = self.scatter = None
        if seg.quadratic:
            q = seg.quadratic
            self.qj = np.array([t[1] for t in q], dtype=int)
            self.qk = np.array([t[2] for t in q], dtype=int)
            self.qv = np.array([t[3] for t in q])
            S = sp.csr_matrix((np.ones(len(q)), ([t[0] for t in q], np.arange(len(q)))),
                              shape=(width, len(q)))
            self.scatter = S if self.sparse else S.toarray().T.copy()
        self.is_zero = seg.is_empty

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if self.sparse:
            out = (self.A @ y.T).T if self.A is not None else np.zeros_like(y)
            if self.scatter is not None:
                out = out + (self.scatter @ (y[:, self.qj] * y[:, self.qk] * self.qv).T).T
        else:
            out = y @ self.A if self.A is not None else np.zeros_like(y)
            if self.scatter is not None:
                out = out + (y[:, self.qj] * y[:, self.qk] * self.qv) @ self.scatter
        if self.b is not None:
            out = out + self.b
        return out


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
# difference between 5th- and 4th-order weights
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                    -92097 / 339200, 187 / 2100, 1 / 40])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
MAX_STEPS = 500_000


@dataclass
class SegmentResult:
    y: np.ndarray
    steps: int
    rejected: int
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)


def _as_batch(y0):
    y0 = np.asarray(y0, dtype=float)
    single = y0.ndim == 1
    return (y0[None, :] if single else y0.copy()), single


def _dp5_batch(f, y, T, tol, h0=None, record=False, segment_index=None):
    """Advance the batch ``y`` over ``[0, T]``; returns a :class:`SegmentResult`."""
    rtol, atol = tol.rtol, tol.atol
    t = 0.0
    h = T / 100.0 if h0 is None else h0
    k = [None] * 7
    k[0] = f(y)
    steps = rejected = 0
    times, states = ([0.0], [y.copy()]) if record else ([], [])
    hmin = 1e-13 * T
    while t < T:
        last = t + h >= T * (1 - 1e-14)
        if last:
            h = T - t
        # an escaping trial step may overflow; it is rejected below
        with np.errstate(invalid="ignore", over="ignore"):
            for s in range(1, 7):
                ys = y + h * sum(a * k[m] for m, a in enumerate(_A[s]) if a != 0.0)
                k[s] = f(ys)
            y_new = ys  # stage 7 is evaluated at the 5th-order solution (FSAL)
            err_vec = h * sum(e * k[m] for m, e in enumerate(_E) if e != 0.0)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0
        if not np.isfinite(err):
            err = np.inf
        if err <= 1.0 and np.all(np.isfinite(y_new)):
            t = T if last else t + h
            y = y_new
            k[0] = k[6]
            steps += 1
            if record:
                times.append(t)
                states.append(y.copy())
            fac = _FAC_MAX if err == 0.0 else min(_FAC_MAX, max(_FAC_MIN, _SAFETY * err ** -0.2))
            h = h * fac
        else:
            rejected += 1
            fac = _FAC_MIN if not np.isfinite(err) else max(_FAC_MIN, _SAFETY * err ** -0.2)
            h = h * fac
            if h < hmin:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} of {T:.6g} "
                    "(stiff or near-singular dynamics)", segment_index, t)
        if steps + rejected > MAX_STEPS:
            raise IntegrationError(f"more than {MAX_STEPS} steps", segment_index, t)
    return SegmentResult(y, steps, rejected, times, states)


def integrate_segment(seg: ControlSegment, y0, tol: Tolerance | None = None,
                      segment_index=None, record=False, width=None) -> np.ndarray:
    """Time-``duration`` flow of ``seg`` from ``y0`` (single state or batch)."""
    y, single = _as_batch(y0)
    res = _flow(seg, y, tol or default_tolerance(), segment_index, record, width)
    return res.y[0] if single else res.y


def _flow(seg, y, tol, segment_index=None, record=False, width=None):
    width = y.shape[1] if width is None else width
    if seg.is_empty:
        res = SegmentResult(y.copy(), 0, 0)
        if record:
            res.times, res.states = [0.0, seg.duration], [y.copy(), y.copy()]
        return res
    f = CompiledField(seg, width)
    return _dp5_batch(f, y, seg.duration, tol, record=record, segment_index=segment_index)


def integrate_segment_fixed(seg: ControlSegment, y0, n_steps: int) -> np.ndarray:
    """Classical fixed-step RK4 flow; used to cross-check the adaptive pair."""
    y, single = _as_batch(y0)
    f = CompiledField(seg, y.shape[1])
    h = seg.duration / n_steps
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y[0] if single else y


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def downsample(self, max_rows: int) -> "Trajectory":
        n = len(self.times)
        if n <= max_rows:
            return self
        idx = np.unique(np.linspace(0, n - 1, max_rows).round().astype(int))
        return Trajectory(self.times[idx], self.states[idx])


@dataclass
class SimulationResult:
    output: float | np.ndarray
    final_state: np.ndarray
    steps: list
    trajectory: Trajectory | None = None


def _check_input(sched: ControlSchedule, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != sched.input_dim:
        raise ScheduleError(
            f"input has dimension {x.shape[-1] if x.ndim else 0}, schedule expects {sched.input_dim}")
    return x


def run_segments(sched: ControlSchedule, y, tol: Tolerance, start=0, stop=None,
                 record=False):
    """Integrate segments ``start:stop`` from batch state ``y``.

    Returns ``(y, steps, times, states)``; ``times``/``states`` are only
    populated when ``record`` is set.
    """
    steps = []
    times, states = [], []
    t0 = sum(s.duration for s in sched.segments[:start])
    stop = len(sched.segments) if stop is None else stop
    for n in range(start, stop):
        seg = sched.segments[n]
        res = _flow(seg, y, tol, segment_index=n, record=record, width=sched.width)
        y = res.y
        steps.append(res.steps)
        if record:
            skip = 1 if times else 0
            times.extend(t0 + t for t in res.times[skip:])
            states.extend(res.states[skip:])
        t0 += seg.duration
    return y, steps, times, states


def simulate(sched: ControlSchedule, x, tol: Tolerance | None = None,
             trajectory: bool = False) -> SimulationResult:
    """Embed ``x``, run every segment in order, read out ``c . y(T)``.

    ``steps`` lists accepted integrator steps per segment, a proxy for how
    stiff (and effectively how deep) the schedule is.
    """
    tol = tol or default_tolerance()
    x = _check_input(sched, x)
    if x.ndim != 1:
        raise ScheduleError("simulate takes a single point; use simulate_batch for grids")
    y0 = embed_input(x, sched.width)[None, :]
    y, steps, times, states = run_segments(sched, y0, tol, record=trajectory)
    traj = None
    if trajectory:
        if not times:
            times, states = [0.0], [y0]
        traj = Trajectory(np.asarray(times), np.asarray(states)[:, 0, :])
    yT = y[0]
    return SimulationResult(float(sched.readout_vector() @ yT), yT, steps, traj)


def simulate_batch(sched: ControlSchedule, X, tol: Tolerance | None = None,
                   chunk: int | None = 512) -> SimulationResult:
    """Vectorised :func:`simulate` over the rows of ``X``.

    Points are processed in chunks; ``steps`` is the per-segment maximum
    over chunks. A failing chunk is retried point by point so the error names
    the offending input.
    """
    tol = tol or default_tolerance()
    X = _check_input(sched, np.atleast_2d(X))
    c = sched.readout_vector()
    chunk = chunk or len(X)
    finals = []
    steps = [0] * len(sched.segments)
    for lo in range(0, len(X), chunk):
        y0 = embed_input(X[lo:lo + chunk], sched.width)
        try:
            y, st, _, _ = run_segments(sched, y0, tol)
        except IntegrationError:
            for x in X[lo:lo + chunk]:
                try:
                    run_segments(sched, embed_input(x, sched.width)[None, :], tol)
                except IntegrationError as exc:
                    raise IntegrationError(
                        f"{exc} at input x={list(map(float, x))}", exc.segment_index, exc.time
                    ) from exc
            raise
        finals.append(y)
        steps = [max(a, b) for a, b in zip(steps, st)]
    Y = np.concatenate(finals) if finals else np.zeros((0, sched.width))
    return SimulationResult(Y @ c, Y, steps)
