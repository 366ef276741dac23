"""Piecewise-constant control schedules for quadratic ODEs.

A schedule drives the state ``y in R^W`` through a sequence of segments. On
each segment the vector field is

    dy_i/dt = sum_j a_ij y_j + sum_jk q_ijk y_j y_k + b_i

with constant coefficients. The input enters through ``y(0)`` and the output
is the linear readout ``c . y(T)``.

Indices are 0-based in memory. The JSON format uses 1-based indices; the
conversion lives in :mod:`qode.io`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ScheduleError",
    "ControlSegment",
    "ControlSchedule",
    "SegmentBuilder",
    "embed_input",
    "segment_rhs",
    "rescale_schedule",
]


class ScheduleError(ValueError):
    """Malformed segment or schedule."""


def _sorted_unique(items, nkey, kind):
    seen = set()
    for item in items:
        key = tuple(int(v) for v in item[:nkey])
        if key in seen:
            raise ScheduleError(f"duplicate {kind} term at index {key}")
        seen.add(key)
    # stable sort on the row index only
    return tuple(sorted(
        (tuple(int(v) for v in item[:nkey]) + (float(item[nkey]),) for item in items),
        key=lambda t: t[0],
    ))


@dataclass(frozen=True)
class ControlSegment:
    """One constant piece of the control signal.

    ``linear`` holds ``(i, j, a_ij)``, ``quadratic`` holds ``(i, j, k, q_ijk)``
    and ``constant`` holds ``(i, b_i)``, all 0-based.
    """

    duration: float
    linear: tuple = ()
    quadratic: tuple = ()
    constant: tuple = ()
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if not np.isfinite(self.duration) or self.duration <= 0:
            raise ScheduleError(f"segment duration must be positive, got {self.duration}")
        object.__setattr__(self, "duration", float(self.duration))
        object.__setattr__(self, "linear", _sorted_unique(self.linear, 2, "linear"))
        object.__setattr__(self, "quadratic", _sorted_unique(self.quadratic, 3, "quadratic"))
        object.__setattr__(self, "constant", _sorted_unique(self.constant, 1, "constant"))
        for term in self.linear + self.quadratic + self.constant:
            if not np.isfinite(term[-1]):
                raise ScheduleError(f"non-finite coefficient in term {term}")

    @property
    def max_index(self) -> int:
        idx = [-1]
        for t in self.linear:
            idx.extend(t[:2])
        for t in self.quadratic:
            idx.extend(t[:3])
        for t in self.constant:
            idx.append(t[0])
        return max(idx)

    @property
    def min_index(self) -> int:
        idx = [0]
        for t in self.linear:
            idx.extend(t[:2])
        for t in self.quadratic:
            idx.extend(t[:3])
        for t in self.constant:
            idx.append(t[0])
        return min(idx)

    @property
    def is_empty(self) -> bool:
        return not (self.linear or self.quadratic or self.constant)

    def scaled(self, time_factor: float) -> "ControlSegment":
        """Stretch the duration by ``time_factor`` and slow the field by the same factor."""
        g = 1.0 / time_factor
        return ControlSegment(
            self.duration * time_factor,
            tuple((i, j, v * g) for i, j, v in self.linear),
            tuple((i, j, k, v * g) for i, j, k, v in self.quadratic),
            tuple((i, v * g) for i, v in self.constant),
            label=self.label,
        )

    def combined(self, other: "ControlSegment") -> "ControlSegment":
        """Superpose two segments of equal duration, adding coefficients of shared keys."""
        if other.duration != self.duration:
            raise ScheduleError("can only superpose segments of equal duration")

        def merge(a, b, n):
            acc = {}
            for t in a + b:
                acc[t[:n]] = acc.get(t[:n], 0.0) + t[n]
            return tuple(k + (v,) for k, v in acc.items())

        return ControlSegment(
            self.duration,
            merge(self.linear, other.linear, 2),
            merge(self.quadratic, other.quadratic, 3),
            merge(self.constant, other.constant, 1),
            label=self.label,
        )


class SegmentBuilder:
    """Collects the terms of a segment; a repeated key is a construction error."""

    def __init__(self, duration: float = 1.0, label: str = ""):
        self.duration = duration
        self.label = label
        self._lin: dict = {}
        self._quad: dict = {}
        self._const: dict = {}

    @staticmethod
    def _put(store, key, value, kind):
        if key in store:
            raise ScheduleError(f"duplicate {kind} term at index {key}")
        if value != 0.0:
            store[key] = float(value)

    def linear(self, i, j, value):
        self._put(self._lin, (i, j), value, "linear")
        return self

    def quadratic(self, i, j, k, value):
        self._put(self._quad, (i, j, k), value, "quadratic")
        return self

    def constant(self, i, value):
        self._put(self._const, (i,), value, "constant")
        return self

    def build(self) -> ControlSegment:
        return ControlSegment(
            self.duration,
            tuple(k + (v,) for k, v in self._lin.items()),
            tuple(k + (v,) for k, v in self._quad.items()),
            tuple(k + (v,) for k, v in self._const.items()),
            label=self.label,
        )


@dataclass(frozen=True)
class ControlSchedule:
    """Width, input dimension, ordered segments and a sparse readout ``(i, c_i)``.

    ``metadata`` carries non-normative information (state layout, compiler
    parameters) and does not take part in equality.
    """

    width: int
    input_dim: int
    segments: tuple
    readout: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.width < 1:
            raise ScheduleError("width must be a positive integer")
        if not 1 <= self.input_dim <= self.width:
            raise ScheduleError(
                f"input_dim must lie in [1, width={self.width}], got {self.input_dim}")
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ScheduleError("a schedule needs at least one segment (horizon must be > 0)")
        object.__setattr__(self, "readout", _sorted_unique(self.readout, 1, "readout"))
        for n, seg in enumerate(self.segments):
            if not isinstance(seg, ControlSegment):
                raise ScheduleError(f"segment {n} is not a ControlSegment")
            if seg.max_index >= self.width or seg.min_index < 0:
                raise ScheduleError(f"segment {n} references a state outside [0, {self.width})")
        for i, _ in self.readout:
            if not 0 <= i < self.width:
                raise ScheduleError(f"readout index {i} outside [0, {self.width})")

    @property
    def horizon(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    def readout_vector(self) -> np.ndarray:
        c = np.zeros(self.width)
        for i, v in self.readout:
            c[i] = v
        return c

    def replace(self, **changes) -> "ControlSchedule":
        kw = dict(width=self.width, input_dim=self.input_dim, segments=self.segments,
                  readout=self.readout, metadata=dict(self.metadata))
        kw.update(changes)
        return ControlSchedule(**kw)


def embed_input(x, width: int) -> np.ndarray:
    """Initial state: ``x`` in the first ``len(x)`` slots, zeros elsewhere.

    Accepts a single point of shape ``(d,)`` or a batch of shape ``(P, d)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] if x.ndim else 0
    if x.ndim == 0 or x.ndim > 2 or d < 1:
        raise ScheduleError(f"input must be a non-empty vector, got shape {x.shape}")
    if d > width:
        raise ScheduleError(f"input dimension {d} exceeds width {width}")
    y = np.zeros(x.shape[:-1] + (width,))
    y[..., :d] = x
    return y


def segment_rhs(seg: ControlSegment, y) -> np.ndarray:
    """Evaluate the segment's vector field at ``y`` straight from the term lists."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    W = y.shape[-1]
    if seg.max_index >= W:
        raise ScheduleError(f"segment references index {seg.max_index} but state has width {W}")
    for i, j, v in seg.linear:
        out[..., i] += v * y[..., j]
    for i, j, k, v in seg.quadratic:
        out[..., i] += v * y[..., j] * y[..., k]
    for i, v in seg.constant:
        out[..., i] += v
    return out


def rescale_schedule(sched: ControlSchedule, horizon: float) -> ControlSchedule:
    """Change the total horizon to ``horizon`` without changing the flow map.

    Every duration is multiplied by ``horizon / T`` and every coefficient by
    ``T / horizon``; each segment is time-invariant, so its flow is the same.
    """
    if not np.isfinite(horizon) or horizon <= 0:
        raise ScheduleError(f"horizon must be positive, got {horizon}")
    T = sched.horizon
    factor = horizon / T
    if factor == 1.0:
        return sched
    return sched.replace(segments=tuple(s.scaled(factor) for s in sched.segments))


def concat_segments(*groups: Iterable[ControlSegment]) -> tuple:
    out = []
    for g in groups:
        out.extend(g)
    return tuple(out)


def unit_readout(index: int, value: float = 1.0) -> tuple:
    return ((index, value),)


def dense_readout(c: Sequence[float], offset: int = 0) -> tuple:
    return tuple((offset + i, float(v)) for i, v in enumerate(c) if v != 0.0)
