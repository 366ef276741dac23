"""Elementary quadratic flows: tanh, ln and monomials.

Each ``add_*`` function writes one gadget into a :class:`SegmentBuilder`
over arbitrary state slots, so compilers can run many copies in parallel
inside a single duration-1 segment. The ``*_gadget`` functions return a
standalone segment, and ``*_closed_form`` give the exact time-1 states.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .schedule import ControlSchedule, ControlSegment, ScheduleError, SegmentBuilder

__all__ = [
    "SlotMap",
    "add_tanh",
    "add_ln",
    "add_mul",
    "tanh_gadget",
    "ln_gadget",
    "mul_gadget",
    "tanh_closed_form",
    "ln_closed_form",
    "mul_closed_form",
    "tanh_schedule",
    "ln_schedule",
    "monomial_schedule",
]


class SlotMap(dict):
    """Role name -> 0-based state index, with distinct indices."""

    def __init__(self, mapping: Mapping[str, object] = (), **roles):
        super().__init__(mapping, **roles)
        flat = []
        for v in self.values():
            flat.extend(v if isinstance(v, (list, tuple)) else [v])
        if any(int(i) < 0 for i in flat):
            raise ScheduleError(f"negative slot index in {dict(self)}")
        if len(set(flat)) != len(flat):
            raise ScheduleError(f"gadget slots must be distinct, got {dict(self)}")

    def check_width(self, width: int) -> "SlotMap":
        for role, v in self.items():
            for i in (v if isinstance(v, (list, tuple)) else [v]):
                if i >= width:
                    raise ScheduleError(f"slot {role}={i} outside width {width}")
        return self


def add_tanh(sb: SegmentBuilder, a: float, b: float, inp: int, out: int, aux: int):
    """``out' = (a*inp + b) - out*aux``, ``aux' = (a*inp + b)^2 - aux^2``.

    With ``out = aux = 0`` at the start and ``inp`` held fixed, time 1 gives
    ``out = tanh(a*inp + b)`` and ``aux = (a*inp + b) * tanh(a*inp + b)``.
    """
    SlotMap(inp=inp, out=out, aux=aux)
    sb.linear(out, inp, a).constant(out, b).quadratic(out, out, aux, -1.0)
    sb.quadratic(aux, inp, inp, a * a).linear(aux, inp, 2.0 * a * b)
    sb.constant(aux, b * b).quadratic(aux, aux, aux, -1.0)
    return sb


def add_ln(sb: SegmentBuilder, src: int, log: int):
    """``log' = src``, ``src' = -src^2``.

    With ``src = xi - 1`` at the start, time 1 adds ``ln(xi)`` to ``log`` and
    leaves ``src = (xi - 1)/xi``. For ``xi <= 0`` the flow escapes before t=1.
    """
    SlotMap(src=src, log=log)
    sb.linear(log, src, 1.0).quadratic(src, src, src, -1.0)
    return sb


def add_mul(sb: SegmentBuilder, w: Sequence[float], b: float, logs: Sequence[int], product: int):
    """``product' = (w . y[logs] + b) * product``.

    The log slots must be held fixed; time 1 multiplies ``product`` by
    ``exp(b) * prod(xi_i ** w_i)`` where ``y[logs] = ln(xi)``.
    """
    logs = list(logs)
    if len(w) != len(logs):
        raise ScheduleError("mul gadget needs one weight per log slot")
    SlotMap(logs=logs, product=product)
    for wi, li in zip(w, logs):
        sb.quadratic(product, li, product, wi)
    sb.linear(product, product, b)
    return sb


def _slots(slots, *names):
    if isinstance(slots, Mapping):
        return [slots[n] for n in names]
    return list(slots)


def tanh_gadget(a: float, b: float, slots=(0, 1, 2)) -> ControlSegment:
    """Duration-1 tanh segment; ``slots`` maps ``inp``, ``out``, ``aux`` (or a 3-tuple)."""
    inp, out, aux = _slots(slots, "inp", "out", "aux")
    return add_tanh(SegmentBuilder(label="tanh"), a, b, inp, out, aux).build()


def ln_gadget(slots=(1, 0)) -> ControlSegment:
    """Duration-1 ln segment; ``slots`` maps ``src`` and ``log`` (or a 2-tuple)."""
    src, log = _slots(slots, "src", "log")
    return add_ln(SegmentBuilder(label="ln"), src, log).build()


def mul_gadget(w, b: float, slots) -> ControlSegment:
    """Duration-1 multiply segment; ``slots`` maps ``logs`` (sequence) and ``product``.

    Use ``-w, -b`` for the inverse (division) flow.
    """
    logs, product = _slots(slots, "logs", "product")
    return add_mul(SegmentBuilder(label="mul"), list(w), b, logs, product).build()


def tanh_closed_form(a: float, b: float, xi: float):
    z = a * xi + b
    t = math.tanh(z)
    return (xi, t, z * t)


def ln_closed_form(xi: float, log0: float = 0.0):
    """Time-1 ``(log, src)`` for ``src(0) = xi - 1``."""
    if xi <= 0:
        raise ValueError("ln gadget requires xi > 0")
    return (log0 + math.log(xi), (xi - 1.0) / xi)


def mul_closed_form(w, b: float, xi, start: float = 1.0) -> float:
    w = np.asarray(w, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return float(start * math.exp(b + float(w @ np.log(xi))))


# small demo schedules, mostly for the CLI and tests

def tanh_schedule(a: float, b: float) -> ControlSchedule:
    """Width 3, input in slot 1, output ``tanh(a*x + b)`` read from slot 2."""
    return ControlSchedule(3, 1, (tanh_gadget(a, b, (0, 1, 2)),), ((1, 1.0),),
                           metadata={"gadget": "tanh", "a": a, "b": b})


def ln_schedule() -> ControlSchedule:
    """Width 3: shift ``x`` to ``x - 1`` in slot 2, then read ``ln x`` from slot 3."""
    prep = SegmentBuilder(label="shift").linear(1, 0, 1.0).constant(1, -1.0).build()
    return ControlSchedule(3, 1, (prep, ln_gadget((1, 2))), ((2, 1.0),),
                           metadata={"gadget": "ln"})


def monomial_schedule(w, b: float = 0.0) -> ControlSchedule:
    """Input ``x in (0, 1]^d``; output ``exp(b) * prod(x_i ** w_i)``.

    Layout: ``x`` (d), ``x - 1`` work slots (d), logs (d), product (1).
    Segments: shift, ln of every coordinate, set product to 1, multiply.
    """
    w = list(map(float, w))
    d = len(w)
    src = [d + i for i in range(d)]
    logs = [2 * d + i for i in range(d)]
    prod = 3 * d
    prep = SegmentBuilder(label="shift")
    for i in range(d):
        prep.linear(src[i], i, 1.0).constant(src[i], -1.0)
    prep.constant(prod, 1.0)
    ln = SegmentBuilder(label="ln")
    for i in range(d):
        add_ln(ln, src[i], logs[i])
    mul = add_mul(SegmentBuilder(label="mul"), w, b, logs, prod)
    return ControlSchedule(3 * d + 1, d, (prep.build(), ln.build(), mul.build()),
                           ((prod, 1.0),), metadata={"gadget": "mul", "w": w, "b": b})
