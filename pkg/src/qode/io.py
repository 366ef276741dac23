"""JSON (de)serialisation for schedules.

Indices are 1-based on disk and 0-based in memory. Floats go through
``json`` which writes ``repr`` (shortest round-trip form), so a
save/load cycle is bit-exact.

Schedule file::

    {"width": W, "input_dim": d,
     "segments": [{"duration": 1.0,
                   "linear":    [[i, j, v], ...],
                   "quadratic": [[i, j, k, v], ...],
                   "constant":  [[i, v], ...],
                   "label": "..."}],
     "readout": [[i, v], ...],
     "metadata": {...}}
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .schedule import ControlSchedule, ControlSegment, ScheduleError

__all__ = ["schedule_to_json", "schedule_from_json", "save_schedule", "load_schedule",
           "load_json", "dump_json", "to_jsonable"]


def to_jsonable(obj):
    """Convert numpy scalars/arrays and tuples so ``json`` can write them."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _segment_to_json(seg: ControlSegment) -> dict:
    out = {
        "duration": seg.duration,
        "linear": [[i + 1, j + 1, v] for i, j, v in seg.linear],
        "quadratic": [[i + 1, j + 1, k + 1, v] for i, j, k, v in seg.quadratic],
        "constant": [[i + 1, v] for i, v in seg.constant],
    }
    if seg.label:
        out["label"] = seg.label
    return out


def schedule_to_json(sched: ControlSchedule) -> dict:
    return {
        "width": sched.width,
        "input_dim": sched.input_dim,
        "segments": [_segment_to_json(s) for s in sched.segments],
        "readout": [[i + 1, v] for i, v in sched.readout],
        "metadata": to_jsonable(sched.metadata or {}),
    }


def _entries(raw, arity: int, where: str):
    if not isinstance(raw, list):
        raise ScheduleError(f"{where}: expected a list")
    out = []
    for n, e in enumerate(raw):
        if not isinstance(e, (list, tuple)) or len(e) != arity + 1:
            raise ScheduleError(f"{where}[{n}]: expected {arity} indices and a value, got {e!r}")
        idx = []
        for i in e[:arity]:
            if isinstance(i, bool) or not isinstance(i, int) or i < 1:
                raise ScheduleError(f"{where}[{n}]: indices must be integers >= 1, got {e!r}")
            idx.append(i - 1)
        v = e[arity]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScheduleError(f"{where}[{n}]: value must be a number, got {v!r}")
        out.append((*idx, float(v)))
    return tuple(out)


def schedule_from_json(data: dict) -> ControlSchedule:
    if not isinstance(data, dict):
        raise ScheduleError("schedule JSON must be an object")
    for key in ("width", "input_dim", "segments", "readout"):
        if key not in data:
            raise ScheduleError(f"schedule JSON is missing {key!r}")
    segs = []
    for n, s in enumerate(data["segments"]):
        where = f"segments[{n}]"
        if "duration" not in s:
            raise ScheduleError(f"{where}: missing 'duration'")
        segs.append(ControlSegment(
            float(s["duration"]),
            _entries(s.get("linear", []), 2, where + ".linear"),
            _entries(s.get("quadratic", []), 3, where + ".quadratic"),
            _entries(s.get("constant", []), 1, where + ".constant"),
            label=s.get("label", "")))
    return ControlSchedule(int(data["width"]), int(data["input_dim"]), tuple(segs),
                           _entries(data["readout"], 1, "readout"),
                           metadata=dict(data.get("metadata", {})))


def load_json(path) -> object:
    """Parse a JSON file; errors name the file, line and the offending text."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ValueError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {context}") from None


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=1) + "\n")


def save_schedule(sched: ControlSchedule, path) -> None:
    dump_json(schedule_to_json(sched), path)


def load_schedule(path) -> ControlSchedule:
    return schedule_from_json(load_json(path))
