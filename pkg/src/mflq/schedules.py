"""Time-dependent coefficient schedules.

A schedule represents one deterministic model coefficient on the horizon:
either a constant array or a table of (time, array) knots evaluated by
linear interpolation. Knot evaluation is exact; the stored arrays are
frozen so schedules can be shared between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError

CONSTANT = "constant"
TABULATED = "tabulated"


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Schedule:
    """Matrix- or vector-valued function of time.

    Use :meth:`constant`, :meth:`tabulated` or :meth:`zeros` to construct.
    """

    kind: str
    shape: tuple
    value: np.ndarray | None = None
    times: np.ndarray | None = None
    values: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def constant(cls, value) -> "Schedule":
        v = _frozen(value)
        return cls(kind=CONSTANT, shape=v.shape, value=v)

    @classmethod
    def zeros(cls, shape) -> "Schedule":
        return cls.constant(np.zeros(shape))

    @classmethod
    def tabulated(cls, times, values) -> "Schedule":
        t = _frozen(times)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("tabulated schedule needs at least two knots")
        if not np.all(np.diff(t) > 0):
            raise ValueError("knot times must be strictly increasing")
        v = _frozen(values)
        if v.shape[0] != t.size:
            raise ValueError("one matrix per knot required")
        return cls(kind=TABULATED, shape=v.shape[1:], times=t, values=v)

    @property
    def is_constant(self) -> bool:
        return self.kind == CONSTANT

    def knot_times(self) -> np.ndarray:
        return self.times if self.kind == TABULATED else np.empty(0)

    def spans(self, horizon: float) -> bool:
        """True when the schedule is defined on all of [0, horizon]."""
        if self.kind == CONSTANT:
            return True
        return self.times[0] == 0.0 and self.times[-1] == horizon

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == CONSTANT:
            return self.value
        times = self.times
        if t < times[0] or t > times[-1]:
            raise OutOfDomainError(
                f"t={t} outside schedule domain [{times[0]}, {times[-1]}]"
            )
        i = int(np.searchsorted(times, t, side="right")) - 1
        if i >= times.size - 1:
            return self.values[-1]
        if t == times[i]:
            return self.values[i]
        w = (t - times[i]) / (times[i + 1] - times[i])
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def map(self, fn) -> "Schedule":
        """New schedule with ``fn`` applied to every stored array."""
        if self.kind == CONSTANT:
            return Schedule.constant(fn(self.value))
        return Schedule.tabulated(self.times, np.stack([fn(v) for v in self.values]))

    def max_asymmetry(self) -> float:
        """Largest entrywise |M - M^T| over stored square matrices."""
        mats = [self.value] if self.kind == CONSTANT else list(self.values)
        return max(float(np.max(np.abs(m - m.T))) for m in mats)


def as_schedule(value, shape) -> Schedule:
    """Coerce ``value`` (Schedule | scalar | array | None) to a Schedule.

    ``None`` becomes the zero schedule of the requested shape; scalars are
    broadcast only onto 1x1 or length-1 shapes.
    """
    if value is None:
        return Schedule.zeros(shape)
    if isinstance(value, Schedule):
        if tuple(value.shape) != tuple(shape):
            raise ValueError(f"schedule shape {value.shape} != expected {shape}")
        return value
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if int(np.prod(shape)) != 1:
            raise ValueError(f"scalar given for coefficient of shape {shape}")
        arr = np.full(shape, float(arr))
    if arr.shape != tuple(shape):
        raise ValueError(f"coefficient shape {arr.shape} != expected {shape}")
    return Schedule.constant(arr)
