"""Piecewise input signals and the input transformations acting on them."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "SignalError",
    "Segment",
    "InputSignal",
    "Transform",
    "apply_transform",
    "sample",
]


class SignalError(ValueError):
    pass


def _val(v):
    a = np.asarray(v, dtype=float)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class Segment:
    """One piece of a signal, active from ``start`` until the next segment.

    kinds and payloads:

    * ``constant``: ``value``
    * ``steps``: ``times`` (absolute, increasing, first == start), ``values``
    * ``sinusoid``: ``offset + amplitude * sin(2 pi t / period + phase)``,
      with ``t`` absolute time
    * ``ramp``: ``value + slope * (t - start)``
    * ``sampled``: linear interpolation through ``times`` / ``values``
    * ``mapped``: ``fn`` applied pointwise to ``base`` (non-affine transforms)
    """

    start: float
    kind: str
    payload: dict = field(default_factory=dict)

    def value(self, t: float):
        k, p = self.kind, self.payload
        if k == "constant":
            return p["value"]
        if k == "steps":
            i = int(np.searchsorted(p["times"], t, side="right")) - 1
            return p["values"][max(i, 0)]
        if k == "sinusoid":
            return p["offset"] + p["amplitude"] * math.sin(2 * math.pi * t / p["period"] + p["phase"])
        if k == "ramp":
            return p["value"] + p["slope"] * (t - self.start)
        if k == "sampled":
            ts, vs = p["times"], p["values"]
            if vs.ndim == 1:
                return float(np.interp(t, ts, vs))
            return np.array([np.interp(t, ts, vs[:, j]) for j in range(vs.shape[1])])
        if k == "mapped":
            return p["fn"](p["base"].value(t))
        raise SignalError(f"unknown segment kind {k!r}")

    def left_value(self, t: float):
        """Left limit at ``t`` (differs from ``value`` only at internal steps)."""
        if self.kind == "steps":
            i = int(np.searchsorted(self.payload["times"], t, side="left")) - 1
            return self.payload["values"][max(i, 0)]
        if self.kind == "mapped":
            return self.payload["fn"](self.payload["base"].left_value(t))
        return self.value(t)

    def internal_breakpoints(self) -> list[float]:
        if self.kind in ("steps", "sampled"):
            return [float(t) for t in self.payload["times"][1:]]
        if self.kind == "mapped":
            return self.payload["base"].internal_breakpoints()
        return []

    def knot_values(self) -> list:
        """Values at which the segment is extremal or jumps (for range checks)."""
        k, p = self.kind, self.payload
        if k == "constant":
            return [p["value"]]
        if k in ("steps", "sampled"):
            return list(p["values"])
        if k == "sinusoid":
            return [p["offset"] + p["amplitude"], p["offset"] - p["amplitude"]]
        return []


@dataclass(frozen=True)
class InputSignal:
    """A piecewise-continuous input on ``[0, horizon]`` with values in R^m."""

    horizon: float
    segments: tuple[Segment, ...]
    m: int = 1

    def __post_init__(self):
        if not self.segments:
            raise SignalError("signal needs at least one segment")
        starts = [s.start for s in self.segments]
        if starts[0] != 0.0:
            raise SignalError("first segment must start at t = 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise SignalError("segment start times must be strictly increasing")
        if starts[-1] > self.horizon:
            raise SignalError("segment starts beyond the horizon")
        for s in self.segments:
            if s.kind == "steps":
                ts = s.payload["times"]
                if ts[0] != s.start or np.any(np.diff(ts) <= 0):
                    raise SignalError("step times must start at the segment start and increase")
                if len(ts) != len(s.payload["values"]):
                    raise SignalError("step times and values differ in length")

    # constructors ------------------------------------------------------------

    @classmethod
    def constant(cls, value, horizon: float) -> "InputSignal":
        v = _val(value)
        return cls(horizon, (Segment(0.0, "constant", {"value": v}),), np.size(v))

    @classmethod
    def step(cls, before, after, t_switch: float, horizon: float) -> "InputSignal":
        return cls.steps([0.0, t_switch], [before, after], horizon)

    @classmethod
    def steps(cls, times: Sequence[float], values: Sequence, horizon: float) -> "InputSignal":
        times = np.asarray(times, dtype=float)
        vals = [_val(v) for v in values]
        seg = Segment(0.0, "steps", {"times": times, "values": vals})
        return cls(horizon, (seg,), np.size(vals[0]))

    @classmethod
    def sinusoid(cls, amplitude, period: float, horizon: float, offset=0.0, phase: float = 0.0) -> "InputSignal":
        seg = Segment(
            0.0,
            "sinusoid",
            {"offset": _val(offset), "amplitude": _val(amplitude), "period": float(period), "phase": float(phase)},
        )
        return cls(horizon, (seg,), max(np.size(offset), np.size(amplitude)))

    @classmethod
    def ramp(cls, value, slope, horizon: float) -> "InputSignal":
        seg = Segment(0.0, "ramp", {"value": _val(value), "slope": _val(slope)})
        return cls(horizon, (seg,), np.size(value))

    @classmethod
    def sampled(cls, times: Sequence[float], values: Sequence) -> "InputSignal":
        times = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=float)
        if times[0] != 0.0:
            raise SignalError("sampled signal must start at t = 0")
        seg = Segment(0.0, "sampled", {"times": times, "values": vals})
        return cls(float(times[-1]), (seg,), 1 if vals.ndim == 1 else vals.shape[1])

    @classmethod
    def concat(cls, segments: Sequence[Segment], horizon: float, m: int = 1) -> "InputSignal":
        return cls(horizon, tuple(segments), m)

    # evaluation ----------------------------------------------------------------

    def _segment_index(self, t: float) -> int:
        starts = [s.start for s in self.segments]
        return int(np.searchsorted(starts, t, side="right")) - 1

    def __call__(self, t: float):
        return sample(self, t)

    def breakpoints(self) -> list[float]:
        """Sorted discontinuity / restart times strictly inside ``(0, horizon)``."""
        pts = set()
        for s in self.segments:
            pts.add(s.start)
            pts.update(s.internal_breakpoints())
        return sorted(t for t in pts if 0.0 < t < self.horizon)

    def pieces(self, T: float | None = None) -> list[tuple[float, float, Callable]]:
        """Smooth pieces ``(t0, t1, f)`` covering ``[0, T]``.

        ``f`` is the piece's own formula, continuous on the closed interval,
        so an integrator never sees the jump at ``t1``.
        """
        T = self.horizon if T is None else T
        edges = [0.0] + [b for b in self.breakpoints() if b < T] + [T]
        out = []
        for t0, t1 in zip(edges, edges[1:]):
            seg = self.segments[self._segment_index(t0)]
            if seg.kind == "steps" or (seg.kind == "mapped" and seg.payload["base"].kind == "steps"):
                c = seg.value(t0)
                out.append((t0, t1, lambda t, c=c: c))
            else:
                out.append((t0, t1, seg.value))
        return out

    def values_on(self, times) -> np.ndarray:
        return np.array([sample(self, float(t)) for t in times])

    def check_values(self, contains: Callable, n_check: int = 64) -> None:
        """Raise ``SignalError`` if any probed value leaves the input set."""
        for i, s in enumerate(self.segments):
            t0 = s.start
            t1 = self.segments[i + 1].start if i + 1 < len(self.segments) else self.horizon
            probes = [s.value(t) for t in np.linspace(t0, t1, n_check)] + s.knot_values()
            for v in probes:
                if not contains(v):
                    raise SignalError(f"signal value {v!r} leaves the input set")

    def to_csv(self, path, times=None) -> None:
        times = np.linspace(0.0, self.horizon, 201) if times is None else times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"u{j + 1}" for j in range(self.m)])
            for t in times:
                w.writerow([repr(float(t))] + [repr(float(v)) for v in np.atleast_1d(sample(self, float(t)))])


def sample(u: InputSignal, t: float):
    """Evaluate ``u`` at ``t``; at a jump the right limit is returned."""
    if not (0.0 <= t <= u.horizon):
        raise SignalError(f"t = {t} outside [0, {u.horizon}]")
    return u.segments[u._segment_index(t)].value(t)


# --------------------------------------------------------------------------- #
# transforms


_AFFINE = ("identity", "scale", "translate", "rotate", "orthogonal", "linear")


@dataclass(frozen=True, eq=False)
class Transform:
    """A pointwise input transformation ``v -> pi(v)``.

    ``param`` is the scalar ``p`` for scale/translate and the matrix for
    rotate/orthogonal/linear. ``custom`` transforms carry their own callables.
    """

    kind: str
    param: object = None
    fn: Callable | None = None
    inverse_fn: Callable | None = None
    label: str = ""

    def __post_init__(self):
        k = self.kind
        if k not in _AFFINE + ("custom",):
            raise SignalError(f"unknown transform kind {k!r}")
        if k == "scale" and not (float(self.param) > 0):
            raise SignalError("scale needs p > 0")
        if k in ("rotate", "orthogonal", "linear"):
            M = np.asarray(self.param, dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise SignalError("matrix transform needs a square matrix")
            object.__setattr__(self, "param", M)
            if k in ("rotate", "orthogonal"):
                if np.max(np.abs(M.T @ M - np.eye(len(M)))) > 1e-12:
                    raise SignalError("matrix is not orthogonal")
                det = np.linalg.det(M)
                if k == "rotate" and abs(det - 1.0) > 1e-12:
                    raise SignalError("rotation must have det +1")
            elif abs(np.linalg.det(M)) < 1e-12 or np.linalg.cond(M) > 1e12:
                raise SignalError("linear transform must be invertible")
        if k == "custom" and self.fn is None:
            raise SignalError("custom transform needs fn")

    # factories ---------------------------------------------------------------

    @classmethod
    def identity(cls) -> "Transform":
        return cls("identity")

    @classmethod
    def scale(cls, p: float) -> "Transform":
        return cls("scale", float(p))

    @classmethod
    def translate(cls, p: float) -> "Transform":
        return cls("translate", float(p))

    @classmethod
    def rotate(cls, R) -> "Transform":
        return cls("rotate", R)

    @classmethod
    def orthogonal(cls, R) -> "Transform":
        return cls("orthogonal", R)

    @classmethod
    def linear(cls, M) -> "Transform":
        return cls("linear", M)

    @classmethod
    def custom(cls, fn: Callable, inverse: Callable | None = None, label: str = "custom") -> "Transform":
        return cls("custom", None, fn, inverse, label)

    # action --------------------------------------------------------------------

    @property
    def is_affine(self) -> bool:
        return self.kind in _AFFINE

    def __call__(self, v):
        k = self.kind
        if k == "identity":
            return v
        if k == "scale":
            return self.param * v
        if k == "translate":
            return self.param + v
        if k in ("rotate", "orthogonal", "linear"):
            return self.param @ np.asarray(v, dtype=float)
        return self.fn(v)

    def linear_part(self, v):
        """The linear part of an affine transform applied to ``v``."""
        k = self.kind
        if k in ("identity", "translate"):
            return v
        if k == "scale":
            return self.param * v
        if k in ("rotate", "orthogonal", "linear"):
            return self.param @ np.asarray(v, dtype=float)
        raise SignalError("custom transforms have no linear part")

    def inverse(self) -> "Transform":
        k = self.kind
        if k == "identity":
            return self
        if k == "scale":
            return Transform.scale(1.0 / self.param)
        if k == "translate":
            return Transform.translate(-self.param)
        if k in ("rotate", "orthogonal"):
            return Transform(k, self.param.T)
        if k == "linear":
            return Transform.linear(np.linalg.inv(self.param))
        if self.inverse_fn is None:
            raise SignalError("custom transform has no inverse")
        return Transform.custom(self.inverse_fn, self.fn, label=f"inverse({self.label})")

    def compose(self, other: "Transform") -> "Transform":
        """``self o other``: apply ``other`` first."""
        if self.kind == other.kind == "scale":
            return Transform.scale(self.param * other.param)
        if self.kind == other.kind == "translate":
            return Transform.translate(self.param + other.param)
        if self.kind == "identity":
            return other
        if other.kind == "identity":
            return self
        return Transform.custom(lambda v: self(other(v)), label=f"{self.describe()}o{other.describe()}")

    def maps_onto(self, samples: Sequence, contains: Callable) -> bool:
        """Spot-check ``pi(U) = U`` on a user-supplied sample of ``U``."""
        inv = self.inverse() if (self.is_affine or self.inverse_fn is not None) else None
        for v in samples:
            if not contains(self(v)):
                return False
            if inv is not None and not contains(inv(v)):
                return False
        return True

    def describe(self) -> str:
        if self.kind in ("scale", "translate"):
            return f"{self.kind}({self.param:g})"
        if self.kind == "custom":
            return self.label
        if self.kind == "identity":
            return "identity"
        return f"{self.kind}({np.array2string(self.param, precision=6, separator=',')})"


def apply_transform(pi: Transform, u: InputSignal, contains: Callable | None = None) -> InputSignal:
    """Return ``pi u`` with the same segment structure.

    ``contains`` is the target system's input-set predicate; when given, the
    transformed signal is probed and a ``SignalError`` raised if it leaves U.
    """
    if pi.kind == "identity":
        return u
    if pi.kind in ("rotate", "orthogonal", "linear") and pi.param.shape[0] != u.m:
        raise SignalError(f"transform acts on R^{pi.param.shape[0]}, signal is R^{u.m}")
    segs = tuple(_transform_segment(pi, s) for s in u.segments)
    out = InputSignal(u.horizon, segs, u.m)
    if contains is not None:
        out.check_values(contains)
    return out


def _transform_segment(pi: Transform, s: Segment) -> Segment:
    p = s.payload
    if not pi.is_affine:
        return Segment(s.start, "mapped", {"fn": pi, "base": s})
    if s.kind == "constant":
        return Segment(s.start, "constant", {"value": pi(p["value"])})
    if s.kind == "steps":
        return Segment(s.start, "steps", {"times": p["times"], "values": [pi(v) for v in p["values"]]})
    if s.kind == "sinusoid":
        return Segment(
            s.start,
            "sinusoid",
            {**p, "offset": pi(p["offset"]), "amplitude": pi.linear_part(p["amplitude"])},
        )
    if s.kind == "ramp":
        return Segment(s.start, "ramp", {"value": pi(p["value"]), "slope": pi.linear_part(p["slope"])})
    if s.kind == "sampled":
        vals = p["values"]
        new = np.array([pi(v) for v in vals], dtype=float)
        return Segment(s.start, "sampled", {"times": p["times"], "values": new})
    return Segment(s.start, "mapped", {"fn": pi, "base": s})
