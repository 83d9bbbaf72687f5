"""Adaptive embedded Runge-Kutta integration with breakpoint restarts.

The stepper is the Dormand-Prince 5(4) pair (FSAL, 5th-order propagation)
with a PI step-size controller. Dense output is cubic Hermite on accepted
steps. Integration is restarted exactly at every signal breakpoint so no
step straddles a jump in the input.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..signals import InputSignal, sample

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "DomainExitError",
    "StepSizeUnderflow",
    "BlowUpError",
    "DenseSolution",
    "Trajectory",
    "solve",
    "integrate",
]


class IntegrationError(RuntimeError):
    pass


class DomainExitError(IntegrationError):
    def __init__(self, t: float, z):
        super().__init__(f"state left the domain at t = {t:.6g}: {np.array2string(np.asarray(z), precision=6)}")
        self.t = t
        self.z = z


class BlowUpError(IntegrationError):
    """The state norm exceeded ``IntegratorConfig.max_norm``."""

    def __init__(self, t, z):
        super().__init__(f"state norm exceeded the blow-up bound at t = {t:.6g}")
        self.t, self.z = t, np.asarray(z)


class StepSizeUnderflow(IntegrationError):
    def __init__(self, t: float, h: float):
        super().__init__(f"step size {h:.3g} underflow at t = {t:.6g}")
        self.t = t
        self.h = h


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.5
    min_step: float = 1e-12
    dense_output: bool = True
    max_steps: int = 2_000_000
    max_norm: float = 1e12

    def __post_init__(self):
        if not (0 < self.rel_tol < 1 and 0 < self.abs_tol < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        if not (0 < self.min_step < self.max_step):
            raise ValueError("need 0 < min_step < max_step")

    def as_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "max_step": self.max_step,
            "min_step": self.min_step,
            "dense_output": self.dense_output,
            "max_norm": self.max_norm,
        }


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0
    restarts: int = 0

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "evaluations": self.evaluations,
            "restarts": self.restarts,
        }


class DenseSolution:
    """Accepted nodes ``(t, z, z')`` per smooth piece, with Hermite lookup."""

    def __init__(self):
        self.pieces: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._starts: list[float] = []

    def add_piece(self, ts, zs, fs):
        self.pieces.append((np.asarray(ts), np.asarray(zs), np.asarray(fs)))
        self._starts.append(float(ts[0]))

    @property
    def t_start(self) -> float:
        return self._starts[0]

    @property
    def t_end(self) -> float:
        return float(self.pieces[-1][0][-1])

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Merged node times (strictly increasing) and states."""
        ts = [self.pieces[0][0]]
        zs = [self.pieces[0][1]]
        for t, z, _ in self.pieces[1:]:
            if len(t) > 1:
                ts.append(t[1:])
                zs.append(z[1:])
        return np.concatenate(ts), np.concatenate(zs)

    def __call__(self, t: float) -> np.ndarray:
        slack = 1e-12 * max(1.0, abs(t))
        if t < self.t_start - slack or t > self.t_end + slack:
            raise ValueError(f"t = {t} outside the solution range [{self.t_start}, {self.t_end}]")
        # right-continuous: at a restart time the later piece wins
        k = max(bisect.bisect_right(self._starts, t) - 1, 0)
        ts, zs, fs = self.pieces[k]
        if len(ts) == 1:
            return zs[0].copy()
        i = int(np.searchsorted(ts, t, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        return hermite(ts[i], ts[i + 1], zs[i], zs[i + 1], fs[i], fs[i + 1], t)

    def evaluate(self, times: Sequence[float]) -> np.ndarray:
        return np.array([self(float(t)) for t in times])


def hermite(t0, t1, z0, z1, f0, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * z0 + h10 * h * f0 + h01 * z1 + h11 * h * f1


def _finite(a) -> bool:
    return bool(np.all(np.isfinite(a)))


def _safe_eval(rhs, t, z, stats):
    stats.evaluations += 1
    try:
        f = rhs(t, z)
    except (ValueError, ZeroDivisionError, OverflowError, FloatingPointError):
        return None
    f = np.asarray(f, dtype=float)
    return f if _finite(f) else None


def _initial_step(rhs, t0, z0, f0, direction_span, cfg, stats):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(z0)
    d0 = float(np.max(np.abs(z0) / scale))
    d1 = float(np.max(np.abs(f0) / scale))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, direction_span, cfg.max_step)
    f1 = _safe_eval(rhs, t0 + h0, z0 + h0 * f0, stats)
    if f1 is None:
        return max(cfg.min_step * 10, h0 * 1e-3)
    d2 = float(np.max(np.abs(f1 - f0) / scale)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return max(min(100 * h0, h1, direction_span, cfg.max_step), cfg.min_step * 10)


def _solve_piece(rhs, t0, t1, z0, cfg, in_domain, stats, h_hint=None):
    z = np.array(z0, dtype=float)
    f = _safe_eval(rhs, t0, z, stats)
    if f is None:
        raise IntegrationError(f"right-hand side not evaluable at t = {t0:.6g}")
    ts, zs, fs = [t0], [z.copy()], [f.copy()]
    span = t1 - t0
    if span <= 0:
        return ts, zs, fs, h_hint
    h = h_hint if h_hint else _initial_step(rhs, t0, z, f, span, cfg, stats)
    h = min(h, cfg.max_step, span)
    t = t0
    err_prev = 1e-4
    while t < t1:
        if stats.accepted + stats.rejected > cfg.max_steps:
            raise IntegrationError(f"step budget exhausted at t = {t:.6g}")
        last = t + h >= t1 - 1e-13 * max(1.0, abs(t1))
        if last:
            h = t1 - t
        k = [f]
        ok = True
        for s in range(1, 6):
            zs_ = z + h * sum(a * kk for a, kk in zip(_A[s], k))
            ks = _safe_eval(rhs, t + _C[s] * h, zs_, stats)
            if ks is None:
                ok = False
                break
            k.append(ks)
        if ok:
            z_new = z + h * sum(b * kk for b, kk in zip(_B, k))
            f_new = _safe_eval(rhs, t + h, z_new, stats)
            ok = f_new is not None
        if ok:
            k.append(f_new)
            err_vec = h * sum(e * kk for e, kk in zip(_E, k))
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(z), np.abs(z_new))
            err = float(np.max(np.abs(err_vec) / scale))
            if not math.isfinite(err):
                ok = False
        if ok and err <= 1.0 and not in_domain(z_new):
            # accepted by error control but outside the domain: retry smaller,
            # a genuine exit ends in DomainExitError below
            if h <= cfg.min_step * 1.0001:
                raise DomainExitError(t + h, z_new)
            stats.rejected += 1
            h = max(h * 0.25, cfg.min_step)
            continue
        if not ok:
            stats.rejected += 1
            if h <= cfg.min_step * 1.0001:
                # the field stopped being evaluable: usually a boundary hit
                if not in_domain(z + h * f):
                    raise DomainExitError(t + h, z + h * f)
                rhs(t + h, z + h * f)  # surface the field's own error, if any
                raise StepSizeUnderflow(t, h)
            h = max(h * 0.25, cfg.min_step)
            continue
        if err <= 1.0:
            if float(np.max(np.abs(z_new))) > cfg.max_norm:
                raise BlowUpError(t + h, z_new)
            t_new = t1 if last else t + h
            t, z, f = t_new, z_new, f_new
            ts.append(t)
            zs.append(z.copy())
            fs.append(f.copy())
            stats.accepted += 1
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** (-_ALPHA) * err_prev ** _BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h_next = min(h * factor, cfg.max_step)
            if last:
                return ts, zs, fs, h_next
            h = h_next
        else:
            stats.rejected += 1
            factor = max(_MIN_FACTOR, _SAFETY * err ** (-1 / 5))
            h_new = h * factor
            if h_new < cfg.min_step:
                raise StepSizeUnderflow(t, h_new)
            h = h_new
    return ts, zs, fs, h


def solve(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t_span: tuple[float, float],
    z0,
    cfg: IntegratorConfig | None = None,
    breakpoints: Sequence[float] = (),
    in_domain: Callable[[np.ndarray], bool] | None = None,
    stats: StepStats | None = None,
    pieces_rhs: Sequence[Callable] | None = None,
) -> tuple[DenseSolution, StepStats]:
    """Integrate ``z' = rhs(t, z)`` over ``t_span``, restarting at breakpoints.

    ``pieces_rhs``, when given, supplies one right-hand side per interval
    between consecutive breakpoints (so each piece can use its own smooth
    formula for the input).
    """
    cfg = cfg or IntegratorConfig()
    stats = stats or StepStats()
    in_domain = in_domain or (lambda z: True)
    t0, t1 = map(float, t_span)
    edges = [t0] + sorted(b for b in breakpoints if t0 < b < t1) + [t1]
    sol = DenseSolution()
    z = np.array(z0, dtype=float)
    if not in_domain(z):
        raise DomainExitError(t0, z)
    h_hint = None
    for j, (a, b) in enumerate(zip(edges, edges[1:])):
        f = pieces_rhs[j] if pieces_rhs is not None else rhs
        ts, zs, fs, h_hint = _solve_piece(f, a, b, z, cfg, in_domain, stats, h_hint)
        sol.add_piece(ts, zs, fs)
        z = zs[-1]
        if j:
            stats.restarts += 1
    return sol, stats


# --------------------------------------------------------------------------- #
# system-level integration


@dataclass
class Trajectory:
    """Time grid with states, outputs and input samples.

    ``meta`` holds integrator tolerances, step statistics and, for stochastic
    runs, the RNG seed.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    meta: dict = field(default_factory=dict)
    dense: DenseSolution | None = None
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.times) and self.times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        q = 1 if self.outputs.ndim == 1 else self.outputs.shape[1]
        m = 1 if self.inputs.ndim == 1 else self.inputs.shape[1]
        header = list(self.labels) if self.labels else (
            ["time"] + [f"z{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(q)]
            + [f"u{i + 1}" for i in range(m)]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, z, y, u in zip(self.times, self.states, self.outputs, self.inputs):
                row = [float(t), *np.atleast_1d(z), *np.atleast_1d(y), *np.atleast_1d(u)]
                w.writerow([repr(float(v)) for v in row])


def integrate(
    sys,
    u: InputSignal,
    z0,
    T: float | None = None,
    cfg: IntegratorConfig | None = None,
    grid: Sequence[float] | None = None,
) -> Trajectory:
    """Integrate ``sys`` under input ``u`` from ``z0`` on ``[0, T]``.

    Returns the accepted-step trajectory, or, when ``grid`` is given, the
    dense output sampled on that grid.
    """
    cfg = cfg or IntegratorConfig()
    T = u.horizon if T is None else float(T)
    if T > u.horizon * (1 + 1e-12):
        raise IntegrationError(f"horizon {T} exceeds the signal horizon {u.horizon}")
    z0 = np.asarray(z0, dtype=float)
    if not sys.in_domain(z0):
        raise DomainExitError(0.0, z0)
    pieces = u.pieces(T)
    F = sys.F
    rhs_list = [(lambda t, z, g=g: F(z, g(t))) for (_, _, g) in pieces]
    bps = [a for (a, _, _) in pieces[1:]]
    sol, stats = solve(None, (0.0, T), z0, cfg, bps, sys.in_domain, pieces_rhs=rhs_list)
    if grid is None:
        times, states = sol.nodes()
    else:
        times = np.asarray(grid, dtype=float)
        states = sol.evaluate(times)
    outputs = np.array([sys.h(z) for z in states], dtype=float)
    inputs = np.array([sample(u, float(t)) for t in times], dtype=float)
    meta = {"integrator": "dopri54", **cfg.as_dict(), "steps": stats.as_dict()}
    return Trajectory(times, states, outputs, inputs, meta, sol if cfg.dense_output else None)
