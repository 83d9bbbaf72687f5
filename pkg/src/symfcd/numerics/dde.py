"""Constant-delay differential equations by the method of steps."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .integrate import DenseSolution, IntegratorConfig, StepStats, Trajectory, _solve_piece, DomainExitError

__all__ = ["integrate_dde"]


def integrate_dde(
    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    delay: float,
    history: Callable[[float], np.ndarray],
    T: float,
    cfg: IntegratorConfig | None = None,
    breakpoints: Sequence[float] = (),
    in_domain: Callable[[np.ndarray], bool] | None = None,
    output: Callable[[np.ndarray], float] | None = None,
    input_fn: Callable[[float], object] | None = None,
    grid: Sequence[float] | None = None,
) -> Trajectory:
    """Integrate ``z'(t) = rhs(t, z(t), z(t - delay))`` on ``[0, T]``.

    ``history`` gives the state on ``[-delay, 0]``; ``z(0) = history(0)``.
    The horizon is cut at every multiple of the delay (where the solution's
    derivative may jump) and at the extra ``breakpoints``. On each interval
    the delayed state is read from the Hermite dense output of the already
    computed solution. ``delay = 0`` reduces to the ordinary ODE.
    """
    if delay < 0:
        raise ValueError("delay must be non-negative")
    cfg = cfg or IntegratorConfig()
    in_domain = in_domain or (lambda z: True)
    z0 = np.asarray(history(0.0), dtype=float)
    if not in_domain(z0):
        raise DomainExitError(0.0, z0)

    cuts = set(b for b in breakpoints if 0.0 < b < T)
    if delay > 0:
        k = 1
        while k * delay < T:
            cuts.add(k * delay)
            k += 1
    edges = [0.0] + sorted(cuts) + [float(T)]

    sol = DenseSolution()
    stats = StepStats()

    def lagged(t):
        s = t - delay
        if s <= 0.0:
            return np.asarray(history(s), dtype=float)
        return sol(s)

    if delay == 0:
        def f(t, z):
            return rhs(t, z, z)
    else:
        def f(t, z):
            return rhs(t, z, lagged(t))

    z = z0
    h_hint = None
    for j, (a, b) in enumerate(zip(edges, edges[1:])):
        ts, zs, fs, h_hint = _solve_piece(f, a, b, z, cfg, in_domain, stats, h_hint)
        sol.add_piece(ts, zs, fs)
        z = zs[-1]
        if j:
            stats.restarts += 1

    if grid is None:
        times, states = sol.nodes()
    else:
        times = np.asarray(grid, dtype=float)
        states = sol.evaluate(times)
    outputs = np.array([output(s) for s in states]) if output else np.zeros(len(times))
    inputs = np.array([input_fn(float(t)) for t in times], dtype=float) if input_fn else np.zeros(len(times))
    meta = {"integrator": "dopri54-method-of-steps", "delay": delay, **cfg.as_dict(), "steps": stats.as_dict()}
    return Trajectory(times, states, outputs, inputs, meta, sol)
