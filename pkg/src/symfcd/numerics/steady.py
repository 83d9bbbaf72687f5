"""Steady states by damped Newton, with a simulate-to-quiescence fallback."""

from __future__ import annotations

import numpy as np

from .calculus import jacobian
from .integrate import IntegrationError, IntegratorConfig, solve

__all__ = ["SteadyStateError", "steady_state", "newton"]

MAX_ITER = 50
MAX_HALVINGS = 12
RESIDUAL_TOL = 1e-10


class SteadyStateError(RuntimeError):
    pass


def _norm(v) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=float)))


def newton(G, z0, in_domain=lambda z: True, max_iter: int = MAX_ITER):
    """Damped Newton on ``G(z) = 0``; returns ``(z, residual, converged)``.

    Backtracking halves the step (at most 12 times) until the residual
    decreases and the iterate stays in the domain.
    """
    z = np.array(z0, dtype=float)
    r = _norm(G(z))
    for _ in range(max_iter):
        if r <= 1e-15 * (1 + _norm(z)):
            break
        J = jacobian(G, z)
        g = np.asarray(G(z), dtype=float)
        try:
            dz = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            dz = np.linalg.lstsq(J, -g, rcond=None)[0]
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = z + lam * dz
            if in_domain(cand):
                try:
                    rc = _norm(G(cand))
                except (ValueError, ZeroDivisionError, OverflowError):
                    rc = np.inf
                if np.isfinite(rc) and rc < r:
                    break
            lam *= 0.5
        else:
            # no decrease along the Newton direction
            return z, r, r <= RESIDUAL_TOL
        small = _norm(lam * dz) <= 1e-15 * (1 + _norm(z))
        z, r = cand, rc
        if small:
            break
    return z, r, r <= RESIDUAL_TOL


def steady_state(sys, u_bar, guess, cfg: IntegratorConfig | None = None, settle_time: float = 50.0):
    """Solve ``F(z, u_bar) = 0`` starting from ``guess``.

    If Newton stalls, the system is simulated under the constant input until
    ``|z'| <= 1e-9`` and the result polished with Newton.
    """
    if not sys.in_input_set(u_bar):
        raise SteadyStateError(f"input {u_bar!r} outside the input set of {sys.name}")
    z0 = np.asarray(guess, dtype=float)
    if not sys.in_domain(z0):
        raise SteadyStateError(f"guess {z0} outside the domain of {sys.name}")

    def G(z):
        return sys.F(z, u_bar)

    z, r, ok = newton(G, z0, sys.in_domain)
    if ok and sys.in_domain(z):
        return z

    cfg = cfg or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, max_step=1.0)
    zs = z0
    for _ in range(40):
        try:
            sol, _ = solve(lambda t, w: G(w), (0.0, settle_time), zs, cfg, in_domain=sys.in_domain)
        except IntegrationError as exc:
            raise SteadyStateError(f"settling simulation failed: {exc}") from exc
        zs = sol(settle_time)
        if _norm(G(zs)) <= 1e-9:
            break
    else:
        raise SteadyStateError(f"{sys.name}: no quiescence reached for input {u_bar!r}")
    z, r, ok = newton(G, zs, sys.in_domain)
    if not ok:
        raise SteadyStateError(f"{sys.name}: Newton polish failed, residual {r:.3g}")
    if not sys.in_domain(z):
        raise SteadyStateError(f"{sys.name}: steady state {z} outside the domain")
    return z
