"""Lyapunov verification for planar "nonlinear damping" systems

    x' = g(y),    y' = -f(x) - k(y)

with ``f, g, k`` increasing, using ``V = int f + int g``, and the
log-coordinate reduction that brings ``x' = x g(y)`` systems to that form.
Also an empirical global-attraction test from random initial states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Sequence

import numpy as np

from .models import Box, SystemSpec
from .numerics.calculus import directional
from .numerics.dual import exp, pack, real
from .numerics.integrate import IntegrationError, IntegratorConfig, integrate
from .numerics.steady import SteadyStateError, steady_state
from .report import AnalysisReport
from .signals import InputSignal

__all__ = [
    "LyapunovTriple",
    "FormMismatch",
    "adaptive_simpson",
    "lyapunov_value",
    "lyapunov_decrease_check",
    "corollary52_transform",
    "gas_empirical",
    "hessian_check",
    "properness_check",
    "lasalle_check",
]


class FormMismatch(ValueError):
    """The system is not of the form ``x' = x g(y)``, ``y' = -f(x) - k(y)``."""


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""
    if a == b:
        return 0.0

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return rec(a, m, fa, flm, fm, left, tol / 2, depth - 1) + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    out = rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)
    if not math.isfinite(out):
        raise ArithmeticError("quadrature produced a non-finite value")
    return out


def _d(fn, s: float) -> float:
    return float(directional(lambda v: fn(v[0]), np.array([s]), np.array([1.0])))


@dataclass(frozen=True, eq=False)
class LyapunovTriple:
    """``x' = g(y)``, ``y' = -f(x) - k(y)`` with equilibrium ``(x0, y0)``.

    ``c = f(x0)``; the normalized ``f - c`` and ``k + c`` vanish at the
    equilibrium and are what enters ``V``.
    """

    f: Callable[[float], float]
    g: Callable[[float], float]
    k: Callable[[float], float]
    x0: float
    y0: float
    c: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "c", float(real(self.f(self.x0))))

    def f_n(self, x):
        return self.f(x) - self.c

    def k_n(self, y):
        return self.k(y) + self.c

    def gradient(self, x, y) -> np.ndarray:
        return np.array([float(real(self.f_n(x))), float(real(self.g(y)))])

    def vdot_closed_form(self, y) -> float:
        return -float(real(self.g(y))) * float(real(self.k_n(y)))

    def check_hypotheses(self, xs: Sequence[float], ys: Sequence[float], tol: float = 1e-10) -> AnalysisReport:
        """Equilibrium identities and positive-derivative samples."""
        at_eq = {
            "f_n(x0)": abs(float(real(self.f_n(self.x0)))),
            "k_n(y0)": abs(float(real(self.k_n(self.y0)))),
            "g(y0)": abs(float(real(self.g(self.y0)))),
        }
        df = min(_d(self.f, x) for x in xs)
        dg = min(_d(self.g, y) for y in ys)
        dk = min(_d(self.k, y) for y in ys)
        ok = max(at_eq.values()) <= tol and df > 0 and dg > 0 and dk > 0
        return AnalysisReport(
            kind="lyapunov_hypotheses",
            passed=ok,
            metrics={**at_eq, "min_df": df, "min_dg": dg, "min_dk": dk},
            tolerances={"equilibrium": tol, "derivatives": 0.0},
            details={"x_grid": list(xs), "y_grid": list(ys)},
        )


def lyapunov_value(triple: LyapunovTriple, x: float, y: float, tol: float = 1e-10) -> float:
    """``V(x, y) = int_{x0}^x (f - c) + int_{y0}^y g`` by adaptive quadrature."""
    fx = lambda r: float(real(triple.f_n(r)))  # noqa: E731
    gy = lambda r: float(real(triple.g(r)))  # noqa: E731
    return adaptive_simpson(fx, triple.x0, float(x), tol) + adaptive_simpson(gy, triple.y0, float(y), tol)


def lyapunov_decrease_check(triple: LyapunovTriple, trajectory, tol: float = 1e-7,
                            rhs: Callable | None = None, u_bar=None) -> AnalysisReport:
    """Three decrease checks along a trajectory in the triple's coordinates.

    (i) the chain rule ``grad V . z'`` agrees with ``-g(y) (k(y) + c)``,
    (ii) both are ``<= tol``, (iii) ``V`` is non-increasing up to ``tol``.
    ``z'`` comes from ``rhs(z, u_bar)`` when given (typically the transformed
    system's field) or else from the triple's own equations.
    """
    states = np.asarray(trajectory.states, dtype=float)
    chain, closed, V = [], [], []
    for x, y in states:
        if rhs is not None:
            zdot = np.asarray(rhs(np.array([x, y]), u_bar), dtype=float)
        else:
            zdot = np.array([float(real(triple.g(y))), -float(real(triple.f(x))) - float(real(triple.k(y)))])
        chain.append(float(triple.gradient(x, y) @ zdot))
        closed.append(triple.vdot_closed_form(y))
        V.append(lyapunov_value(triple, x, y))
    chain, closed, V = map(np.asarray, (chain, closed, V))
    agree = float(np.max(np.abs(chain - closed)))
    max_vdot = float(max(np.max(chain), np.max(closed)))
    max_rise = float(np.max(np.diff(V))) if len(V) > 1 else 0.0
    checks = {"agreement": agree <= tol, "nonpositive": max_vdot <= tol, "monotone": max_rise <= tol}
    return AnalysisReport(
        kind="lyapunov",
        passed=all(checks.values()),
        metrics={"max_vdot_disagreement": agree, "max_vdot": max_vdot, "max_V_increase": max_rise,
                 "V_start": float(V[0]), "V_end": float(V[-1]), **{f"check_{k}": v for k, v in checks.items()}},
        tolerances={"tol": tol},
        details={"grid_points": len(V)},
    )


# --------------------------------------------------------------------------- #
# log-coordinate reduction


@dataclass(frozen=True, eq=False)
class LogReduction:
    """Result of the log-coordinate reduction at a fixed input."""

    system: SystemSpec
    triple: LyapunovTriple
    sign: int  # z = sign * ln x
    case: str
    u_bar: object

    def to_reduced(self, states) -> np.ndarray:
        s = np.array(states, dtype=float)
        s[..., 0] = self.sign * np.log(s[..., 0])
        return s

    def to_original(self, states) -> np.ndarray:
        s = np.array(states, dtype=float)
        s[..., 0] = np.exp(self.sign * s[..., 0])
        return s

    def __iter__(self):  # allow ``system, triple = corollary52_transform(...)``
        return iter((self.system, self.triple))


def _monotone_sign(fn, pts) -> int:
    d = np.array([_d(fn, s) for s in pts])
    if np.all(d > 0):
        return 1
    if np.all(d < 0):
        return -1
    return 0


def corollary52_transform(sys: SystemSpec, u_bar, x_grid: Sequence[float] | None = None,
                          y_grid: Sequence[float] | None = None, tol: float = 1e-9) -> LogReduction:
    """Bring ``x' = x g(y)``, ``y' = -f(x) - k(y)`` (``x > 0``) to damping form.

    The decomposition is read off numerically at ``u_bar``: ``g(y) = x'/x``
    must not depend on ``x``, ``y'`` must split additively, and ``k`` must be
    increasing. Case (a), ``f`` and ``g`` increasing, uses ``z = ln x``;
    case (b), both decreasing, uses ``z = -ln x``. Anything else raises
    ``FormMismatch``.
    """
    if sys.n != 2:
        raise FormMismatch(f"{sys.name} is not planar")
    xs = np.asarray(x_grid if x_grid is not None else np.geomspace(0.1, 10.0, 9))
    ys = np.asarray(y_grid if y_grid is not None else np.linspace(-3.0, 3.0, 9))
    if np.any(xs <= 0) or not sys.in_domain(np.array([xs[0], ys[0]])):
        raise FormMismatch("the reduction needs x > 0")

    def Fx(x, y):
        return float(real(sys.F(np.array([x, y]), u_bar)[0]))

    def Fy(x, y):
        return float(real(sys.F(np.array([x, y]), u_bar)[1]))

    xr, yr = float(xs[len(xs) // 2]), float(ys[len(ys) // 2])
    for x in xs:
        for y in ys:
            if abs(Fx(x, y) / x - Fx(xr, y) / xr) > tol * (1 + abs(Fx(xr, y) / xr)):
                raise FormMismatch(f"{sys.name}: x'/x depends on x")
            sep = Fy(x, y) - Fy(x, yr) - Fy(xr, y) + Fy(xr, yr)
            if abs(sep) > tol * (1 + abs(Fy(x, y))):
                raise FormMismatch(f"{sys.name}: y' does not split as -f(x) - k(y)")

    def g(y):
        return sys.F(pack([xr, y]), u_bar)[0] / xr

    def f(x):
        return -sys.F(pack([x, yr]), u_bar)[1]

    def k(y):
        return -sys.F(pack([xr, y]), u_bar)[1] + sys.F(pack([xr, yr]), u_bar)[1]

    sf, sg, sk = _monotone_sign(f, xs), _monotone_sign(g, ys), _monotone_sign(k, ys)
    if sk != 1:
        raise FormMismatch(f"{sys.name}: k is not increasing")
    if sf == sg == 1:
        sign, case = 1, "a"
    elif sf == sg == -1:
        sign, case = -1, "b"
    else:
        raise FormMismatch(f"{sys.name}: f and g are not both increasing or both decreasing")

    def F_red(w, u):
        z, y = w[0], w[1]
        x = exp(sign * z)
        v = sys.F(pack([x, y]), u)
        return pack([sign * v[0] / x, v[1]])

    red = SystemSpec(
        name=f"{sys.name}-log",
        n=2,
        m=sys.m,
        q=1,
        domain=Box.real(2),
        input_set=sys.input_set,
        F=F_red,
        h=lambda w: w[1],
        params=MappingProxyType(dict(sys.params)),
        sample_box=((-3.0, 3.0), (-5.0, 5.0)),
        input_box=sys.input_box,
        equations=f"z = {'' if sign > 0 else '-'}ln x;  z' = g~(y);  y' = -f~(z) - k(y)",
        provenance=f"log-coordinate reduction of {sys.name}, case ({case})",
    )
    guess = sys.closed_form(u_bar) if sys.closed_form is not None else np.array([xr, yr])
    x_eq, y_eq = steady_state(sys, u_bar, guess)
    triple = LyapunovTriple(
        f=lambda z: f(exp(sign * z)),
        g=(lambda y: g(y)) if sign > 0 else (lambda y: -g(y)),
        k=k,
        x0=sign * math.log(x_eq),
        y0=float(y_eq),
    )
    return LogReduction(red, triple, sign, case, u_bar)


# --------------------------------------------------------------------------- #
# structural properties of V


def hessian_check(triple: LyapunovTriple, points) -> AnalysisReport:
    """``V`` has the diagonal Hessian ``diag(f'(x), g'(y))``; both must be > 0."""
    mins = [min(_d(triple.f, x), _d(triple.g, y)) for x, y in np.atleast_2d(points)]
    return AnalysisReport("lyapunov_hessian", min(mins) > 0, {"min_eigenvalue": min(mins)}, {"eigenvalue": 0.0})


def properness_check(triple: LyapunovTriple, radii: Sequence[float] = tuple(np.linspace(0.1, 4.0, 12)),
                     n_rays: int = 8) -> AnalysisReport:
    """``V`` strictly increases along ``n_rays`` rays out of the equilibrium."""
    ok = True
    worst = math.inf
    for j in range(n_rays):
        th = 2 * math.pi * j / n_rays
        vals = [lyapunov_value(triple, triple.x0 + r * math.cos(th), triple.y0 + r * math.sin(th)) for r in radii]
        inc = float(np.min(np.diff(vals)))
        worst = min(worst, inc)
        ok &= inc > 0
    return AnalysisReport("lyapunov_properness", ok, {"min_increment": worst}, {"increment": 0.0},
                          {"radii": list(radii), "rays": n_rays})


def lasalle_check(triple: LyapunovTriple, trajectory, vdot_tol: float = 1e-9, dist_tol: float = 1e-4,
                  window: int = 20) -> AnalysisReport:
    """Where ``|V'|`` stays below ``vdot_tol`` for ``window`` consecutive grid
    points the state must be near the equilibrium."""
    states = np.asarray(trajectory.states, dtype=float)
    vd = np.array([abs(triple.vdot_closed_form(y)) for _, y in states])
    eq = np.array([triple.x0, triple.y0])
    worst = 0.0
    run = 0
    for i, small in enumerate(vd <= vdot_tol):
        run = run + 1 if small else 0
        if run >= window:
            worst = max(worst, float(np.linalg.norm(states[i] - eq)))
    return AnalysisReport("lasalle", worst <= dist_tol, {"max_distance_on_quiet_segments": worst},
                          {"vdot": vdot_tol, "distance": dist_tol})


# --------------------------------------------------------------------------- #
# empirical global attraction


def gas_empirical(sys: SystemSpec, u_bar, N: int = 100, box=None, T: float = 200.0, tol: float = 1e-5,
                  seed: int = 0, cfg: IntegratorConfig | None = None,
                  reduction: LogReduction | None = None) -> AnalysisReport:
    """Integrate ``N`` uniform random starts in ``box`` under ``u = u_bar``.

    Each run's start is drawn from its own stream spawned from ``seed``. With
    ``reduction`` the runs are integrated in the reduced coordinates and
    mapped back before measuring the distance to the steady state.
    """
    box = np.asarray(box if box is not None else sys.sample_box, dtype=float)
    target = steady_state(sys, u_bar, sys.closed_form(u_bar) if sys.closed_form is not None
                          else box.mean(axis=1))
    streams = np.random.SeedSequence(seed).spawn(N)
    u = InputSignal.constant(u_bar, T)
    rows = []
    worst = 0.0
    count = 0
    for i, ss in enumerate(streams):
        z0 = np.random.default_rng(ss).uniform(box[:, 0], box[:, 1])
        try:
            if reduction is not None:
                traj = integrate(reduction.system, u, reduction.to_reduced(z0), T, cfg)
                zT = reduction.to_original(traj.final_state)
            else:
                zT = integrate(sys, u, z0, T, cfg).final_state
            dist = float(np.linalg.norm(zT - target))
            err = None
        except (IntegrationError, SteadyStateError, FloatingPointError) as exc:
            dist, err = math.inf, str(exc)
        conv = dist <= tol
        count += conv
        worst = max(worst, dist)
        rows.append({"seed": seed, "run": i, "initial_state": z0, "final_distance": dist,
                     "converged": conv, "error": err})
    return AnalysisReport(
        kind="gas",
        passed=count == N,
        metrics={"converged_fraction": count / N, "worst_final_distance": worst},
        tolerances={"final_distance": tol},
        details={"runs": rows, "box": box, "T": T, "u_bar": u_bar, "target": target,
                 "coordinates": "reduced" if reduction is not None else "original"},
    )
