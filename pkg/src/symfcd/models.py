"""System abstraction and the registry of benchmark adapting circuits.

Every built-in model is written literally: ``F`` is the right-hand side as an
explicit expression, and the input-affine decomposition ``g0 + w g1`` is
written separately so the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from .numerics.dual import exp, log, pack, real

__all__ = [
    "Interval",
    "Box",
    "SystemSpec",
    "ModelError",
    "MODEL_NAMES",
    "registry_get",
    "steady_state_closed_form",
    "list_models",
    "linear_system",
]


class ModelError(ValueError):
    """Unknown model, bad parameter, or an input outside the input set."""


@dataclass(frozen=True)
class Interval:
    lo: float = -math.inf
    hi: float = math.inf
    lo_open: bool = True
    hi_open: bool = True

    def contains(self, v) -> bool:
        v = real(v)
        if not math.isfinite(v):
            return False
        if v < self.lo or (self.lo_open and v == self.lo):
            return False
        if v > self.hi or (self.hi_open and v == self.hi):
            return False
        return True

    def __str__(self) -> str:
        left = "(" if self.lo_open else "["
        right = ")" if self.hi_open else "]"
        return f"{left}{self.lo:g}, {self.hi:g}{right}"


REAL = Interval()
POSITIVE = Interval(lo=0.0)


@dataclass(frozen=True)
class Box:
    """Product of per-coordinate intervals."""

    intervals: tuple[Interval, ...]

    @classmethod
    def of(cls, *intervals: Interval) -> "Box":
        return cls(tuple(intervals))

    @classmethod
    def real(cls, n: int) -> "Box":
        return cls((REAL,) * n)

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def contains(self, z) -> bool:
        z = np.atleast_1d(np.asarray(z, dtype=object if _has_dual(z) else float))
        if len(z) != self.dim:
            return False
        return all(iv.contains(v) for iv, v in zip(self.intervals, z))

    def __str__(self) -> str:
        return " x ".join(str(iv) for iv in self.intervals)


def _has_dual(z) -> bool:
    try:
        return any(not isinstance(v, (int, float, np.floating, np.integer)) for v in np.ravel(z))
    except TypeError:
        return True


Field = Callable[..., np.ndarray]


@dataclass(frozen=True)
class SystemSpec:
    """An input-output system ``z' = F(z, u)``, ``y = h(z)``.

    ``affine_parts`` holds ``(g0, g1, ..., gm)`` such that
    ``F(z, u) = g0(z) + sum_i w_i g_i(z)`` with ``w = input_map(u)``; for most
    models ``input_map`` is the identity, for the log-linear model it is ``ln``.
    ``sample_box`` and ``input_box`` are bounded regions inside the domain and
    input set used when drawing sample grids.
    """

    name: str
    n: int
    m: int
    q: int
    domain: Box
    input_set: Box
    F: Field
    h: Field
    params: Mapping[str, float] = field(default_factory=dict)
    affine_parts: tuple[Field, ...] | None = None
    input_map: Callable | None = None
    sample_box: tuple[tuple[float, float], ...] = ()
    input_box: tuple[tuple[float, float], ...] = ()
    closed_form: Callable | None = None
    equations: str = ""
    provenance: str = ""

    def in_domain(self, z) -> bool:
        return self.domain.contains(z)

    def in_input_set(self, u) -> bool:
        return self.input_set.contains(np.atleast_1d(u))

    def output(self, z):
        return self.h(z)

    def drift(self, z):
        return self.affine_parts[0](z)

    def affine_input(self, u):
        """The coefficient vector ``w`` multiplying ``g1..gm``."""
        w = self.input_map(u) if self.input_map is not None else u
        return np.atleast_1d(w)

    def affine_eval(self, z, u):
        if self.affine_parts is None:
            raise ModelError(f"{self.name} has no input-affine decomposition")
        w = self.affine_input(u)
        out = self.affine_parts[0](z)
        for wi, gi in zip(w, self.affine_parts[1:]):
            out = out + wi * gi(z)
        return out

    def sample_states(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = np.array(self.sample_box, dtype=float).T
        return lo + (hi - lo) * rng.random((count, self.n))

    def sample_inputs(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = np.array(self.input_box, dtype=float).T
        vals = lo + (hi - lo) * rng.random((count, self.m))
        return vals[:, 0] if self.m == 1 else vals

    def adapted_output(self) -> float | None:
        """The adaptation value y0 shared by every steady state, if any."""
        return _ADAPTED.get(self.name.split("(")[0], lambda p: None)(self.params)


def _vec(*components) -> np.ndarray:
    return pack(list(components))


# --------------------------------------------------------------------------- #
# parameters

DEFAULTS = {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0, "mu": 1.0, "y0": 1.0}

_USES = {
    "fig1a": ("alpha", "beta", "gamma", "mu", "y0"),
    "fig1b": ("alpha", "beta", "gamma", "mu", "y0"),
    "fig1c": ("alpha", "beta", "gamma", "y0"),
    "fig1d": ("alpha", "beta", "gamma", "y0"),
    "fig2a": ("alpha", "beta", "gamma", "delta"),
    "fig2b": ("alpha", "beta", "gamma", "delta"),
    "rotation_ifb": ("gamma", "y0"),
    "linear_ff": (),
    "imp_fb": ("alpha", "beta", "gamma", "delta"),
}

MODEL_NAMES = tuple(_USES)

_ADAPTED = {
    "fig1a": lambda p: p["y0"],
    "fig1b": lambda p: p["y0"],
    "fig1c": lambda p: p["y0"],
    "fig1d": lambda p: p["y0"],
    "fig2a": lambda p: p["beta"] * p["delta"] / (p["alpha"] * p["gamma"]),
    "fig2b": lambda p: p["beta"] * p["delta"] / (p["alpha"] * p["gamma"]),
    "rotation_ifb": lambda p: p["y0"],
    "linear_ff": lambda p: 0.0,
    "imp_fb": lambda p: p["beta"] * p["delta"] / (p["alpha"] * p["gamma"]),
}


def _resolve(name: str, params: Mapping[str, float] | None) -> dict[str, float]:
    params = dict(params or {})
    uses = _USES[name]
    unknown = set(params) - set(uses)
    if unknown:
        raise ModelError(f"unknown parameter(s) for {name}: {sorted(unknown)}")
    out = {k: float(params.get(k, DEFAULTS[k])) for k in uses}
    for k, v in out.items():
        if not (v > 0 and math.isfinite(v)):
            raise ModelError(f"parameter {k} of {name} must be positive, got {v}")
    return out


# --------------------------------------------------------------------------- #
# integral feedback


def _fig1a(p, log_input: bool) -> SystemSpec:
    a, b, g, mu, y0 = p["alpha"], p["beta"], p["gamma"], p["mu"], p["y0"]
    pre = log if log_input else (lambda u: u)

    def F(z, u):
        x, y = z
        return _vec(a * (y - y0), b * pre(u) - mu * x - g * y)

    def g0(z):
        x, y = z
        return _vec(a * (y - y0), -mu * x - g * y)

    def g1(z):
        return _vec(0.0, b)

    def sigma(u):
        return np.array([(b * pre(u) - g * y0) / mu, y0])

    name = "fig1b" if log_input else "fig1a"
    rhs = "ln u" if log_input else "u"
    return SystemSpec(
        name=name,
        n=2,
        m=1,
        q=1,
        domain=Box.real(2),
        input_set=Box.of(POSITIVE if log_input else REAL),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        input_map=log if log_input else None,
        sample_box=((-5.0, 5.0), (-5.0, 5.0)),
        input_box=((0.1, 10.0),) if log_input else ((-5.0, 5.0),),
        closed_form=sigma,
        equations=f"x' = alpha (y - y0);  y' = beta {rhs} - mu x - gamma y;  out = y",
        provenance="log-linear integral feedback" if log_input
        else "linear integral feedback",
    )


def _fig1c(p) -> SystemSpec:
    a, b, g, y0 = p["alpha"], p["beta"], p["gamma"], p["y0"]

    def F(z, u):
        x, y = z
        return _vec(a * x * (y - y0), b * u / x - g * y)

    def g0(z):
        x, y = z
        return _vec(a * x * (y - y0), -g * y)

    def g1(z):
        x, y = z
        return _vec(0.0 * x, b / x)

    return SystemSpec(
        name="fig1c",
        n=2,
        m=1,
        q=1,
        domain=Box.of(POSITIVE, REAL),
        input_set=Box.of(POSITIVE),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        sample_box=((0.1, 10.0), (-5.0, 5.0)),
        input_box=((0.1, 10.0),),
        closed_form=lambda u: np.array([b * u / (g * y0), y0]),
        equations="x' = alpha x (y - y0);  y' = beta u / x - gamma y;  out = y",
        provenance="nonlinear integral feedback, ratio form",
    )


def _fig1d(p) -> SystemSpec:
    a, b, g, y0 = p["alpha"], p["beta"], p["gamma"], p["y0"]

    def F(z, u):
        x, y = z
        return _vec(a * x * (y0 - y), b * u * x - g * y)

    def g0(z):
        x, y = z
        return _vec(a * x * (y0 - y), -g * y)

    def g1(z):
        x, y = z
        return _vec(0.0 * x, b * x)

    return SystemSpec(
        name="fig1d",
        n=2,
        m=1,
        q=1,
        domain=Box.of(POSITIVE, REAL),
        input_set=Box.of(POSITIVE),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        sample_box=((0.1, 10.0), (-5.0, 5.0)),
        input_box=((0.1, 10.0),),
        closed_form=lambda u: np.array([g * y0 / (b * u), y0]),
        equations="x' = alpha x (y0 - y);  y' = beta u x - gamma y;  out = y",
        provenance="nonlinear integral feedback, product form",
    )


# --------------------------------------------------------------------------- #
# incoherent feedforward


def _fig2a(p) -> SystemSpec:
    a, b, g, d = p["alpha"], p["beta"], p["gamma"], p["delta"]

    def F(z, u):
        x, y = z
        return _vec(a * u - d * x, b * u / x - g * y)

    def g0(z):
        x, y = z
        return _vec(-d * x, -g * y)

    def g1(z):
        x, y = z
        return _vec(a + 0.0 * x, b / x)

    return SystemSpec(
        name="fig2a",
        n=2,
        m=1,
        q=1,
        domain=Box.of(POSITIVE, REAL),
        input_set=Box.of(POSITIVE),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        sample_box=((0.1, 10.0), (-5.0, 5.0)),
        input_box=((0.1, 10.0),),
        closed_form=lambda u: np.array([a * u / d, b * d / (a * g)]),
        equations="x' = alpha u - delta x;  y' = beta u / x - gamma y;  out = y",
        provenance="incoherent feedforward loop",
    )


def _fig2b(p) -> SystemSpec:
    a, b, g, d = p["alpha"], p["beta"], p["gamma"], p["delta"]

    def F(z, u):
        x, y = z
        return _vec(a * u - d * x, b * u - g * x * y)

    def g0(z):
        x, y = z
        return _vec(-d * x, -g * x * y)

    def g1(z):
        return _vec(a, b)

    return SystemSpec(
        name="fig2b",
        n=2,
        m=1,
        q=1,
        domain=Box.of(POSITIVE, REAL),
        input_set=Box.of(POSITIVE),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        sample_box=((0.1, 10.0), (-5.0, 5.0)),
        input_box=((0.1, 10.0),),
        closed_form=lambda u: np.array([a * u / d, b * d / (a * g)]),
        equations="x' = alpha u - delta x;  y' = beta u - gamma x y;  out = y",
        provenance="'sniffer' incoherent feedforward loop",
    )


# --------------------------------------------------------------------------- #
# vector-input, linear and recast systems


def _rotation_ifb(p, n: int) -> SystemSpec:
    g, y0 = p["gamma"], p["y0"]

    def F(z, u):
        x, y = z[:n], z[n]
        u = np.atleast_1d(u)
        s = sum(ui * xi for ui, xi in zip(u, x))
        return pack([(y - y0) * xi for xi in x] + [s - g * y])

    def g0(z):
        x, y = z[:n], z[n]
        return pack([(y - y0) * xi for xi in x] + [-g * y])

    def make_gi(i):
        def gi(z):
            return pack([0.0] * n + [z[i]])

        return gi

    def sigma(u):
        # equilibria form the hyperplane <u, x> = gamma y0; take its
        # minimum-norm point, which is carried along by rotations
        u = np.atleast_1d(np.asarray(u, dtype=float))
        nrm = float(u @ u)
        if nrm == 0.0:
            raise ModelError("rotation_ifb has no equilibrium selection for u = 0")
        return np.concatenate([g * y0 * u / nrm, [y0]])

    def h(z):
        return z[n]

    return SystemSpec(
        name=f"rotation_ifb({n})",
        n=n + 1,
        m=n,
        q=1,
        domain=Box.real(n + 1),
        input_set=Box.real(n),
        F=F,
        h=h,
        params=MappingProxyType(p),
        affine_parts=(g0, *[make_gi(i) for i in range(n)]),
        sample_box=((-2.0, 2.0),) * (n + 1),
        input_box=((-2.0, 2.0),) * n,
        closed_form=sigma,
        equations="x' = (y - y0) x;  y' = <u, x> - gamma y;  out = y",
        provenance="vector integral feedback with rotation symmetry",
    )


def _linear_ff(p) -> SystemSpec:
    def F(z, u):
        x, y = z
        return _vec(-x + u, -x - y + u)

    def g0(z):
        x, y = z
        return _vec(-x, -x - y)

    def g1(z):
        return _vec(1.0, 1.0)

    return SystemSpec(
        name="linear_ff",
        n=2,
        m=1,
        q=1,
        domain=Box.real(2),
        input_set=Box.of(REAL),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        sample_box=((-5.0, 5.0), (-5.0, 5.0)),
        input_box=((-5.0, 5.0),),
        closed_form=lambda u: np.array([u, 0.0]),
        equations="x' = -x + u;  y' = -x - y + u;  out = y",
        provenance="linear feedforward system with an integral feedback recast",
    )


def _imp_fb(p) -> SystemSpec:
    a, b, g, d = p["alpha"], p["beta"], p["gamma"], p["delta"]
    k = a * g / b

    def F(z, u):
        x, y = z
        return _vec(x * (d - k * y), b * u * x * exp(-(a / b) * y) - g * y)

    def g0(z):
        x, y = z
        return _vec(x * (d - k * y), -g * y)

    def g1(z):
        x, y = z
        return _vec(0.0 * x, b * x * exp(-(a / b) * y))

    ybar = b * d / (a * g)

    return SystemSpec(
        name="imp_fb",
        n=2,
        m=1,
        q=1,
        domain=Box.of(POSITIVE, REAL),
        input_set=Box.of(POSITIVE),
        F=F,
        h=_output_y,
        params=MappingProxyType(p),
        affine_parts=(g0, g1),
        sample_box=((0.1, 10.0), (-5.0, 5.0)),
        input_box=((0.1, 10.0),),
        closed_form=lambda u: np.array([g * ybar * math.exp(a * ybar / b) / (b * u), ybar]),
        equations="x' = x (delta - (alpha gamma / beta) y);  "
        "y' = beta u x exp(-(alpha/beta) y) - gamma y;  out = y",
        provenance="integral feedback recast of the fig2a feedforward loop",
    )


def linear_system(A, b, c, name: str = "linear") -> SystemSpec:
    """``x' = A x + b u``, ``y = c x`` on ``R^n`` with scalar input."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    c = np.asarray(c, dtype=float).reshape(-1)
    n = len(b)
    if A.shape != (n, n) or c.shape != (n,):
        raise ModelError("linear_system needs A (n x n), b (n), c (n)")

    def g0(z):
        return pack([sum(A[i, j] * z[j] for j in range(n)) for i in range(n)])

    def g1(z):
        return pack([b[i] + 0.0 * z[0] for i in range(n)])

    def F(z, u):
        w = np.atleast_1d(u)[0] if np.ndim(u) else u
        return g0(z) + w * g1(z)

    def h(z):
        return sum(c[i] * z[i] for i in range(n))

    closed = None
    if abs(np.linalg.det(A)) > 1e-12:
        Ainv_b = np.linalg.solve(A, b)
        closed = lambda u: -Ainv_b * float(np.atleast_1d(u)[0])  # noqa: E731

    return SystemSpec(
        name=name,
        n=n,
        m=1,
        q=1,
        domain=Box.real(n),
        input_set=Box.of(REAL),
        F=F,
        h=h,
        params=MappingProxyType({}),
        affine_parts=(g0, g1),
        sample_box=((-5.0, 5.0),) * n,
        input_box=((-5.0, 5.0),),
        closed_form=closed,
        equations="x' = A x + b u;  out = c x",
        provenance="user-supplied linear system",
    )


def _output_y(z):
    return z[1]


def _parse_name(name: str) -> tuple[str, int | None]:
    name = name.strip()
    if "(" in name and name.endswith(")"):
        base, arg = name[:-1].split("(", 1)
        try:
            return base, int(arg)
        except ValueError:
            raise ModelError(f"bad model argument in {name!r}") from None
    return name, None


def registry_get(name: str, params: Mapping[str, float] | None = None) -> SystemSpec:
    """Build a registry model by name with optional parameter overrides.

    ``rotation_ifb`` takes its vector dimension as ``rotation_ifb(n)``
    (default 3). ``linear_ff`` and ``imp_fb`` also accept their equation
    labels ``linear_ff(9)`` / ``imp_fb(16)``.
    """
    base, arg = _parse_name(name)
    if base not in _USES:
        raise ModelError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
    p = _resolve(base, params)
    if base == "fig1a":
        return _fig1a(p, log_input=False)
    if base == "fig1b":
        return _fig1a(p, log_input=True)
    if base == "fig1c":
        return _fig1c(p)
    if base == "fig1d":
        return _fig1d(p)
    if base == "fig2a":
        return _fig2a(p)
    if base == "fig2b":
        return _fig2b(p)
    if base == "rotation_ifb":
        n = 3 if arg is None else arg
        if n < 1:
            raise ModelError("rotation_ifb needs n >= 1")
        return _rotation_ifb(p, n)
    if base == "linear_ff":
        if arg not in (None, 9):
            raise ModelError("linear_ff only exists as linear_ff(9)")
        return _linear_ff(p)
    if arg not in (None, 16):
        raise ModelError("imp_fb only exists as imp_fb(16)")
    return _imp_fb(p)


def steady_state_closed_form(sys: SystemSpec, u) -> np.ndarray:
    """Analytic steady state for a registry model at constant input ``u``."""
    if sys.closed_form is None:
        raise ModelError(f"{sys.name} has no closed-form steady state")
    if not sys.in_input_set(u):
        raise ModelError(f"input {u!r} outside the input set {sys.input_set} of {sys.name}")
    z = np.asarray(sys.closed_form(u), dtype=float)
    if not sys.in_domain(z):
        raise ModelError(f"steady state {z} for input {u!r} lies outside the domain of {sys.name}")
    return z


def list_models() -> str:
    lines = []
    for name in MODEL_NAMES:
        sys = registry_get(name)
        lines.append(f"{sys.name:<16} {sys.provenance}")
        lines.append(f"{'':<16} {sys.equations}")
        lines.append(
            f"{'':<16} state {sys.domain}, input {sys.input_set}, params "
            + (", ".join(f"{k}={v:g}" for k, v in sys.params.items()) or "none")
        )
    return "\n".join(lines)


SIX_MODELS: Sequence[str] = ("fig1a", "fig1b", "fig1c", "fig1d", "fig2a", "fig2b")
