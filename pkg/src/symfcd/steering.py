"""Closed-loop steering: an adapting sensor reads a spatial field at the
position produced by its own steering mechanism,

    z' = F(z, u),  u = pi I(t, r),    q' = Q(q, y[, X_t]),  y = h(z),  r = R(q),

optionally with a telegraph process ``X_t`` in the steering law.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics.integrate import DenseSolution, IntegratorConfig, StepStats, _solve_piece
from .numerics.steady import steady_state
from .report import AnalysisReport
from .signals import Transform

__all__ = [
    "FieldSpec",
    "NoiseProcess",
    "SteeringSpec",
    "ClosedLoopTrajectory",
    "FieldError",
    "simulate_closed_loop",
    "steering_invariance_experiment",
    "stochastic_steering_experiment",
    "gradient_steering",
    "run_and_tumble",
]


class FieldError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# fields


def _dot(k, r):
    return float(np.dot(np.atleast_1d(k), np.atleast_1d(r)))


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """An intensity ``I(t, r)`` and the pre-field constant ``I0``."""

    I: Callable[[float, np.ndarray], object]
    I0: object
    label: str = "field"

    def __call__(self, t, r):
        return self.I(t, r)

    @classmethod
    def constant(cls, value) -> "FieldSpec":
        return cls(lambda t, r: value, value, f"constant({value})")

    @classmethod
    def exponential(cls, amplitude: float, rate, I0: float) -> "FieldSpec":
        """``amplitude * exp(<rate, r>)``."""
        return cls(lambda t, r: amplitude * math.exp(_dot(rate, r)), I0,
                   f"exponential({amplitude}, {rate})")

    @classmethod
    def gaussian_bump(cls, base: float, height: float, center, width: float, I0: float) -> "FieldSpec":
        c = np.atleast_1d(np.asarray(center, dtype=float))

        def I(t, r):
            d = np.atleast_1d(r) - c
            return base + height * math.exp(-float(d @ d) / (2 * width ** 2))

        return cls(I, I0, f"gaussian_bump({base}, {height})")

    def modulated(self, fn: Callable[[float], float]) -> "FieldSpec":
        """The product ``fn(t) * I(t, r)``."""
        return FieldSpec(lambda t, r: fn(t) * self.I(t, r), self.I0, f"modulated({self.label})")

    def check(self, times, positions, contains) -> None:
        for t in times:
            for r in positions:
                if not contains(self.I(t, r)):
                    raise FieldError(f"field value at t={t}, r={r} leaves the input set")


# --------------------------------------------------------------------------- #
# noise


@dataclass(frozen=True, eq=False)
class NoiseProcess:
    """A two-state telegraph process ``X_t in {-1, +1}``.

    Switching happens at rate ``rate(y)``. Candidate times come from a
    Poisson process with rate ``ceiling`` and each carries a uniform; a
    candidate at ``t`` switches ``X`` iff ``U <= rate(y(t)) / ceiling``.
    The candidates and uniforms are a function of ``seed`` only, so a fixed
    seed fixes the sample ``omega`` regardless of the trajectory.
    """

    kind: str = "telegraph"
    seed: int = 0
    rate: Callable[[float], float] | None = None
    ceiling: float = 1.0
    initial: int = 1

    def __post_init__(self):
        if self.kind not in ("telegraph", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "telegraph" and (self.rate is None or not self.ceiling > 0):
            raise ValueError("telegraph noise needs a rate function and a positive ceiling")

    def candidates(self, T: float) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "none":
            return np.empty(0), np.empty(0)
        rng = np.random.default_rng(self.seed)
        times, t = [], 0.0
        while True:
            t += rng.exponential(1.0 / self.ceiling)
            if t >= T:
                break
            times.append(t)
        return np.array(times), rng.random(len(times))

    def with_seed(self, seed: int) -> "NoiseProcess":
        return NoiseProcess(self.kind, seed, self.rate, self.ceiling, self.initial)


# --------------------------------------------------------------------------- #
# steering


@dataclass(frozen=True, eq=False)
class SteeringSpec:
    """``q' = Q(q, y)`` (or ``Q(q, y, X)`` with noise), ``r = R(q)``.

    Deterministic steering needs ``Q(q0, y0) = 0``: the pre-adapted start is
    then a fixed point of the loop in a constant field.
    """

    Q: Callable
    R: Callable
    q0: Sequence[float]
    y0: float
    noise: NoiseProcess | None = None
    label: str = "steering"

    def __post_init__(self):
        q0 = np.atleast_1d(np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "q0", q0)
        if self.noise is None or self.noise.kind == "none":
            res = float(np.linalg.norm(np.asarray(self.Q(q0, self.y0), dtype=float)))
            if res > 1e-10:
                raise ValueError(f"Q(q0, y0) = {res:.3g} is not a steady state")

    @property
    def stochastic(self) -> bool:
        return self.noise is not None and self.noise.kind != "none"

    def qdot(self, q, y, X):
        if self.stochastic:
            return np.atleast_1d(np.asarray(self.Q(q, y, X), dtype=float))
        return np.atleast_1d(np.asarray(self.Q(q, y), dtype=float))

    def with_noise(self, noise: NoiseProcess | None) -> "SteeringSpec":
        return SteeringSpec(self.Q, self.R, self.q0, self.y0, noise, self.label)


def gradient_steering(y0: float) -> SteeringSpec:
    """``q' = y - y0``, ``r = q``: moves up the field while the output is high."""
    return SteeringSpec(lambda q, y: np.array([y - y0]), lambda q: q[0], [0.0], y0, label="gradient")


def run_and_tumble(y0: float, speed: float = 1.0, base_rate: float = 1.0, y_cap: float = 4.0,
                   seed: int = 0) -> SteeringSpec:
    """1-D run and tumble: ``r' = speed * X``, direction flips at ``base_rate * y / y0``."""
    noise = NoiseProcess("telegraph", seed, lambda y: base_rate * y / y0, base_rate * y_cap / y0, 1)
    return SteeringSpec(lambda q, y, X: np.array([speed * X]), lambda q: q[0], [0.0], y0, noise,
                        label="run_and_tumble")


# --------------------------------------------------------------------------- #
# simulation


@dataclass
class ClosedLoopTrajectory:
    times: np.ndarray
    z: np.ndarray
    q: np.ndarray
    r: np.ndarray
    y: np.ndarray
    u: np.ndarray
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        n, k = self.z.shape[1], self.q.shape[1]
        r = self.r.reshape(len(self.times), -1)
        u = self.u.reshape(len(self.times), -1)
        header = (["time"] + [f"z{i + 1}" for i in range(n)] + [f"q{i + 1}" for i in range(k)]
                  + [f"r{i + 1}" for i in range(r.shape[1])] + ["y1"] + [f"u{i + 1}" for i in range(u.shape[1])])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, t in enumerate(self.times):
                row = [t, *self.z[i], *self.q[i], *r[i], self.y[i], *u[i]]
                w.writerow([repr(float(v)) for v in row])


def simulate_closed_loop(sys, steer: SteeringSpec, field_: FieldSpec, pi: Transform | None = None,
                         T: float = 30.0, cfg: IntegratorConfig | None = None, n_grid: int = 2001,
                         noise: NoiseProcess | None = None) -> ClosedLoopTrajectory:
    """Integrate the loop from ``z = sigma(pi I0)``, ``q = q0``.

    The sensed input is ``pi I(t, R(q))``. With noise, the horizon is cut at
    every thinning candidate, the output is read there and the switch
    decided before integration resumes.
    """
    cfg = cfg or IntegratorConfig()
    pi = pi or Transform.identity()
    noise = noise if noise is not None else steer.noise
    stochastic = noise is not None and noise.kind != "none"
    n = sys.n
    pI0 = pi(field_.I0)
    guess = sys.closed_form(pI0) if sys.closed_form is not None else np.mean(sys.sample_box, axis=1)
    z0 = steady_state(sys, pI0, guess)
    w0 = np.concatenate([z0, steer.q0])
    contains = sys.in_input_set

    def in_domain(w):
        return sys.in_domain(w[:n])

    def sensed(t, w):
        v = pi(field_.I(t, steer.R(w[n:])))
        if not contains(v):
            raise FieldError(f"sensed input {v!r} at t={t:.6g} leaves the input set of {sys.name}")
        return v

    def make_rhs(X):
        def rhs(t, w):
            z, q = w[:n], w[n:]
            u = sensed(t, w)
            return np.concatenate([np.asarray(sys.F(z, u), dtype=float), steer.qdot(q, float(sys.h(z)), X)])
        return rhs

    if stochastic:
        cand_t, cand_u = noise.candidates(T)
    else:
        cand_t, cand_u = np.empty(0), np.empty(0)
    edges = [0.0, *cand_t.tolist(), float(T)]
    X = noise.initial if stochastic else None
    sol = DenseSolution()
    stats = StepStats()
    w = w0
    h_hint = None
    events = []
    for j, (a, b) in enumerate(zip(edges, edges[1:])):
        ts, ws, fs, h_hint = _solve_piece(make_rhs(X), a, b, w, cfg, in_domain, stats, h_hint)
        sol.add_piece(ts, ws, fs)
        w = ws[-1]
        if stochastic and j < len(cand_t):
            y = float(sys.h(w[:n]))
            lam = float(noise.rate(y))
            if lam > noise.ceiling * (1 + 1e-12) or lam < 0:
                raise FieldError(f"switch rate {lam:.6g} outside [0, ceiling={noise.ceiling}] at t={b:.6g}")
            if cand_u[j] <= lam / noise.ceiling:
                X = -X
                events.append(float(b))
    grid = np.linspace(0.0, T, n_grid)
    W = sol.evaluate(grid)
    Z, Qs = W[:, :n], W[:, n:]
    R = np.array([np.asarray(steer.R(q), dtype=float) for q in Qs])
    Y = np.array([float(sys.h(z)) for z in Z])
    U = np.array([np.asarray(sensed(t, wi), dtype=float) for t, wi in zip(grid, W)])
    meta = {"steps": stats.as_dict(), "transform": pi.describe(), "field": field_.label,
            "seed": noise.seed if stochastic else None, "candidates": len(cand_t), **cfg.as_dict()}
    return ClosedLoopTrajectory(grid, Z, Qs, R, Y, U, events, meta)


def _sup(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _pair_metrics(base, moved, pi):
    pu = np.array([np.asarray(pi(u), dtype=float) for u in base.u])
    return {
        "r_deviation": _sup(base.r, moved.r),
        "y_deviation": _sup(base.y, moved.y),
        "q_deviation": _sup(base.q, moved.q),
        "u_relation_error": _sup(pu, moved.u),
    }


def steering_invariance_experiment(sys, steer: SteeringSpec, field_: FieldSpec, pi: Transform,
                                   T: float = 30.0, tol: float = 1e-6, cfg: IntegratorConfig | None = None,
                                   floor: float | None = None) -> AnalysisReport:
    """Run the loop in ``I`` and in ``pi I`` and compare ``r``, ``y``, ``q``.

    PASS requires all deviations (and ``|u~ - pi u|``) within ``tol``. When a
    ``floor`` is given the experiment is a negative control instead: it
    passes iff the ``r`` deviation exceeds the floor.
    """
    base = simulate_closed_loop(sys, steer, field_, Transform.identity(), T, cfg)
    moved = simulate_closed_loop(sys, steer, field_, pi, T, cfg)
    m = _pair_metrics(base, moved, pi)
    if floor is None:
        ok = all(v <= tol for v in m.values())
        tols = {k: tol for k in m}
    else:
        ok = m["r_deviation"] > floor
        tols = {"r_deviation_floor": floor}
    return AnalysisReport(
        kind="steering",
        passed=ok,
        metrics=m,
        tolerances=tols,
        details={"system": sys.name, "transform": pi.describe(), "field": field_.label, "T": T,
                 "r_end": float(np.ravel(base.r)[-1])},
        notes=["negative control: passes when the paths diverge"] if floor is not None else [],
        artifacts={"base": base, "transformed": moved},
    )


def _stats(runs) -> dict:
    disp = np.array([float(np.ravel(tr.r)[-1] - np.ravel(tr.r)[0]) for tr in runs])
    return {"mean_displacement": float(disp.mean()), "msd": float(np.mean(disp ** 2))}


def stochastic_steering_experiment(sys, steer: SteeringSpec, field_: FieldSpec, pi: Transform,
                                   T: float = 30.0, seeds: Sequence[int] = tuple(range(32)),
                                   tol: float = 1e-6, cfg: IntegratorConfig | None = None,
                                   paired: bool = True) -> AnalysisReport:
    """Per seed, run the loop in ``I`` and ``pi I`` on the same sample path.

    With ``paired=False`` the transformed run uses a different seed (the
    next one in ``seeds``, cyclically), a negative control where the paths
    are expected to separate.
    """
    if not steer.stochastic:
        raise ValueError("stochastic experiment needs steering with a noise process")
    rows = []
    base_runs, moved_runs = [], []
    seeds = list(seeds)
    for i, s in enumerate(seeds):
        other = s if paired else seeds[(i + 1) % len(seeds)]
        if not paired and other == s:
            other = s + 1
        b = simulate_closed_loop(sys, steer, field_, Transform.identity(), T, cfg, noise=steer.noise.with_seed(s))
        m = simulate_closed_loop(sys, steer, field_, pi, T, cfg, noise=steer.noise.with_seed(other))
        base_runs.append(b)
        moved_runs.append(m)
        met = _pair_metrics(b, m, pi)
        rows.append({"seed": s, "seed_transformed": other, "events": len(b.events),
                     "events_transformed": len(m.events), "same_events": b.events == m.events, **met})
    sb, sm = _stats(base_runs), _stats(moved_runs)
    worst = max(r["r_deviation"] for r in rows)
    stat_err = max(abs(sb[k] - sm[k]) for k in sb)
    if paired:
        ok = worst <= tol and stat_err <= tol
    else:
        ok = worst > tol
    return AnalysisReport(
        kind="steering_stochastic",
        passed=ok,
        metrics={"max_r_deviation": worst, "statistic_error": stat_err, "stats": sb, "stats_transformed": sm},
        tolerances={"r_deviation": tol, "statistic": tol},
        details={"seeds": seeds, "paired": paired, "rows": rows, "T": T},
        notes=[] if paired else ["negative control: passes when unpaired paths diverge"],
        artifacts={f"seed{s}_{tag}": tr for s, b, m in zip(seeds, base_runs, moved_runs)
                   for tag, tr in (("base", b), ("transformed", m))},
    )
