"""Equivariance families: state maps ``rho`` paired with input maps ``pi``
satisfying

    F(rho(z), pi u) = rho'(z) F(z, u),    h(rho(z)) = h(z).

Candidates are checked numerically on sample grids. The two structural
classifications (ratio form ``G(u^b x^m, y)`` and affine form
``G(m x + b u, y)``) return the only possible families for those forms
together with a checker for the remaining condition on the ``x``-equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .numerics.calculus import jacobian
from .numerics.dual import pack, real
from .numerics.steady import steady_state
from .report import AnalysisReport
from .signals import Transform

__all__ = [
    "EquivarianceCandidate",
    "SymmetryFamily",
    "P_GRID",
    "standard_grid",
    "verify_equivariance",
    "classify_ratio_form",
    "classify_affine_form",
    "log_shift_candidate",
    "translation_candidate",
    "scaling_candidate",
    "rotation_lift_candidate",
    "linear_shift_candidate",
    "identity_candidate",
    "interlace_check",
    "default_family",
    "candidate_from_config",
    "EQUIV_TOL",
]

EQUIV_TOL = 1e-8
P_GRID = (1 / 8, 1 / 3, 1 / 2, 1.0, 2.0, 3.0, 8.0)

PROVENANCES = ("lemma31", "lemma32", "linear_shift", "log_shift", "rotation_lift", "custom")


class EquivarianceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EquivarianceCandidate:
    """A state map ``rho`` paired with an input transform ``pi``.

    ``jac`` is optional; without it the Jacobian comes from forward-mode
    differentiation of ``rho``.
    """

    pi: Transform
    rho: Callable
    provenance: str = "custom"
    jac: Callable | None = None
    label: str = ""
    param: object = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise EquivarianceError(f"unknown provenance {self.provenance!r}")

    def __call__(self, z) -> np.ndarray:
        return np.asarray(real(self.rho(np.asarray(z, dtype=float))), dtype=float)

    def jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(z), dtype=float)
        return jacobian(self.rho, z)

    def describe(self) -> str:
        return self.label or f"{self.provenance}[{self.pi.describe()}]"


def identity_candidate() -> EquivarianceCandidate:
    return EquivarianceCandidate(Transform.identity(), lambda z: z, "custom", label="identity")


# --------------------------------------------------------------------------- #
# sample grids


def sobol(box: Sequence[tuple[float, float]], count: int, seed: int = 0) -> np.ndarray:
    """``count`` scrambled Sobol points in an axis-aligned box."""
    box = np.asarray(box, dtype=float)
    sampler = qmc.Sobol(d=len(box), scramble=True, seed=seed)
    pts = sampler.random_base2(max(1, math.ceil(math.log2(count))))[:count]
    return qmc.scale(pts, box[:, 0], box[:, 1])


def standard_grid(sys, n_states: int = 200, n_inputs: int = 10, seed: int = 0,
                  state_box=None, input_box=None):
    """(states, inputs) for equivariance checks; every state is paired with
    every input."""
    states = sobol(state_box or sys.sample_box, n_states, seed)
    inputs = sobol(input_box or sys.input_box, n_inputs, seed + 1)
    if sys.m == 1:
        inputs = inputs[:, 0]
    return states, inputs


# --------------------------------------------------------------------------- #
# verification


def verify_equivariance(sys, cand: EquivarianceCandidate, samples=None, tol: float = EQUIV_TOL) -> AnalysisReport:
    """Residuals of the equivariance identities over ``states x inputs``.

    ``pde_residual`` is ``max ||F(rho z, pi u) - rho'(z) F(z, u)|| / (1 + ||F(z, u)||)``
    and ``output_residual`` is ``max |h(rho z) - h(z)|``.
    """
    states, inputs = samples if samples is not None else standard_grid(sys)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    pde = 0.0
    out = 0.0
    worst = None
    for z in states:
        rz = cand(z)
        if not sys.in_domain(rz):
            raise EquivarianceError(f"rho maps {z} to {rz}, outside the domain of {sys.name}")
        J = cand.jacobian(z)
        out = max(out, abs(float(real(sys.h(rz))) - float(real(sys.h(z)))))
        for u in inputs:
            pu = cand.pi(u)
            Fz = np.asarray(sys.F(z, u), dtype=float)
            lhs = np.asarray(sys.F(rz, pu), dtype=float)
            r = float(np.linalg.norm(lhs - J @ Fz) / (1.0 + np.linalg.norm(Fz)))
            if not math.isfinite(r):
                r = math.inf
            if r > pde:
                pde = r
                worst = (z, u)
    details = {"n_states": len(states), "n_inputs": len(inputs), "candidate": cand.describe()}
    if worst is not None:
        details["worst_state"], details["worst_input"] = worst
    return AnalysisReport(
        kind="equivariance",
        passed=pde <= tol and out <= tol,
        metrics={"pde_residual": pde, "output_residual": out},
        tolerances={"pde_residual": tol, "output_residual": tol},
        details=details,
    )


# --------------------------------------------------------------------------- #
# families


@dataclass(eq=False)
class SymmetryFamily:
    """A parameterized set of candidates, ``p -> EquivarianceCandidate``.

    ``condition`` (if present) evaluates the remaining hypothesis of the
    structural classification for one ``p`` and returns its residual.
    """

    kind: str
    generator: Callable[[object], EquivarianceCandidate] | None
    condition: Callable[[object], float] | None = None
    identity_param: object = None
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def candidate(self, p) -> EquivarianceCandidate:
        if self.generator is None:
            raise EquivarianceError("the empty family has no candidates")
        return self.generator(p)

    def check_condition(self, p_grid: Sequence = P_GRID, tol: float = EQUIV_TOL) -> AnalysisReport:
        """Confirm the family: the extra condition must hold for every ``p``."""
        if self.condition is None:
            return AnalysisReport("family_condition", True, notes=["no extra condition"])
        res = {float(p): float(self.condition(p)) for p in p_grid}
        worst = max(res.values())
        return AnalysisReport(
            kind="family_condition",
            passed=worst <= tol,
            metrics={"max_residual": worst, "per_p": res},
            tolerances={"residual": tol},
            details={"family": self.kind, **self.meta},
        )

    def verify(self, sys, p_grid: Sequence = P_GRID, samples=None, tol: float = EQUIV_TOL) -> AnalysisReport:
        samples = samples if samples is not None else standard_grid(sys)
        per_p = {}
        ok = True
        worst = 0.0
        for p in p_grid:
            rep = verify_equivariance(sys, self.candidate(p), samples, tol)
            per_p[str(p)] = rep.metrics
            ok &= rep.passed
            worst = max(worst, rep.metrics["pde_residual"], rep.metrics["output_residual"])
        return AnalysisReport(
            kind="equivariance_family",
            passed=ok,
            metrics={"max_residual": worst, "per_p": per_p},
            tolerances={"residual": tol},
            details={"family": self.kind, "system": sys.name, "p_grid": list(p_grid)},
        )

    def compose_residual(self, p, q, states) -> float:
        """``max |rho_p(rho_q z) - rho_{p*q}(z)|`` (``p+q`` for translations)."""
        combined = p * q if self.kind == "scalings" else p + q
        rp, rq, rpq = self.candidate(p), self.candidate(q), self.candidate(combined)
        return max(float(np.max(np.abs(rp(rq(z)) - rpq(z)))) for z in np.atleast_2d(states))


def scaling_candidate(p: float, exponent: float, provenance: str = "lemma31") -> EquivarianceCandidate:
    """``pi = scale(p)``, ``rho(x, y) = (p**exponent * x, y)``."""
    if not p > 0:
        raise EquivarianceError("scaling parameter must be positive")
    c = float(p) ** exponent

    def rho(z):
        return _with_x(z, c * z[0])

    J = np.diag([c, 1.0])
    return EquivarianceCandidate(Transform.scale(p), rho, provenance, jac=lambda z: J,
                                 label=f"x -> {c:.6g} x under scale({p:g})", param=p)


def translation_candidate(p: float, shift_per_p: float, provenance: str = "lemma32") -> EquivarianceCandidate:
    """``pi = translate(p)``, ``rho(x, y) = (x + shift_per_p * p, y)``."""
    s = shift_per_p * float(p)

    def rho(z):
        return _with_x(z, z[0] + s)

    J = np.eye(2)
    return EquivarianceCandidate(Transform.translate(p), rho, provenance, jac=lambda z: J,
                                 label=f"x -> x + {s:.6g} under translate({p:g})", param=p)


def _with_x(z, x_new):
    return pack([x_new, *list(z[1:])])


def _grid_xyu(box, count=200, seed=0):
    return sobol(box, count, seed)


def _injective_on_samples(G, s_samples, y_samples) -> bool:
    """``G(., y)`` strictly monotone along sorted ``s`` for each sampled ``y``."""
    s = np.sort(np.asarray(s_samples, dtype=float))
    for y in y_samples:
        vals = np.array([float(real(G(si, y))) for si in s])
        d = np.diff(vals)
        if not (np.all(d > 0) or np.all(d < 0)):
            return False
    return True


def classify_ratio_form(beta_exp: float, mu_exp: float, f: Callable, G: Callable | None = None,
                        box=((0.1, 10.0), (-5.0, 5.0), (0.1, 10.0))) -> SymmetryFamily:
    """Symmetries of ``x' = f(x, y, u)``, ``y' = G(u**beta_exp * x**mu_exp, y)``.

    The only candidates are fold changes ``u -> p u`` with
    ``rho(x, y) = (p**(-beta_exp/mu_exp) x, y)``; they are equivariances iff
    ``c f(x, y, u) = f(c x, y, p u)`` with ``c = p**(-beta_exp/mu_exp)``.

    Parameters
    ----------
    box
        ``(x, y, u)`` ranges of the grid on which the condition is sampled.
    """
    if mu_exp == 0:
        raise EquivarianceError("ratio form needs a nonzero exponent on x")
    e = -beta_exp / mu_exp
    pts = _grid_xyu(box)

    def condition(p):
        c = float(p) ** e
        worst = 0.0
        for x, y, u in pts:
            a = c * float(real(f(x, y, u)))
            b = float(real(f(c * x, y, p * u)))
            worst = max(worst, abs(a - b) / (1.0 + abs(a)))
        return worst

    fam = SymmetryFamily("scalings", lambda p: scaling_candidate(p, e, "lemma31"), condition, 1.0,
                         meta={"rho_x_exponent": e, "form": "ratio"})
    if G is not None:
        s = [xi ** mu_exp * ui ** beta_exp for xi, _, ui in pts[:32]]
        fam.meta["G_injective_on_samples"] = _injective_on_samples(G, s, pts[:8, 1])
    return fam


def classify_affine_form(mu_coef: float, beta_coef: float, f: Callable, G: Callable | None = None,
                         box=((-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0))) -> SymmetryFamily:
    """Symmetries of ``x' = f(x, y, u)``, ``y' = G(mu_coef x + beta_coef u, y)``.

    The only candidates are translations ``u -> p + u`` with
    ``rho(x, y) = (x - (beta_coef/mu_coef) p, y)``, subject to
    ``f(x, y, u) = f(x - (beta_coef/mu_coef) p, y, p + u)``.
    """
    if mu_coef == 0:
        raise EquivarianceError("affine form needs a nonzero coefficient on x")
    k = -beta_coef / mu_coef
    pts = _grid_xyu(box)

    def condition(p):
        worst = 0.0
        for x, y, u in pts:
            a = float(real(f(x, y, u)))
            b = float(real(f(x + k * p, y, p + u)))
            worst = max(worst, abs(a - b) / (1.0 + abs(a)))
        return worst

    fam = SymmetryFamily("translations", lambda p: translation_candidate(p, k, "lemma32"), condition, 0.0,
                         meta={"rho_x_shift_per_p": k, "form": "affine"})
    if G is not None:
        s = [mu_coef * xi + beta_coef * ui for xi, _, ui in pts[:32]]
        fam.meta["G_injective_on_samples"] = _injective_on_samples(G, s, pts[:8, 1])
    return fam


def log_shift_candidate(p: float, params: Mapping[str, float] | None = None) -> EquivarianceCandidate:
    """``pi = scale(p)`` with ``rho(x, y) = (x + beta ln(p) / mu, y)``."""
    if not p > 0:
        raise EquivarianceError("log-shift needs p > 0")
    params = params or {}
    b, mu = float(params.get("beta", 1.0)), float(params.get("mu", 1.0))
    s = b * math.log(p) / mu

    def rho(z):
        return _with_x(z, z[0] + s)

    J = np.eye(2)
    return EquivarianceCandidate(Transform.scale(p), rho, "log_shift", jac=lambda z: J,
                                 label=f"x -> x + {s:.6g} under scale({p:g})", param=p)


def rotation_lift_candidate(M) -> EquivarianceCandidate:
    """``rho(x, y) = ((M^T)^{-1} x, y)`` paired with ``pi u = M u``.

    For orthogonal ``M`` this is ``(M x, y)``; ``det M = +1`` yields a
    rotation transform, ``-1`` an orthogonal one, anything else invertible
    a general linear one.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise EquivarianceError("rotation lift needs a square matrix")
    det = np.linalg.det(M)
    if abs(det) < 1e-12:
        raise EquivarianceError("matrix is singular")
    n = len(M)
    orth = np.max(np.abs(M.T @ M - np.eye(n))) <= 1e-12
    if orth:
        pi = Transform.rotate(M) if det > 0 else Transform.orthogonal(M)
        A = M
    else:
        pi = Transform.linear(M)
        A = np.linalg.inv(M.T)
    J = np.eye(n + 1)
    J[:n, :n] = A

    def rho(z):
        z = np.asarray(z)
        if z.dtype == object:
            xs = [sum(A[i, j] * z[j] for j in range(n)) for i in range(n)]
            return pack(xs + [z[n]])
        return np.concatenate([A @ z[:n], z[n:]])

    return EquivarianceCandidate(pi, rho, "rotation_lift", jac=lambda z: J,
                                 label=f"x -> {'M' if orth else '(M^T)^-1'} x under {pi.kind}", param=M)


def linear_shift_candidate(A, b, p: float) -> EquivarianceCandidate:
    """``rho(x) = x - A^{-1} b p`` for ``x' = A x + b u`` under ``u -> p + u``."""
    A = np.asarray(A, dtype=float)
    shift = np.linalg.solve(A, np.asarray(b, dtype=float).reshape(-1)) * float(p)
    n = len(shift)

    def rho(z):
        z = np.asarray(z)
        if z.dtype == object:
            return pack([z[i] - shift[i] for i in range(n)])
        return z - shift

    return EquivarianceCandidate(Transform.translate(p), rho, "linear_shift", jac=lambda z: np.eye(n),
                                 label=f"x -> x - A^-1 b ({p:g})", param=p)


def default_family(sys) -> SymmetryFamily:
    """The structural family a registry model is tested against.

    For the sniffer loop this is the fold-change candidate ``x -> p x``
    suggested by its ``x`` equation; it is expected to fail.
    """
    p = sys.params
    name = sys.name.split("(")[0]
    if name == "fig1a":
        return classify_affine_form(p["mu"], -p["beta"], lambda x, y, u: p["alpha"] * (y - p["y0"]))
    if name == "fig1b":
        return SymmetryFamily("scalings", lambda q: log_shift_candidate(q, p), None, 1.0,
                              meta={"form": "log"})
    if name == "fig1c":
        return classify_ratio_form(1.0, -1.0, lambda x, y, u: p["alpha"] * x * (y - p["y0"]))
    if name == "fig1d":
        return classify_ratio_form(1.0, 1.0, lambda x, y, u: p["alpha"] * x * (p["y0"] - y))
    if name == "fig2a":
        return classify_ratio_form(1.0, -1.0, lambda x, y, u: p["alpha"] * u - p["delta"] * x)
    if name == "fig2b":
        return SymmetryFamily("scalings", lambda q: scaling_candidate(q, 1.0, "custom"), None, 1.0,
                              meta={"form": "none", "expected": "fail"})
    if name == "rotation_ifb":
        return SymmetryFamily("linear", rotation_lift_candidate, None, None, meta={"form": "rotation"})
    raise EquivarianceError(f"no default family for {sys.name}")


def candidate_from_config(sys, provenance: str, p=None, exponent=None, shift=None,
                          matrix=None) -> EquivarianceCandidate:
    """Build a candidate from its provenance kind and parameter.

    Missing ``exponent``/``shift`` are taken from the model's default family.
    """
    if provenance not in PROVENANCES or provenance == "custom":
        raise EquivarianceError(f"provenance {provenance!r} cannot be built from parameters")
    if provenance == "rotation_lift":
        if matrix is None:
            raise EquivarianceError("rotation_lift needs a matrix")
        return rotation_lift_candidate(matrix)
    if p is None:
        raise EquivarianceError(f"{provenance} needs a parameter p")
    if provenance == "log_shift":
        return log_shift_candidate(p, sys.params)
    if provenance == "lemma31":
        if exponent is None:
            exponent = default_family(sys).meta.get("rho_x_exponent", 1.0)
        return scaling_candidate(p, exponent)
    if provenance == "lemma32":
        if shift is None:
            shift = default_family(sys).meta["rho_x_shift_per_p"]
        return translation_candidate(p, shift)
    if matrix is None or shift is None:
        raise EquivarianceError("linear_shift needs the system matrix A and input vector b (as shift)")
    return linear_shift_candidate(matrix, shift, p)


# --------------------------------------------------------------------------- #
# interlacing


def _perturbed_guess(sys, z):
    g = np.array(z, dtype=float) * 1.05 + 0.05
    return g if sys.in_domain(g) else np.array(z, dtype=float)


def _isolated(sys, z, u) -> bool:
    J = jacobian(lambda w: sys.F(w, u), z)
    s = np.linalg.svd(J, compute_uv=False)
    return s[-1] > 1e-10 * max(1.0, s[0])


def interlace_check(sys, cand: EquivarianceCandidate, u_samples, tol: float = EQUIV_TOL) -> AnalysisReport:
    """Check that ``rho`` carries steady states for ``u`` to those for ``pi u``.

    Steady states come from the numerical solver. Where the equilibrium for
    ``pi u`` is not isolated (a continuum of steady states) the check is
    set-valued: ``rho(sigma(u))`` must itself be a steady state for ``pi u``
    with the same output.
    """
    rows = []
    worst = 0.0
    for u in u_samples:
        z_u = steady_state(sys, u, _perturbed_guess(sys, sys.closed_form(u)))
        pu = cand.pi(u)
        lhs = cand(z_u)
        z_pu_guess = sys.closed_form(pu)
        if _isolated(sys, z_pu_guess, pu):
            z_pu = steady_state(sys, pu, _perturbed_guess(sys, z_pu_guess))
            err = float(np.linalg.norm(lhs - z_pu))
            mode = "point"
        else:
            err = max(float(np.linalg.norm(np.asarray(sys.F(lhs, pu), dtype=float))),
                      abs(float(real(sys.h(lhs))) - float(real(sys.h(z_u)))))
            mode = "set"
        worst = max(worst, err)
        rows.append({"u": u, "pi_u": pu, "rho_sigma_u": lhs, "error": err, "mode": mode})
    return AnalysisReport(
        kind="interlace",
        passed=worst <= tol,
        metrics={"max_error": worst},
        tolerances={"error": tol},
        details={"rows": rows, "candidate": cand.describe()},
    )
