"""Declarative experiment runner.

A run reads one TOML file holding a list of ``[[experiment]]`` tables,
validates all of them, executes them in order and writes ``report.json``
plus one CSV per recorded trajectory. See ``docs/config.md`` for the
grammar and ``symfcd --describe KIND`` for the keys of each kind.

Exit codes: 0 all verdicts as expected, 1 some verdict not as expected,
2 usage or configuration error (nothing written), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys as _sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .equivariance import (
    EQUIV_TOL, P_GRID, EquivarianceError, candidate_from_config, default_family, interlace_check,
    rotation_lift_candidate, standard_grid, verify_equivariance,
)
from .imp import (
    DelaySystemSpec, delay_experiment, imp_conjugacy, imp_transform_fig2a, linear_recast_demo,
    perturbation_robustness, relative_degree, tau_fields,
)
from .invariance import (
    INVARIANCE_TOL, adaptation_test, approximate_invariance_qss, fcd_step_battery, invariance_experiment,
)
from .lie import accessibility_rank, parse_bracket, separation_test
from .models import ModelError, list_models, registry_get
from .numerics.integrate import IntegrationError, integrate
from .numerics.steady import SteadyStateError
from .report import AnalysisReport, jsonable
from .signals import InputSignal, SignalError, Transform
from .stability import FormMismatch, corollary52_transform, gas_empirical, lyapunov_decrease_check
from .steering import (
    FieldError, FieldSpec, gradient_steering, run_and_tumble, steering_invariance_experiment,
    stochastic_steering_experiment,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(Exception):
    """Invalid configuration; ``code`` is machine readable."""

    def __init__(self, code: str, message: str, index: int | None = None):
        super().__init__(message)
        self.code, self.index, self.message = code, index, message

    def as_dict(self) -> dict:
        return {"code": self.code, "index": self.index, "message": self.message}

    def __str__(self) -> str:
        where = f"experiment {self.index}: " if self.index is not None else ""
        return f"{self.code}: {where}{self.message}"


# --------------------------------------------------------------------------- #
# schema


@dataclass(frozen=True)
class Key:
    type: str
    default: Any = None
    doc: str = ""
    required: bool = False
    positive: bool = False


_COMMON = {
    "kind": Key("str", doc="experiment kind", required=True),
    "label": Key("str", doc="name used for CSV files (default <kind>_<model>)"),
    "model": Key("str", doc="registry model name"),
    "params": Key("table", {}, "parameter overrides"),
    "expect": Key("str", "pass", "'pass' or 'fail'; 'fail' marks an intended negative result"),
    "seed": Key("int", doc="random seed (default: global seed)"),
    "csv": Key("bool", True, "write trajectory CSVs"),
}

SIGNAL_DOC = ("{kind='constant', value} | {kind='step', before, after, t_switch} | "
              "{kind='steps', times, values} | {kind='sinusoid', amplitude, period, offset, phase} | "
              "{kind='ramp', value, slope}; horizon defaults to T")
TRANSFORM_DOC = ("{kind='identity'} | {kind='scale', p} | {kind='translate', p} | "
                 "{kind='rotate'|'orthogonal'|'linear', matrix}")
FIELD_DOC = ("{kind='exponential', amplitude, rate, I0} | {kind='constant', value} | "
             "{kind='gaussian', base, height, center, width, I0}")

SCHEMAS: dict[str, dict[str, Key]] = {
    "accessibility": {
        "points": Key("int", 50, "number of random states", positive=True),
        "max_depth": Key("int", 2, "bracket depth"),
        "witness": Key("list", [], "explicit witness brackets, e.g. ['g1', '[g0,g1]']"),
        "tol_rank": Key("float", 1e-8, "relative singular value threshold", positive=True),
    },
    "observability": {
        "pairs": Key("int", 50, "number of random distinct state pairs", positive=True),
        "max_order": Key("int", 2, "maximum observable order"),
        "states": Key("list", [], "extra explicit pairs [[z1, z2], ...]"),
    },
    "equivariance": {
        "candidate": Key("table", None, "{provenance, p, exponent, shift, matrix}; default: model family"),
        "p_grid": Key("list", list(P_GRID), "family parameters when no candidate is given"),
        "random_matrices": Key("int", 0, "rotation_ifb: number of random matrices"),
        "group": Key("str", "SO", "rotation_ifb: 'SO' or 'GL'"),
        "n_states": Key("int", 200, "Sobol states", positive=True),
        "n_inputs": Key("int", 10, "Sobol inputs", positive=True),
        "interlace": Key("int", 0, "number of inputs for the interlacing check (0 = skip)"),
        "tol": Key("float", EQUIV_TOL, "residual tolerance", positive=True),
    },
    "invariance": {
        "u_bar": Key("any", doc="pre-adaptation input", required=True),
        "signal": Key("signal", doc=SIGNAL_DOC, required=True),
        "transform": Key("transform", doc=TRANSFORM_DOC, required=True),
        "T": Key("float", 30.0, "horizon", positive=True),
        "tol": Key("float", INVARIANCE_TOL, "sup deviation tolerance", positive=True),
        "floor": Key("float", None, "negative control: pass iff deviation exceeds this"),
    },
    "fcd": {
        "steps": Key("list", [[[2.0, 4.0], [5.0, 10.0]], [[5.0, 10.0], [5.0, 25.0]]],
                     "pairs of steps [[a, b], [c, d]]"),
        "p_grid": Key("list", [], "extra scale factors applied to each first step"),
        "T": Key("float", 30.0, "horizon", positive=True),
        "t_switch": Key("float", 1.0, "step time", positive=True),
        "tol": Key("float", INVARIANCE_TOL, "equal-fold tolerance", positive=True),
        "floor": Key("float", None, "different-fold floor (default: stored regression value)"),
    },
    "adaptation": {
        "u_set": Key("list", doc="constant inputs", required=True),
        "T": Key("float", 60.0, "horizon", positive=True),
        "tol": Key("float", INVARIANCE_TOL, "output tolerance", positive=True),
    },
    "gas": {
        "u_bar": Key("any", doc="constant input", required=True),
        "N": Key("int", 100, "number of runs", positive=True),
        "T": Key("float", 200.0, "horizon", positive=True),
        "tol": Key("float", 1e-5, "final distance", positive=True),
        "box": Key("list", None, "initial state box [[lo, hi], ...]"),
        "reduction": Key("bool", False, "integrate in log-reduced coordinates"),
    },
    "lyapunov": {
        "u_bar": Key("float", doc="constant input", required=True),
        "runs": Key("int", 10, "number of trajectories", positive=True),
        "T": Key("float", 50.0, "horizon", positive=True),
        "tol": Key("float", 1e-7, "decrease tolerance", positive=True),
    },
    "imp": {
        "check": Key("str", "conjugacy", "lphi | conjugacy | recast | perturbation | relative_degree | tau"),
        "samples": Key("int", 200, "sample states", positive=True),
        "runs": Key("int", 10, "conjugacy runs", positive=True),
        "T": Key("float", 30.0, "horizon", positive=True),
        "delta": Key("float", 0.1, "constant perturbation"),
        "u_bar": Key("float", 2.0, "input for the perturbation test", positive=True),
        "tol": Key("float", None, "tolerance (default per check)"),
    },
    "delay": {
        "base": Key("str", "linear9", "linear9 | nonlinear16"),
        "h": Key("float", doc="delay", required=True),
        "T": Key("float", None, "horizon (default max(100, 20 h))"),
        "u": Key("float", 0.0, "constant drive"),
        "history": Key("list", [0.1, 0.1], "constant history"),
    },
    "steering": {
        "transform": Key("transform", doc=TRANSFORM_DOC, required=True),
        "field": Key("field", {"kind": "exponential", "amplitude": 2.0, "rate": 0.5, "I0": 1.0}, FIELD_DOC),
        "T": Key("float", 30.0, "horizon", positive=True),
        "tol": Key("float", INVARIANCE_TOL, "deviation tolerance", positive=True),
        "floor": Key("float", None, "negative control: pass iff r deviation exceeds this"),
    },
    "steering-stochastic": {
        "transform": Key("transform", doc=TRANSFORM_DOC, required=True),
        "field": Key("field", {"kind": "exponential", "amplitude": 2.0, "rate": 0.5, "I0": 1.0}, FIELD_DOC),
        "seeds": Key("int", 32, "number of seeds (starting at the experiment seed)", positive=True),
        "speed": Key("float", 1.0, "run speed", positive=True),
        "base_rate": Key("float", 1.0, "tumble rate at y = y0", positive=True),
        "y_cap": Key("float", 4.0, "rate ceiling in units of y0", positive=True),
        "paired": Key("bool", True, "share sample paths (false: negative control)"),
        "T": Key("float", 30.0, "horizon", positive=True),
        "tol": Key("float", INVARIANCE_TOL, "deviation tolerance", positive=True),
    },
    "qss": {
        "kappas": Key("list", [1, 3, 10, 30, 100], "time-scale factors"),
        "u_bar": Key("float", 2.0, "mean input", positive=True),
        "p": Key("float", 2.5, "scale factor", positive=True),
        "T": Key("float", 30.0, "horizon", positive=True),
    },
}

_DEFAULT_MODEL = {"delay": None, "qss": "fig2b", "steering": "fig1c", "steering-stochastic": "fig1c",
                  "imp": "fig2a"}


def describe(kind: str) -> str:
    if kind not in SCHEMAS:
        raise ConfigError("unknown-kind", f"unknown experiment kind {kind!r}; known: {', '.join(SCHEMAS)}")
    lines = [f"[[experiment]] kind = \"{kind}\""]
    for name, key in {**_COMMON, **SCHEMAS[kind]}.items():
        if name == "kind":
            continue
        req = "required" if key.required else f"default {key.default!r}"
        lines.append(f"  {name:<16} {key.type:<10} {req}; {key.doc}")
    return "\n".join(lines)


_TYPES: dict[str, Callable[[Any], bool]] = {
    "str": lambda v: isinstance(v, str),
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "bool": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "table": lambda v: isinstance(v, dict),
    "signal": lambda v: isinstance(v, dict),
    "transform": lambda v: isinstance(v, dict),
    "field": lambda v: isinstance(v, dict),
    "any": lambda v: True,
}


_SUBKEYS = {
    "signal": {"constant": {"value"}, "step": {"before", "after", "t_switch"}, "steps": {"times", "values"},
               "sinusoid": {"amplitude", "period", "offset", "phase"}, "ramp": {"value", "slope"}},
    "transform": {"identity": set(), "scale": {"p"}, "translate": {"p"}, "rotate": {"matrix"},
                  "orthogonal": {"matrix"}, "linear": {"matrix"}},
    "field": {"exponential": {"amplitude", "rate", "I0"}, "constant": {"value"},
              "gaussian": {"base", "height", "center", "width", "I0"}},
}


def _check_subkeys(what: str, spec: dict, extra=()) -> None:
    allowed = _SUBKEYS[what].get(spec.get("kind"))
    if allowed is None:
        return  # the builder reports the unknown kind
    unknown = set(spec) - allowed - {"kind", *extra}
    if unknown:
        raise ConfigError("unknown-key", f"{what} {spec['kind']!r} does not take {sorted(unknown)}")


def build_signal(spec: dict, T: float) -> InputSignal:
    _check_subkeys("signal", spec, extra=("horizon",))
    s = dict(spec)
    kind = s.pop("kind", None)
    horizon = float(s.pop("horizon", T))
    try:
        if kind == "constant":
            return InputSignal.constant(s["value"], horizon)
        if kind == "step":
            return InputSignal.step(s["before"], s["after"], float(s.get("t_switch", 1.0)), horizon)
        if kind == "steps":
            return InputSignal.steps(s["times"], s["values"], horizon)
        if kind == "sinusoid":
            return InputSignal.sinusoid(s["amplitude"], float(s["period"]), horizon, s.get("offset", 0.0),
                                        float(s.get("phase", 0.0)))
        if kind == "ramp":
            return InputSignal.ramp(s["value"], s["slope"], horizon)
    except KeyError as exc:
        raise ConfigError("missing-key", f"signal {kind!r} needs {exc.args[0]!r}") from None
    except (SignalError, ValueError, TypeError) as exc:
        raise ConfigError("bad-signal", str(exc)) from None
    raise ConfigError("unknown-signal", f"unknown signal kind {kind!r}")


def build_transform(spec: dict) -> Transform:
    _check_subkeys("transform", spec)
    kind = spec.get("kind")
    try:
        if kind == "identity":
            return Transform.identity()
        if kind in ("scale", "translate"):
            return getattr(Transform, kind)(float(spec["p"]))
        if kind in ("rotate", "orthogonal", "linear"):
            return getattr(Transform, kind)(np.asarray(spec["matrix"], dtype=float))
    except KeyError as exc:
        raise ConfigError("missing-key", f"transform {kind!r} needs {exc.args[0]!r}") from None
    except (SignalError, ValueError, TypeError) as exc:
        raise ConfigError("bad-transform", str(exc)) from None
    raise ConfigError("unknown-transform", f"unknown transform kind {kind!r}")


def build_field(spec: dict) -> FieldSpec:
    _check_subkeys("field", spec)
    kind = spec.get("kind")
    try:
        if kind == "exponential":
            return FieldSpec.exponential(float(spec["amplitude"]), spec["rate"], float(spec.get("I0", 1.0)))
        if kind == "constant":
            return FieldSpec.constant(float(spec["value"]))
        if kind == "gaussian":
            return FieldSpec.gaussian_bump(float(spec["base"]), float(spec["height"]), spec["center"],
                                           float(spec["width"]), float(spec.get("I0", spec["base"])))
    except KeyError as exc:
        raise ConfigError("missing-key", f"field {kind!r} needs {exc.args[0]!r}") from None
    raise ConfigError("unknown-field", f"unknown field kind {kind!r}")


def validate(config: dict, seed_override: int | None = None) -> dict:
    """Check every experiment and return the resolved config (defaults filled)."""
    if not isinstance(config, dict):
        raise ConfigError("bad-config", "top level must be a table")
    unknown = set(config) - {"seed", "experiment", "out"}
    if unknown:
        raise ConfigError("unknown-key", f"unknown top-level keys {sorted(unknown)}")
    seed = config.get("seed", 0) if seed_override is None else seed_override
    if not _TYPES["int"](seed):
        raise ConfigError("bad-type", "seed must be an integer")
    if not isinstance(config.get("out", ""), str):
        raise ConfigError("bad-type", "out must be a string")
    exps = config.get("experiment")
    if not isinstance(exps, list) or not exps:
        raise ConfigError("no-experiments", "config needs at least one [[experiment]] table")
    resolved = []
    for i, exp in enumerate(exps):
        if not isinstance(exp, dict):
            raise ConfigError("bad-config", "experiment entries must be tables", i)
        kind = exp.get("kind")
        if kind not in SCHEMAS:
            raise ConfigError("unknown-kind", f"unknown experiment kind {kind!r}", i)
        schema = {**_COMMON, **SCHEMAS[kind]}
        extra = set(exp) - set(schema)
        if extra:
            raise ConfigError("unknown-key", f"unknown keys {sorted(extra)} for kind {kind!r}", i)
        out = {}
        for name, key in schema.items():
            if name in exp:
                v = exp[name]
                if not _TYPES[key.type](v):
                    raise ConfigError("bad-type", f"{name!r} must be of type {key.type}", i)
                if key.positive and not v > 0:
                    raise ConfigError("not-positive", f"{name!r} must be positive", i)
                if name.startswith("tol") and v is not None and not v > 0:
                    raise ConfigError("not-positive", f"{name!r} must be positive", i)
                out[name] = v
            elif key.required:
                raise ConfigError("missing-key", f"{name!r} is required for kind {kind!r}", i)
            else:
                out[name] = key.default
        if out["expect"] not in ("pass", "fail"):
            raise ConfigError("bad-value", "expect must be 'pass' or 'fail'", i)
        if out["seed"] is None:
            out["seed"] = seed
        if out["model"] is None:
            out["model"] = _DEFAULT_MODEL.get(kind)
            if out["model"] is None and kind != "delay":
                raise ConfigError("missing-key", f"'model' is required for kind {kind!r}", i)
        if out["model"] is not None:
            try:
                registry_get(out["model"], out["params"] or None)
            except ModelError as exc:
                raise ConfigError("unknown-model", str(exc), i) from None
        try:
            T = out.get("T") or 30.0
            if "signal" in out:
                build_signal(out["signal"], T)
            if "transform" in out:
                build_transform(out["transform"])
            if "field" in out:
                build_field(out["field"])
            if kind == "delay" and out["base"] not in ("linear9", "nonlinear16"):
                raise ConfigError("bad-value", f"unknown delay system {out['base']!r}")
            if kind == "imp" and out["check"] not in _IMP_CHECKS:
                raise ConfigError("bad-value", f"unknown imp check {out['check']!r}")
            if kind == "accessibility":
                for w in out["witness"]:
                    parse_bracket(w)
            if kind == "equivariance" and out["group"] not in ("SO", "GL"):
                raise ConfigError("bad-value", "group must be 'SO' or 'GL'")
        except ConfigError as exc:
            exc.index = i
            raise
        except ValueError as exc:
            raise ConfigError("bad-value", str(exc), i) from None
        if out["label"] is None:
            out["label"] = f"{kind}_{out['model'] or out.get('base')}"
        resolved.append(out)
    return {"seed": seed, "out": config.get("out", "out"), "experiment": resolved}


# --------------------------------------------------------------------------- #
# runners; each returns an AnalysisReport


def _rng(exp):
    return np.random.default_rng(exp["seed"])


def _system(exp):
    return registry_get(exp["model"], exp["params"] or None)


def _run_accessibility(exp):
    sys = _system(exp)
    pts = sys.sample_states(_rng(exp), exp["points"])
    witness = list(exp["witness"]) or None
    return accessibility_rank(sys, pts, exp["max_depth"], witness, exp["tol_rank"])


def _run_observability(exp):
    sys = _system(exp)
    rng = _rng(exp)
    pairs = [tuple(np.asarray(z, dtype=float) for z in pr) for pr in exp["states"]]
    while len(pairs) < exp["pairs"] + len(exp["states"]):
        a, b = sys.sample_states(rng, 2)
        if np.linalg.norm(a - b) > 1e-6:
            pairs.append((a, b))
    rows, ok, worst = [], True, 0
    for z1, z2 in pairs:
        res = separation_test(sys, z1, z2, exp["max_order"])
        ok &= res.separated
        worst = max(worst, res.witness.order if res.separated else math.inf)
        rows.append({"z1": z1, "z2": z2, **res.as_dict()})
    return AnalysisReport("observability", ok, {"separated": sum(r["separated"] for r in rows),
                                                "pairs": len(rows), "max_witness_order": worst},
                          {"max_order": exp["max_order"]}, {"pairs": rows})


def _random_matrix(rng, n, group):
    from scipy.stats import special_ortho_group
    if group == "SO":
        return special_ortho_group.rvs(n, random_state=rng)
    while True:
        M = rng.normal(size=(n, n))
        if abs(np.linalg.det(M)) > 0.1:
            return M


def _run_equivariance(exp):
    sys = _system(exp)
    samples = standard_grid(sys, exp["n_states"], exp["n_inputs"], exp["seed"])
    cands = []
    if exp["candidate"] is not None:
        c = dict(exp["candidate"])
        cands.append(candidate_from_config(sys, c.pop("provenance", "lemma31"), **c))
    elif exp["random_matrices"]:
        rng = _rng(exp)
        n = sys.m
        cands = [rotation_lift_candidate(_random_matrix(rng, n, exp["group"])) for _ in range(exp["random_matrices"])]
    else:
        fam = default_family(sys)
        if fam.kind == "linear":
            raise ConfigError("missing-key", "rotation family needs 'candidate' or 'random_matrices'")
        cands = [fam.candidate(p) for p in exp["p_grid"]]
    rows, ok, worst = [], True, 0.0
    for cand in cands:
        rep = verify_equivariance(sys, cand, samples, exp["tol"])
        row = {"candidate": cand.describe(), **rep.metrics, "passed": rep.passed}
        if exp["interlace"] and rep.passed:
            us = sys.sample_inputs(_rng(exp), exp["interlace"])
            il = interlace_check(sys, cand, us, exp["tol"])
            row["interlace"] = il.metrics
            rep.passed = rep.passed and il.passed
        ok &= bool(rep.passed)
        worst = max(worst, rep.metrics["pde_residual"], rep.metrics["output_residual"])
        rows.append(row)
    return AnalysisReport("equivariance", ok, {"max_residual": worst, "candidates": len(rows)},
                          {"residual": exp["tol"]}, {"system": sys.name, "rows": rows,
                                                      "samples": [len(samples[0]), len(samples[1])]})


def _run_invariance(exp):
    sys = _system(exp)
    u = build_signal(exp["signal"], exp["T"])
    pi = build_transform(exp["transform"])
    rep = invariance_experiment(sys, exp["u_bar"], u, pi, exp["T"], exp["tol"]).to_report()
    if exp["floor"] is not None:
        rep.passed = rep.metrics["sup_deviation"] > exp["floor"]
        rep.tolerances["floor"] = exp["floor"]
        rep.notes.append("negative control: passes when the deviation exceeds the floor")
    return rep


def _run_fcd(exp):
    return fcd_step_battery(_system(exp), exp["steps"], exp["p_grid"], exp["T"], exp["tol"], exp["floor"],
                            exp["t_switch"])


def _run_adaptation(exp):
    return adaptation_test(_system(exp), exp["u_set"], exp["T"], exp["tol"])


def _run_gas(exp):
    sys = _system(exp)
    red = corollary52_transform(sys, exp["u_bar"]) if exp["reduction"] else None
    return gas_empirical(sys, exp["u_bar"], exp["N"], exp["box"], exp["T"], exp["tol"], exp["seed"],
                         reduction=red)


def _run_lyapunov(exp):
    sys = _system(exp)
    red = corollary52_transform(sys, exp["u_bar"])
    rng = _rng(exp)
    u = InputSignal.constant(exp["u_bar"], exp["T"])
    rows, ok = [], True
    artifacts = {}
    for i, z0 in enumerate(sys.sample_states(rng, exp["runs"])):
        traj = integrate(red.system, u, red.to_reduced(z0), exp["T"], grid=np.linspace(0, exp["T"], 501))
        rep = lyapunov_decrease_check(red.triple, traj, exp["tol"], red.system.F, exp["u_bar"])
        ok &= rep.passed
        rows.append({"run": i, "initial_state": z0, **rep.metrics})
        artifacts[f"run{i}"] = traj
    worst = max(r["max_vdot_disagreement"] for r in rows)
    return AnalysisReport("lyapunov", ok, {"max_vdot_disagreement": worst,
                                           "max_vdot": max(r["max_vdot"] for r in rows),
                                           "max_V_increase": max(r["max_V_increase"] for r in rows)},
                          {"tol": exp["tol"]}, {"case": red.case, "sign": red.sign, "runs": rows},
                          artifacts=artifacts)


def _imp_lphi(exp):
    tr = imp_transform_fig2a(exp["params"] or None)
    sys = registry_get("fig2a", exp["params"] or None)
    samples = sys.sample_states(_rng(exp), exp["samples"])
    res = tr.lg_phi_residual(samples)
    tol = exp["tol"] or 1e-10
    return AnalysisReport("imp_lphi", res <= tol, {"lg_phi_residual": res}, {"residual": tol})


def _imp_conjugacy(exp):
    tr = imp_transform_fig2a(exp["params"] or None)
    sys = registry_get("fig2a", exp["params"] or None)
    rng = _rng(exp)
    tol = exp["tol"] or 1e-6
    devs = []
    for z0 in sys.sample_states(rng, exp["runs"]):
        vals = np.exp(rng.uniform(np.log(0.5), np.log(4.0), size=3))
        u = InputSignal.steps([0.0, exp["T"] / 3, 2 * exp["T"] / 3], list(vals), exp["T"])
        devs.append(imp_conjugacy(tr, u, z0, exp["T"]))
    worst = max(devs)
    return AnalysisReport("imp_conjugacy", worst <= tol, {"sup_deviation": worst, "per_run": devs},
                          {"sup_deviation": tol})


def _imp_recast(exp):
    return linear_recast_demo(T=exp["T"], tol=exp["tol"] or 1e-8)


def _imp_perturbation(exp):
    d = exp["delta"]
    return perturbation_robustness(lambda x, y: d, exp["u_bar"], params=exp["params"] or None, constant=d,
                                   tol=exp["tol"] or 1e-8)


def _imp_relative_degree(exp):
    sys = _system(exp)
    return relative_degree(sys, sys.sample_states(_rng(exp), exp["samples"])).report()


def _imp_tau(exp):
    sys = _system(exp)
    samples = sys.sample_states(_rng(exp), min(exp["samples"], 50))
    rd = relative_degree(sys, samples)
    tf = tau_fields(sys, rd.r, samples)
    res = float(np.max(tf.commute_residual)) if np.size(tf.commute_residual) else 0.0
    tol = exp["tol"] or 1e-8
    return AnalysisReport("imp_tau", res <= tol, {"relative_degree": rd.r, "commute_residual": res},
                          {"residual": tol}, {"note": tf.note})


_IMP_CHECKS = {"lphi": _imp_lphi, "conjugacy": _imp_conjugacy, "recast": _imp_recast,
               "perturbation": _imp_perturbation, "relative_degree": _imp_relative_degree, "tau": _imp_tau}


def _run_imp(exp):
    return _IMP_CHECKS[exp["check"]](exp)


def _run_delay(exp, csv_path=None):
    T = exp["T"] if exp["T"] is not None else max(100.0, 20 * exp["h"])
    spec = DelaySystemSpec(exp["base"], exp["h"], exp["u"], exp["params"] or {})
    return delay_experiment(spec, T, exp["history"], csv_path)


def _steering_parts(exp):
    sys = _system(exp)
    y0 = float(sys.adapted_output())
    return sys, y0, build_field(exp["field"]), build_transform(exp["transform"])


def _run_steering(exp):
    sys, y0, fld, pi = _steering_parts(exp)
    return steering_invariance_experiment(sys, gradient_steering(y0), fld, pi, exp["T"], exp["tol"],
                                          floor=exp["floor"])


def _run_steering_stochastic(exp):
    sys, y0, fld, pi = _steering_parts(exp)
    steer = run_and_tumble(y0, exp["speed"], exp["base_rate"], exp["y_cap"], exp["seed"])
    seeds = range(exp["seed"], exp["seed"] + exp["seeds"])
    return stochastic_steering_experiment(sys, steer, fld, pi, exp["T"], seeds, exp["tol"], paired=exp["paired"])


def _run_qss(exp):
    return approximate_invariance_qss(exp["kappas"], exp["u_bar"], None, exp["p"], exp["T"], exp["params"] or None)


RUNNERS = {
    "accessibility": _run_accessibility,
    "observability": _run_observability,
    "equivariance": _run_equivariance,
    "invariance": _run_invariance,
    "fcd": _run_fcd,
    "adaptation": _run_adaptation,
    "gas": _run_gas,
    "lyapunov": _run_lyapunov,
    "imp": _run_imp,
    "delay": _run_delay,
    "steering": _run_steering,
    "steering-stochastic": _run_steering_stochastic,
    "qss": _run_qss,
}

NUMERIC_ERRORS = (IntegrationError, SteadyStateError, FieldError, FormMismatch, EquivarianceError,
                  FloatingPointError, np.linalg.LinAlgError)


def _numeric_code(exc) -> str:
    return {
        "DomainExitError": "domain-exit",
        "StepSizeUnderflow": "step-underflow",
        "SteadyStateError": "steady-state",
        "FieldError": "field",
        "FormMismatch": "form-mismatch",
        "EquivarianceError": "equivariance",
    }.get(type(exc).__name__, "numeric")


def execute(index: int, exp: dict, out_dir: str | None) -> dict:
    """Run one resolved experiment; returns its report entry and writes CSVs."""
    t0 = time.perf_counter()
    entry = {"index": index, "label": exp["label"], "kind": exp["kind"], "model": exp["model"],
             "expect": exp["expect"], "csv": []}
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            if exp["kind"] == "delay" and exp["csv"] and out_dir is not None:
                name = f"{index}_{exp['label']}.csv"
                rep = _run_delay(exp, Path(out_dir) / name)
                entry["csv"].append(name)
            else:
                rep = RUNNERS[exp["kind"]](exp)
        if exp["csv"] and out_dir is not None:
            for tag, traj in rep.artifacts.items():
                name = f"{index}_{exp['label']}_{tag}.csv"
                traj.to_csv(Path(out_dir) / name)
                entry["csv"].append(name)
        entry["report"] = rep.to_dict()
        entry["passed"] = bool(rep.passed)
        entry["as_expected"] = entry["passed"] == (exp["expect"] == "pass")
        entry["error"] = None
    except NUMERIC_ERRORS as exc:
        entry.update(report=None, passed=False, as_expected=False,
                     error={"code": _numeric_code(exc), "index": index, "message": str(exc)})
    except ConfigError as exc:
        exc.index = index
        entry.update(report=None, passed=False, as_expected=False, error=exc.as_dict())
    entry["wall_clock_s"] = time.perf_counter() - t0
    return entry


def _execute_star(args):
    return execute(*args)


def load_config(config_path: str) -> dict:
    try:
        with open(config_path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("unreadable-config", str(exc)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("parse-error", str(exc)) from None


def run(config_path: str, out_dir: str | None = None, seed: int | None = None, jobs: int = 1) -> int:
    """Validate, execute and persist; returns the exit code.

    ``out_dir`` overrides the config's ``out`` key.
    """
    resolved = validate(load_config(config_path), seed)
    if out_dir is not None:
        resolved["out"] = str(out_dir)
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    tasks = [(i, exp, str(out)) for i, exp in enumerate(resolved["experiment"])]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_execute_star, tasks))
    else:
        entries = [execute(*t) for t in tasks]
    numeric = any(e["error"] is not None and e["error"]["code"] not in _CONFIG_CODES for e in entries)
    config_err = any(e["error"] is not None and e["error"]["code"] in _CONFIG_CODES for e in entries)
    ok = all(e["as_expected"] for e in entries)
    verdict = "PASS" if ok else ("ERROR" if numeric or config_err else "FAIL")
    # timings live in their own file so that report.json is reproducible byte for byte
    timing = {"experiments": [{"index": e["index"], "label": e["label"], "wall_clock_s": e.pop("wall_clock_s")}
                              for e in entries],
              "wall_clock_s": time.perf_counter() - t0}
    envelope = {
        "version": __version__,
        "config": {k: v for k, v in resolved.items() if k != "out"},  # location is not part of the run
        "experiments": entries,
        "verdict": verdict,
    }
    (out / "report.json").write_text(dumps(envelope), encoding="utf-8")
    (out / "timing.json").write_text(dumps(timing), encoding="utf-8")
    if config_err:
        return EXIT_CONFIG
    if numeric:
        return EXIT_NUMERIC
    return EXIT_OK if ok else EXIT_FAIL


_CONFIG_CODES = {"unknown-kind", "unknown-key", "missing-key", "bad-type", "bad-value", "not-positive",
                 "unknown-model", "unknown-signal", "unknown-transform", "unknown-field", "bad-signal",
                 "bad-transform", "bad-config", "no-experiments", "usage", "parse-error", "unreadable-config"}


def dumps(envelope: dict) -> str:
    return json.dumps(jsonable(envelope), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="symfcd", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML experiment file")
    parser.add_argument("--out", help="output directory (default: the config's out, else ./out)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel experiments")
    parser.add_argument("--list-models", action="store_true", help="print the model registry")
    parser.add_argument("--describe", metavar="KIND", help="print the config keys of an experiment kind")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.list_models:
            print(list_models())
            return EXIT_OK
        if args.describe:
            print(describe(args.describe))
            return EXIT_OK
        if not args.config:
            raise ConfigError("usage", "--config is required")
        if args.jobs < 1:
            raise ConfigError("usage", "--jobs must be at least 1")
        out = args.out if args.out is not None else validate(load_config(args.config), args.seed)["out"]
        code = run(args.config, out, args.seed, args.jobs)
    except ConfigError as exc:
        print(json.dumps({"error": exc.as_dict()}, sort_keys=True), file=_sys.stderr)
        return EXIT_CONFIG
    report = json.loads((Path(out) / "report.json").read_text(encoding="utf-8"))
    for e in report["experiments"]:
        status = "ok" if e["as_expected"] else ("ERROR" if e["error"] else "UNEXPECTED")
        tag = "PASS" if e["passed"] else "FAIL"
        print(f"[{e['index']}] {e['label']:<32} {tag:<5} expect={e['expect']:<5} {status}")
        if e["error"]:
            print(f"    {e['error']['code']}: {e['error']['message']}")
    print(f"verdict: {report['verdict']}")
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
