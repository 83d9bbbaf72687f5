import math

import numpy as np
import pytest

from symfcd.imp import (
    DelaySystemSpec, delay_experiment, imp_transform_fig2a, linear_recast_demo, oscillation_metrics,
    perturbation_robustness, relative_degree, tau_fields,
)
from symfcd.models import linear_system, registry_get
from symfcd.numerics import integrate
from symfcd.signals import InputSignal
from symfcd.stability import (
    FormMismatch, LyapunovTriple, adaptive_simpson, corollary52_transform, gas_empirical, hessian_check,
    lasalle_check, lyapunov_decrease_check, lyapunov_value, properness_check,
)


def test_simpson_polynomial_and_exponential():
    assert adaptive_simpson(lambda x: x ** 3 - 2 * x, 0.0, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert adaptive_simpson(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1, rel=1e-11)
    assert adaptive_simpson(math.exp, 1.0, 0.0) == pytest.approx(1 - math.e, rel=1e-11)


def test_fig1c_reduction_value_hand_oracle():
    # z = ln x at u = 1: V(2, 2) = int_0^2 (1 - e^-s) ds + int_1^2 (y - 1) dy
    red = corollary52_transform(registry_get("fig1c"), 1.0)
    assert red.case == "a"
    assert lyapunov_value(red.triple, 2.0, 2.0) == pytest.approx(1.5 + math.exp(-2), rel=1e-10)


def test_fig1d_uses_negative_log():
    red = corollary52_transform(registry_get("fig1d"), 1.0)
    assert red.sign == -1 and red.case == "b"
    z = np.array([[0.5, 1.2], [3.0, -0.4]])
    np.testing.assert_allclose(red.to_original(red.to_reduced(z)), z, rtol=1e-14)


@pytest.mark.parametrize("name", ["fig1a", "fig2b"])
def test_reduction_rejects_wrong_form(name):
    with pytest.raises(FormMismatch):
        corollary52_transform(registry_get(name), 2.0)


def test_triple_structure_checks():
    red = corollary52_transform(registry_get("fig1c"), 2.0)
    t = red.triple
    assert t.check_hypotheses(np.linspace(-2, 2, 5), np.linspace(-1, 3, 5)).passed
    assert hessian_check(t, [[0.0, 1.0], [1.5, -2.0]]).passed
    assert properness_check(t).passed
    traj = integrate(red.system, InputSignal.constant(2.0, 60.0), [1.5, 3.0], 60.0)
    assert lyapunov_decrease_check(t, traj, 1e-7, red.system.F, 2.0).passed
    assert lasalle_check(t, traj).passed


def test_non_monotone_triple_fails_hypotheses():
    t = LyapunovTriple(f=lambda x: -x, g=lambda y: y, k=lambda y: y, x0=0.0, y0=0.0)
    assert not t.check_hypotheses([-1.0, 1.0], [-1.0, 1.0]).passed


def test_gas_small_sample_is_reproducible():
    sys = registry_get("fig2a")
    a = gas_empirical(sys, 2.0, N=5, T=80.0, seed=3)
    b = gas_empirical(sys, 2.0, N=5, T=80.0, seed=3)
    assert a.passed
    assert [r["initial_state"].tolist() for r in a.details["runs"]] == \
        [r["initial_state"].tolist() for r in b.details["runs"]]


def test_relative_degree_cases():
    rep = relative_degree(registry_get("fig2a"), [[0.5, 1.0], [2.0, 0.3]])
    assert rep.r == 1 and rep.min_abs == pytest.approx(0.5)
    assert relative_degree(registry_get("linear_ff"), [[0.0, 0.0], [1.0, 2.0]]).r == 1
    dbl = linear_system([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0], [1.0, 0.0])
    assert relative_degree(dbl, [[0.3, -1.0], [2.0, 4.0]]).r == 2


def test_tau_fields_double_integrator():
    dbl = linear_system([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0], [1.0, 0.0])
    tf = tau_fields(dbl, 2, [[0.3, -1.0], [2.0, 4.0]])
    np.testing.assert_allclose(tf.values[0], [[0.0, 1.0], [-1.0, 0.0]], atol=1e-14)
    assert tf.commute_residual <= 1e-14


def test_imp_transform_fixed_point_and_pde():
    tr = imp_transform_fig2a()
    np.testing.assert_allclose(tr.diffeo.forward(np.array([1.0, 1.0])), [1.0, 1.0], atol=1e-15)
    samples = [[0.5, 0.2], [3.0, 2.0], [1.0, -1.0]]
    assert tr.diffeo.check(samples).passed
    assert tr.lg_phi_residual(samples) <= 1e-12
    assert tr.clamped_z2_rate() == pytest.approx(0.0, abs=1e-14)


def test_linear_recast_matches():
    rep = linear_recast_demo(InputSignal.step(0.0, 1.0, 2.0, 30.0))
    assert rep.passed and rep.metrics["final_output"] == pytest.approx(0.0, abs=1e-6)


def test_feedback_form_rejects_nonconstant_perturbation():
    rep = perturbation_robustness(lambda x, y: 0.2 * math.sin(x), T=100.0, gas_runs=2)
    assert rep.passed and abs(rep.metrics["feedforward_shift"]) > 1e-3


def test_oscillation_metrics_on_pure_sine():
    t = np.linspace(0, 100, 4001)
    m = oscillation_metrics(t, np.sin(2 * np.pi * t / 10))
    assert m["oscillating"] and m["period"] == pytest.approx(10.0, rel=1e-3)
    assert not oscillation_metrics(t, np.exp(-t))["oscillating"]


def test_delay_horizon_enforced():
    with pytest.raises(ValueError):
        delay_experiment(DelaySystemSpec("linear9", 5.0), 50.0)


def test_small_delay_linear_loop_settles():
    assert not delay_experiment(DelaySystemSpec("linear9", 0.1), 100.0).passed


@pytest.mark.parametrize("u, expected", [(0.0, False), (1.0, True)])
def test_nonlinear_delay_loop_input_dependence(u, expected):
    rep = delay_experiment(DelaySystemSpec("nonlinear16", 5.0, u=u), 200.0)
    assert rep.passed is expected
