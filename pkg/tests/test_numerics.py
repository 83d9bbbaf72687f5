import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symfcd.models import linear_system, registry_get
from symfcd.numerics import (
    BlowUpError, DomainExitError, IntegratorConfig, central_difference, integrate, integrate_dde, jacobian,
    lie_bracket, lie_derivative, solve, steady_state,
)
from symfcd.numerics.dual import Dual, exp, log, new_tag, pack, real, sin
from symfcd.signals import InputSignal

finite = st.floats(-3, 3, allow_nan=False)


def test_dual_product_rule():
    t = new_tag()
    x = Dual(2.0, 1.0, t)
    y = x * x * 3 + exp(x) - log(x) / 2 + sin(x)
    assert y.val == pytest.approx(12 + math.exp(2) - math.log(2) / 2 + math.sin(2))
    assert y.der == pytest.approx(12 + math.exp(2) - 0.25 + math.cos(2))


def test_nested_tags_do_not_mix():
    # d/dx [x * d/dy (x*y)] = d/dx [x * x] = 2x
    def inner(x):
        ty = new_tag()
        y = Dual(3.0, 1.0, ty)
        return (x * y).der if isinstance(x * y, Dual) and (x * y).tag == ty else None

    tx = new_tag()
    x = Dual(1.5, 1.0, tx)
    d_inner = inner(x)
    out = x * d_inner
    assert real(out) == pytest.approx(1.5 ** 2)
    assert out.der == pytest.approx(3.0)


def test_jacobian_matches_hand_derivative():
    f = lambda z: pack([z[0] * z[1], exp(z[0]) - z[1] ** 2])  # noqa: E731
    z = np.array([0.3, -1.2])
    J = jacobian(f, z)
    np.testing.assert_allclose(J, [[z[1], z[0]], [math.exp(z[0]), -2 * z[1]]], rtol=1e-14)


def test_lie_derivative_and_bracket_known_case():
    # f = (y, -x) rotation, g = (x, y) radial: [f, g] = Dg f - Df g = f - f = 0
    f = lambda z: pack([z[1], -z[0]])  # noqa: E731
    g = lambda z: pack([z[0], z[1]])  # noqa: E731
    np.testing.assert_allclose(lie_bracket(f, g, np.array([0.7, -0.2])), [0.0, 0.0], atol=1e-15)
    H = lambda z: z[0] ** 2 + z[1] ** 2  # noqa: E731
    assert float(real(lie_derivative(H, f)(np.array([0.7, -0.2])))) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(finite, finite)
def test_jacobi_identity(x, y):
    f = lambda z: pack([z[1] ** 2, sin(z[0])])  # noqa: E731
    g = lambda z: pack([z[0] * z[1], exp(z[1] / 3)])  # noqa: E731
    k = lambda z: pack([1.0 + z[0] ** 3 / 5, z[0] - z[1]])  # noqa: E731

    def br(a, b):
        return lambda z: pack(list(lie_bracket(a, b, z)))

    z = np.array([x, y])
    total = lie_bracket(f, br(g, k), z) + lie_bracket(g, br(k, f), z) + lie_bracket(k, br(f, g), z)
    assert np.max(np.abs(total)) <= 1e-9 * (1 + np.max(np.abs(lie_bracket(f, br(g, k), z))))


@settings(max_examples=25, deadline=None)
@given(finite, finite)
def test_bracket_antisymmetry(x, y):
    f = lambda z: pack([z[1], sin(z[0]) * z[1]])  # noqa: E731
    g = lambda z: pack([exp(z[0] / 4), z[0] * z[1]])  # noqa: E731
    z = np.array([x, y])
    np.testing.assert_allclose(lie_bracket(f, g, z), -lie_bracket(g, f, z), atol=1e-12)


def test_central_difference_agrees():
    sys = registry_get("fig2b")
    z = np.array([1.3, 0.6])
    f = lambda w: sys.F(w, 2.0)  # noqa: E731
    np.testing.assert_allclose(jacobian(f, z), central_difference(f, z), rtol=1e-8, atol=1e-9)


def test_integrator_linear_decay_tight():
    A = np.array([[-1.0, 0.0], [0.0, -2.0]])
    sys = linear_system(A, [0.0, 0.0], [0.0, 1.0])
    tr = integrate(sys, InputSignal.constant(0.0, 3.0), [1.0, 1.0], 3.0)
    np.testing.assert_allclose(tr.final_state, [math.exp(-3), math.exp(-6)], rtol=1e-9)


def test_step_input_breakpoint_is_exact():
    # y' = -y + u with u stepping 0 -> 1 at t = 1: y = 1 - exp(-(t-1)) after the switch
    sys = linear_system([[-1.0]], [1.0], [1.0])
    u = InputSignal.step(0.0, 1.0, 1.0, 4.0)
    tr = integrate(sys, u, [0.0], 4.0, grid=np.array([0.0, 0.5, 1.0, 2.0, 4.0]))
    np.testing.assert_allclose(tr.states[:, 0], [0.0, 0.0, 0.0, 1 - math.exp(-1), 1 - math.exp(-3)], atol=1e-10)


def test_dense_output_between_steps():
    sys = linear_system([[-0.5]], [0.0], [1.0])
    grid = np.linspace(0, 5, 101)
    tr = integrate(sys, InputSignal.constant(0.0, 5.0), [2.0], 5.0, grid=grid)
    # cubic Hermite interpolant between accepted steps
    np.testing.assert_allclose(tr.states[:, 0], 2 * np.exp(-0.5 * grid), rtol=1e-7)


def test_domain_exit_is_an_error():
    # fig1c needs x > 0; x' = -x would never exit, so push it out with a custom field
    sys = registry_get("fig1c")
    with pytest.raises(DomainExitError):
        solve(lambda t, z: np.array([-1.0, 0.0]), (0.0, 3.0), [1.0, 0.0], IntegratorConfig(),
              in_domain=sys.in_domain)


def test_blow_up_is_detected():
    with pytest.raises(BlowUpError):
        solve(lambda t, z: z ** 2, (0.0, 2.0), [1.0], IntegratorConfig())


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(min_step=1.0, max_step=0.5)


def test_steady_state_newton():
    sys = registry_get("fig2b")
    z = steady_state(sys, 3.0, np.array([2.0, 2.0]))
    np.testing.assert_allclose(z, sys.closed_form(3.0), rtol=1e-12)


def test_dde_method_of_steps_piecewise_polynomial():
    # x' = -x(t - 1), x = 1 on [-1, 0]: x = 1 - t on [0, 1], 1 - t + (t - 1)^2 / 2 on [1, 2]
    grid = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    tr = integrate_dde(lambda t, z, zd: np.array([-zd[0]]), 1.0, lambda t: np.array([1.0]), 2.0,
                       grid=grid)
    exact = [1.0, 0.5, 0.0, 1 - 1.5 + 0.125, 1 - 2 + 0.5]
    np.testing.assert_allclose(tr.states[:, 0], exact, atol=1e-9)
