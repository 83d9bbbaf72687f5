import csv

import numpy as np
import pytest

from symfcd.models import registry_get
from symfcd.signals import Transform
from symfcd.steering import (
    FieldError, FieldSpec, NoiseProcess, SteeringSpec, gradient_steering, run_and_tumble, simulate_closed_loop,
    steering_invariance_experiment, stochastic_steering_experiment,
)


@pytest.fixture
def fig1c():
    return registry_get("fig1c")


def test_constant_field_keeps_loop_at_rest(fig1c):
    y0 = float(fig1c.adapted_output())
    tr = simulate_closed_loop(fig1c, gradient_steering(y0), FieldSpec.constant(2.0), T=10.0, n_grid=51)
    assert np.max(np.abs(tr.q)) <= 1e-12 and np.max(np.abs(tr.y - y0)) <= 1e-12


def test_non_stationary_steering_rejected():
    with pytest.raises(ValueError):
        SteeringSpec(lambda q, y: np.array([y]), lambda q: q[0], [0.0], 1.0)


def test_field_leaving_input_set_raises(fig1c):
    y0 = float(fig1c.adapted_output())
    fld = FieldSpec(lambda t, r: 1.0 - t, 1.0)
    with pytest.raises(FieldError):
        simulate_closed_loop(fig1c, gradient_steering(y0), fld, T=3.0)


def test_field_check_helper(fig1c):
    FieldSpec.exponential(2.0, 0.5, 1.0).check([0.0, 1.0], [-3.0, 3.0], fig1c.in_input_set)
    with pytest.raises(FieldError):
        FieldSpec.constant(-1.0).check([0.0], [0.0], fig1c.in_input_set)


def test_thinning_candidates_depend_on_seed_only():
    a = NoiseProcess("telegraph", 7, lambda y: 1.0, 2.0).candidates(20.0)
    b = NoiseProcess("telegraph", 7, lambda y: 0.1, 2.0).candidates(20.0)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert len(a[0]) > 0 and np.all(np.diff(a[0]) > 0)


def test_same_seed_same_events(fig1c):
    y0 = float(fig1c.adapted_output())
    fld = FieldSpec.exponential(2.0, 0.5, 1.0)
    runs = [simulate_closed_loop(fig1c, run_and_tumble(y0, seed=5), fld, T=10.0, n_grid=101) for _ in range(2)]
    assert runs[0].events == runs[1].events and len(runs[0].events) > 0
    np.testing.assert_array_equal(runs[0].r, runs[1].r)


def test_deterministic_steering_is_invariant(fig1c):
    y0 = float(fig1c.adapted_output())
    rep = steering_invariance_experiment(fig1c, gradient_steering(y0), FieldSpec.exponential(2.0, 0.5, 1.0),
                                         Transform.scale(3.0), T=15.0)
    assert rep.passed and rep.metrics["r_deviation"] <= 1e-6


def test_sniffer_steering_moves(fig1c):
    sys = registry_get("fig2b")
    y0 = float(sys.adapted_output())
    rep = steering_invariance_experiment(sys, gradient_steering(y0), FieldSpec.exponential(2.0, 0.5, 1.0),
                                         Transform.scale(3.0), T=15.0)
    assert not rep.passed


def test_paired_stochastic_runs_match(fig1c):
    y0 = float(fig1c.adapted_output())
    rep = stochastic_steering_experiment(fig1c, run_and_tumble(y0), FieldSpec.exponential(2.0, 0.5, 1.0),
                                         Transform.scale(2.0), T=8.0, seeds=range(3))
    assert rep.passed
    assert all(row["same_events"] for row in rep.details["rows"])


def test_trajectory_csv(tmp_path, fig1c):
    y0 = float(fig1c.adapted_output())
    tr = simulate_closed_loop(fig1c, gradient_steering(y0), FieldSpec.exponential(2.0, 0.5, 1.0), T=2.0, n_grid=5)
    tr.to_csv(tmp_path / "loop.csv")
    rows = list(csv.reader((tmp_path / "loop.csv").open()))
    assert rows[0] == ["time", "z1", "z2", "q1", "r1", "y1", "u1"] and len(rows) == 6
