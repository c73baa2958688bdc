from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from mcontrol.expsum import ExponentialSum, evaluate
from mcontrol.minimality import kernel_family
from mcontrol.moment import moment_targets, synthesize_control
from mcontrol.simulate import propagate, semigroup_consistency_check, verify_partial_null
from mcontrol.spectrum import build_coupled_model, classify_spectra, eigenstructure

from conftest import preset

ES = ExponentialSum.from_terms


def setup(model):
    part = classify_spectra(model)
    return model, part, eigenstructure(model, part)


def mixed_model():
    """Disjoint modes, one matched pair and nonzero b_z."""
    mu = np.array([-1.0, -4.0, -6.5])
    nu = np.array([-4.0, -2.0])
    coupling = np.array([[0.5, 1.0], [2.0, 0.3], [0.1, 0.0]])
    return setup(build_coupled_model(mu, nu, coupling, [1.0, 0.5, -0.7], [0.4, 0.9], 1.0))


def dense_reference(model, x0, u, t):
    """x(t) from the matrix exponential and adaptive Duhamel quadrature, split into (x_Y, x_Z)."""
    a = model.operator_matrix()
    b = np.concatenate([model.b_y, model.b_z])
    x = expm(a * t) @ np.concatenate(x0)
    if u is not None:
        forced, _ = quad_vec(lambda s: expm(a * (t - s)) @ b * evaluate(u, s), 0.0, t, epsabs=1e-13, epsrel=1e-12)
        x = x + forced
    return x[: model.ny], x[model.ny:]


def test_time_zero_returns_initial_state():
    model, part, eig = mixed_model()
    x0 = (np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5]))
    st = propagate(model, eig, part, x0, ES([(1.0, 0.0)]), 0.0)
    np.testing.assert_array_equal(st.y_coords, x0[0])
    np.testing.assert_array_equal(st.z_coords, x0[1])


def test_uncoupled_free_evolution():
    model, part, eig = setup(build_coupled_model([-1.0, -3.0], [-2.0], np.zeros((2, 1)), [1.0, 1.0], [0.0], 1.0))
    st = propagate(model, eig, part, ([2.0, -1.0], [4.0]), None, 0.7)
    np.testing.assert_allclose(st.y_coords, [2.0 * math.exp(-0.7), -math.exp(-2.1)], rtol=1e-15)


def test_matches_matrix_exponential_without_control():
    model, part, eig = mixed_model()
    x0 = (np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5]))
    st = propagate(model, eig, part, x0, None, 0.8)
    y, z = dense_reference(model, x0, None, 0.8)
    np.testing.assert_allclose(st.y_coords, y, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(st.z_coords, z, rtol=1e-12, atol=1e-14)


def test_matches_matrix_exponential_with_control():
    model, part, eig = mixed_model()
    x0 = (np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5]))
    u = ES([(1.5, 0.7), (-0.4, -3.0, 1)])
    st = propagate(model, eig, part, x0, u, 1.0)
    y, z = dense_reference(model, x0, u, 1.0)
    np.testing.assert_allclose(st.y_coords, y, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(st.z_coords, z, rtol=1e-10, atol=1e-12)


def test_norm_estimate():
    model, part, eig = mixed_model()
    st = propagate(model, eig, part, ([1.0, 2.0, 3.0], [-1.0, 0.5]), None, 0.4)
    assert st.y_norm_estimate**2 == pytest.approx(float(np.sum(st.y_coords**2)), rel=1e-14)


def test_duhamel_linearity():
    model, part, eig = mixed_model()
    x0 = (np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5]))
    zero = (np.zeros(3), np.zeros(2))
    u1, u2 = ES([(1.0, 0.3)]), ES([(-2.0, -1.0), (0.5, 0.0, 1)])
    both = propagate(model, eig, part, x0, u1 + u2, 1.0)
    a = propagate(model, eig, part, x0, u1, 1.0)
    b = propagate(model, eig, part, zero, u2, 1.0)
    scale = np.max(np.abs(both.y_coords))
    np.testing.assert_allclose(both.y_coords, a.y_coords + b.y_coords, atol=1e-12 * scale)
    np.testing.assert_allclose(both.z_coords, a.z_coords + b.z_coords, atol=1e-12 * scale)


def test_semigroup_property_random(rng):
    for name in ("example1", "example2"):
        _, model, part, eig = preset(name, modes=8)
        for _ in range(50):
            x0 = (rng.standard_normal(8), rng.standard_normal(8))
            s, t = rng.uniform(0, 1, 2)
            assert semigroup_consistency_check(model, eig, part, x0, s, t) <= 1e-10
    model, part, eig = mixed_model()
    assert semigroup_consistency_check(model, eig, part, ([1.0, 1.0, 1.0], [1.0, 1.0]), 0.0, 0.5) == 0.0
    assert semigroup_consistency_check(model, eig, part, ([1.0, 1.0, 1.0], [1.0, 1.0]), 0.3, 0.3) <= 1e-10


def test_example2_uncontrolled_z_component():
    problem, model, part, eig = preset("example2", modes=10)
    st = propagate(model, eig, part, problem.x0, None, 1.0)
    n = np.arange(1, 11, dtype=float)
    np.testing.assert_allclose(st.z_coords, np.exp(-(n**2)) * np.exp(-n), rtol=1e-14)


def test_hand_instance_is_steered_to_zero(hand):
    model, part, eig = hand
    x0 = ([1.0], [1.0])
    t = moment_targets(model, eig, part, x0)
    sol = synthesize_control(t, kernel_family(model, eig, part))
    rep = verify_partial_null(model, eig, part, x0, sol)
    assert abs(rep.controlled.y_coords[0]) <= 1e-10
    assert rep.verdict


def test_zero_state_zero_control(hand):
    model, part, eig = hand
    x0 = ([0.0], [0.0])
    sol = synthesize_control(moment_targets(model, eig, part, x0), kernel_family(model, eig, part))
    rep = verify_partial_null(model, eig, part, x0, sol)
    assert rep.verdict and rep.max_controlled == 0.0
    assert not np.any(rep.controlled.y_coords)


def test_mixed_model_verification_and_coordinate_link():
    model, part, eig = mixed_model()
    x0 = (np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5]))
    fam = kernel_family(model, eig, part)
    sol = synthesize_control(moment_targets(model, eig, part, x0), fam)
    rep = verify_partial_null(model, eig, part, x0, sol, n_verify=3)
    assert rep.verdict
    # the scaled residuals are the predicted Y coordinates
    np.testing.assert_allclose(rep.controlled.y_coords[: sol.n], sol.scaled_residuals, atol=1e-12)


def test_example1_verification_and_spillover_bound():
    problem, model, part, eig = preset("example1", modes=16)
    fam = kernel_family(model, eig, part)
    sol = synthesize_control(moment_targets(model, eig, part, problem.x0), fam, n=8)
    rep = verify_partial_null(model, eig, part, problem.x0, sol, n_verify=16)
    assert rep.verdict
    assert rep.spillover <= rep.spillover_bound
    assert np.all(rep.ratios <= 1e-6)


def test_n_verify_validation(hand):
    model, part, eig = hand
    sol = synthesize_control(moment_targets(model, eig, part, ([1.0], [1.0])), kernel_family(model, eig, part))
    with pytest.raises(ValueError):
        verify_partial_null(model, eig, part, ([1.0], [1.0]), sol, n_verify=2)


def test_propagate_rejects_times_outside_horizon(hand):
    model, part, eig = hand
    with pytest.raises(ValueError):
        propagate(model, eig, part, ([1.0], [1.0]), None, -0.1)
    with pytest.raises(ValueError):
        propagate(model, eig, part, ([1.0], [1.0]), ES([(1.0, 0.0)]), 2.0)
