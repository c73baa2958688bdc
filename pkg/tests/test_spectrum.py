from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcontrol.errors import (
    AmbiguousOverlap,
    DimensionMismatch,
    DuplicateEigenvalueWithinBranch,
    NearResonance,
    NonPositiveHorizon,
)
from mcontrol.problem import B_NORMALIZED
from mcontrol.spectrum import (
    b_coefficients,
    biorthogonality_check,
    build_coupled_model,
    classify_spectra,
    eigen_residual,
    eigenstructure,
    eigenstructure_disjoint,
    eigenstructure_overlap,
    merged_modes,
)

from conftest import preset


def example1_model(n=20, alpha=1.0):
    m = np.arange(1, n + 1, dtype=float)
    b_y = B_NORMALIZED * (-1.0) ** (m - 1) / m
    return build_coupled_model(1 - m**2, -(m**2), alpha * np.eye(n), b_y, np.zeros(n), 1.0)


# -- build_coupled_model ------------------------------------------------------------

def test_example1_model_is_valid():
    model = example1_model()
    assert model.ny == model.nz == 20
    assert model.mu[0] == 0.0 and model.nu[-1] == -400.0


def test_smallest_instance_is_valid(hand):
    model, _, _ = hand
    assert (model.ny, model.nz) == (1, 1)
    np.testing.assert_array_equal(model.operator_matrix(), [[-1.0, 1.0], [0.0, -2.0]])


def test_duplicate_eigenvalue_rejected():
    with pytest.raises(DuplicateEigenvalueWithinBranch):
        build_coupled_model([-1.0, -1.0], [-2.0], [[1.0], [1.0]], [1.0, 1.0], [0.0], 1.0)


def test_dimension_and_horizon_errors():
    with pytest.raises(DimensionMismatch):
        build_coupled_model([-1.0], [-2.0], [[1.0, 2.0]], [1.0], [0.0], 1.0)
    with pytest.raises(DimensionMismatch):
        build_coupled_model([-1.0], [-2.0], [[1.0]], [1.0, 2.0], [0.0], 1.0)
    with pytest.raises(NonPositiveHorizon):
        build_coupled_model([-1.0], [-2.0], [[1.0]], [1.0], [0.0], 0.0)


# -- classify_spectra ----------------------------------------------------------------

def test_example1_partition_is_disjoint():
    part = classify_spectra(example1_model())
    assert part.is_disjoint
    assert part.i_y == tuple(range(20)) and part.i_z == tuple(range(20))


def test_example2_partition_pairs_everything():
    _, model, part, _ = preset("example2", modes=20)
    assert part.i_yz == tuple((n, n) for n in range(20))
    assert part.i_y == () and part.i_z == ()


def test_pair_within_tolerance():
    tol = 1e-9
    model = build_coupled_model([-1.0], [-1.0 + 0.5 * tol], [[1.0]], [1.0], [0.0], 1.0)
    part = classify_spectra(model, overlap_tol=tol)
    assert part.i_yz == ((0, 0),)


def test_ambiguous_overlap():
    model = build_coupled_model([-1.0], [-1.0 + 1e-10, -1.0 - 1e-10], [[1.0, 1.0]], [1.0], [0.0, 0.0], 1.0)
    with pytest.raises(AmbiguousOverlap):
        classify_spectra(model, overlap_tol=1e-9)


# -- eigenstructure ------------------------------------------------------------------

def test_example1_coordinate_pattern():
    model = example1_model()
    eig = eigenstructure_disjoint(model, classify_spectra(model))
    # Z mode m: phi = (-e_m, e_m); Y mode m: psi = (e_m, e_m)
    np.testing.assert_array_equal(eig.phi_y, -np.eye(20))
    np.testing.assert_array_equal(eig.psi_z, np.eye(20))
    assert biorthogonality_check(eig) <= 1e-12
    assert eigen_residual(model, eig) <= 1e-12


def test_uncoupled_model_is_exact():
    model = build_coupled_model([-1.0, -4.0], [-2.0, -3.0], np.zeros((2, 2)), [1.0, 1.0], [1.0, 0.0], 1.0)
    eig = eigenstructure(model, classify_spectra(model))
    assert not np.any(eig.phi_y) and not np.any(eig.psi_z)
    assert biorthogonality_check(eig) == 0.0


def test_example2_generalized_pattern():
    _, model, part, eig = preset("example2", modes=20, alpha=1.0)
    np.testing.assert_array_equal(eig.c, np.ones(20))
    np.testing.assert_array_equal(eig.phi_y, -np.eye(20))
    np.testing.assert_array_equal(eig.psi_z, np.eye(20))
    assert eig.multiplicity_two == ()
    assert biorthogonality_check(eig) <= 1e-12
    assert eigen_residual(model, eig) <= 1e-12


def test_example2_c_equals_alpha():
    _, _, _, eig = preset("example2", modes=10, alpha=2.5)
    np.testing.assert_array_equal(eig.c, np.full(10, 2.5))


def test_zero_coupling_on_pair_flags_multiplicity_two():
    model = build_coupled_model([-1.0, -4.0], [-1.0, -9.0], [[0.0, 1.0], [1.0, 0.0]], [1.0, 1.0], [0.0, 0.0], 1.0)
    part = classify_spectra(model)
    eig = eigenstructure_overlap(model, part)
    assert part.i_yz == ((0, 0),)
    assert eig.c[0] == 0.0 and eig.multiplicity_two == (0,)
    assert biorthogonality_check(eig) <= 1e-12
    assert eigen_residual(model, eig) <= 1e-12


def test_disjoint_rejects_pairs():
    _, model, part, _ = preset("example2", modes=3)
    with pytest.raises(ValueError):
        eigenstructure_disjoint(model, part)


def test_near_resonance_guard():
    guard = 1e-6
    model = build_coupled_model([-1.0], [-1.0 + 1e-8], [[1.0]], [1.0], [0.0], 1.0)
    part = classify_spectra(model, overlap_tol=1e-12)
    assert part.is_disjoint
    with pytest.raises(NearResonance):
        eigenstructure(model, part, resonance_guard=guard)


@pytest.mark.parametrize("delta", [1e-3, 1e-4, 1e-5])
def test_resonant_coordinate_growth_is_bounded_by_guard(delta):
    guard = 1e-6
    model = build_coupled_model([-1.0], [-1.0 + delta], [[2.0]], [1.0], [0.0], 1.0)
    eig = eigenstructure(model, classify_spectra(model, overlap_tol=1e-12), resonance_guard=guard)
    coord = abs(eig.phi_y[0, 0])
    assert coord == pytest.approx(2.0 / delta, rel=1e-9)
    assert coord <= 2.0 / guard


def test_free_value_keeps_biorthogonality():
    _, model, part, _ = preset("example2", modes=6)
    eig = eigenstructure_overlap(model, part, free_value=3.0)
    np.testing.assert_array_equal(np.diag(eig.psi_z), np.full(6, 3.0))
    np.testing.assert_array_equal(np.diag(eig.phi_y), np.full(6, -3.0))
    assert biorthogonality_check(eig) <= 1e-12


# -- b coefficients ----------------------------------------------------------------

def test_example1_b_coefficients():
    model = example1_model()
    eig = eigenstructure(model, classify_spectra(model))
    bc = b_coefficients(model, eig)
    m = np.arange(1, 21)
    ratio = bc.y / ((-1.0) ** (m - 1) / m)
    np.testing.assert_allclose(ratio, np.full(20, B_NORMALIZED), rtol=1e-15)
    assert np.all(bc.z == 0.0)


def test_zero_b_gives_zero_coefficients():
    model = build_coupled_model([-1.0, -3.0], [-2.0], [[1.0], [0.5]], [0.0, 0.0], [0.0], 1.0)
    bc = b_coefficients(model, eigenstructure(model, classify_spectra(model)))
    assert not np.any(bc.y) and not np.any(bc.z)


def test_hand_b_coefficient(hand):
    model, _, eig = hand
    assert b_coefficients(model, eig).y[0] == 1.0


def test_b_coefficients_include_z_part():
    model = build_coupled_model([-1.0], [-2.0], [[1.0]], [1.0], [2.0], 1.0)
    eig = eigenstructure(model, classify_spectra(model))
    # psi_Y1 = (1, C/(mu - nu)) = (1, 1)
    assert b_coefficients(model, eig).y[0] == pytest.approx(3.0)


def test_merged_modes_interleave():
    model = example1_model(4)
    labels = [(m.branch, m.eigenvalue) for m in merged_modes(model)]
    assert labels[:4] == [("y", 0.0), ("z", -1.0), ("y", -3.0), ("z", -4.0)]


# -- properties -------------------------------------------------------------------

spectra = st.lists(st.integers(-60, -1), min_size=1, max_size=6, unique=True)


@settings(max_examples=50, deadline=None)
@given(spectra, spectra, st.integers(0, 2**31 - 1))
def test_random_models_are_biorthogonal(ys, zs, seed):
    rng = np.random.default_rng(seed)
    # half-integer shift keeps the branches disjoint; every entry is coupled
    mu = np.array(ys, dtype=float) + 0.5
    nu = np.array(zs, dtype=float)
    coupling = rng.uniform(-2, 2, size=(len(mu), len(nu)))
    model = build_coupled_model(mu, nu, coupling, rng.uniform(-1, 1, len(mu)), rng.uniform(-1, 1, len(nu)), 1.0)
    eig = eigenstructure(model, classify_spectra(model))
    assert biorthogonality_check(eig) <= 1e-10
    scale = max(1.0, float(np.max(np.abs(model.operator_matrix()))))
    assert eigen_residual(model, eig) <= 1e-12 * scale * max(1.0, float(np.max(np.abs(eig.phi_y))))
    # (phi_Yk, psi_Yj) = -(phi_Zk, psi_Zj) coordinate-wise
    np.testing.assert_allclose(eig.phi_y.T, -eig.psi_z, rtol=1e-15, atol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(-3, 3).filter(lambda a: a != 0), st.integers(0, 2**31 - 1))
def test_random_overlap_models(n, alpha, seed):
    rng = np.random.default_rng(seed)
    lam = -np.arange(1, n + 1, dtype=float) ** 2
    coupling = alpha * np.eye(n) + np.triu(rng.uniform(-1, 1, (n, n)), 1)
    model = build_coupled_model(lam, lam, coupling, np.ones(n), rng.uniform(-1, 1, n), 1.0)
    eig = eigenstructure(model, classify_spectra(model))
    assert len(eig.pairs) == n
    assert biorthogonality_check(eig) <= 1e-10
    assert eigen_residual(model, eig) <= 1e-10 * max(1.0, float(np.max(np.abs(eig.phi_y))))
    # c_m bounded by |C| times the coordinate norms of phi_2Z (= 1) and psi_1Y (= 1)
    assert np.max(np.abs(eig.c)) <= np.linalg.norm(coupling, 2) + 1e-12
