import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial.legendre import leggauss

from fuzzy_hinf.lmi import LAMBDA_COEFFS
from fuzzy_hinf.verification import (
    LAMBDA_TOL,
    LEMMA1_TOL,
    Lemma1Instance,
    PolyTrajectory,
    check_integral_inequality,
    check_lambda_identity,
    corrupted_lambda_coeffs,
    derivative_energy,
    random_instance,
    random_trajectory,
    run_inequality_trials,
    run_lambda_trials,
    tight_multipliers,
    xi_vector,
)


def _gauss(f, a, b, order=40):
    x, w = leggauss(order)
    s = 0.5 * (b - a) * x + 0.5 * (a + b)
    return 0.5 * (b - a) * sum(wi * f(si) for wi, si in zip(w, s))


# --- types ---------------------------------------------------------------------


def test_trajectory_requires_ordered_interval():
    with pytest.raises(ValueError):
        PolyTrajectory(np.ones((2, 1)), 1.0, 1.0)
    with pytest.raises(ValueError):
        PolyTrajectory(np.array([[np.nan]]), 0.0, 1.0)


def test_instance_requires_positive_definite_R():
    N = np.zeros((4, 1))
    with pytest.raises(ValueError, match="positive definite"):
        Lemma1Instance(np.array([[0.0]]), N, N, N)
    with pytest.raises(ValueError, match="4x1"):
        Lemma1Instance(np.eye(1), np.zeros((3, 1)), N, N)


# --- exact moments -----------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), degree=st.integers(0, 5))
def test_moments_match_numeric_quadrature(seed, n, degree):
    rng = np.random.default_rng(seed)
    traj = random_trajectory(rng, n, degree)
    a, b, tau = traj.alpha, traj.beta, traj.tau
    xi = xi_vector(traj)
    avg = _gauss(traj, a, b) / tau
    inner = lambda s: _gauss(traj, a, s)  # noqa: E731
    dbl = 2 * _gauss(inner, a, b) / tau**2
    assert np.allclose(xi, np.concatenate([traj(b), traj(a), avg, dbl]), atol=1e-12, rtol=1e-12)
    R = random_instance(rng, n).R
    energy = _gauss(lambda s: traj.derivative(s) @ R @ traj.derivative(s), a, b)
    assert derivative_energy(traj, R) == pytest.approx(energy, rel=1e-12, abs=1e-12)


def test_constant_trajectory_margin_is_multiplier_term():
    rng = np.random.default_rng(0)
    traj = PolyTrajectory(np.array([[1.0, -2.0]]), 0.0, 0.7)
    inst = random_instance(rng, 2)
    xi = xi_vector(traj)
    assert derivative_energy(traj, inst.R) == 0.0
    Ri = np.linalg.inv(inst.R)
    quad = inst.N1 @ Ri @ inst.N1.T + inst.N2 @ Ri @ inst.N2.T / 3 + inst.N3 @ Ri @ inst.N3.T / 5
    expected = traj.tau * xi @ quad @ xi
    assert check_integral_inequality(traj, inst) == pytest.approx(expected, rel=1e-12)
    assert expected >= 0


def test_linear_ramp_energy():
    traj = PolyTrajectory(np.array([[0.0], [2.0]]), 1.0, 3.0)
    assert derivative_energy(traj, np.array([[3.0]])) == pytest.approx(24.0)


# --- the inequality ------------------------------------------------------------


def test_monte_carlo_margin_nonnegative():
    rep = run_inequality_trials(1000, seed=11)
    assert rep.passed and rep.min_margin >= -LEMMA1_TOL
    assert rep.elapsed < 30


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_tight_multipliers_make_low_degree_exact(degree):
    # the three-term bound is exact when x' has degree <= 2
    rng = np.random.default_rng(degree)
    for n in (1, 2, 3):
        traj = random_trajectory(rng, n, degree)
        R = random_instance(rng, n).R
        inst = Lemma1Instance(R, *tight_multipliers(R, traj.tau))
        scale = max(1.0, derivative_energy(traj, R))
        assert abs(check_integral_inequality(traj, inst)) < 1e-10 * scale


def test_tight_multipliers_beat_random_ones():
    rng = np.random.default_rng(2)
    traj = random_trajectory(rng, 2, 1)
    R = random_instance(rng, 2).R
    tight = check_integral_inequality(traj, Lemma1Instance(R, *tight_multipliers(R, traj.tau)))
    rand = Lemma1Instance(R, *(rng.standard_normal((8, 2)) for _ in range(3)))
    loose = check_integral_inequality(traj, rand)
    assert tight >= -LEMMA1_TOL
    assert tight < 1e-6 * max(1.0, loose)


def test_quintic_trajectories_keep_positive_margin_with_tight_multipliers():
    rng = np.random.default_rng(3)
    for _ in range(50):
        traj = random_trajectory(rng, 2, 5)
        R = random_instance(rng, 2).R
        assert check_integral_inequality(traj, Lemma1Instance(R, *tight_multipliers(R, traj.tau))) >= -LEMMA1_TOL


def test_dimension_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        check_integral_inequality(random_trajectory(rng, 2), random_instance(rng, 1))


# --- Lambda identity -----------------------------------------------------------


def test_lambda_identity_unit_case():
    assert check_lambda_identity(1.0, np.eye(2)) < 1e-12


def test_lambda_identity_random_cases():
    rep = run_lambda_trials(100, seed=5)
    assert rep.max_diff < LAMBDA_TOL and rep.elapsed < 5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_lambda_identity_homogeneous(seed, c):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((4, 4))
    Z = G @ G.T + 0.1 * np.eye(4)
    h = rng.uniform(0.1, 2.0)
    assert check_lambda_identity(h, c * Z) < LAMBDA_TOL * max(1.0, c * np.abs(Z).max())


def test_lambda_coefficients_symmetric():
    assert np.array_equal(LAMBDA_COEFFS, LAMBDA_COEFFS.T)


def test_corrupted_lambda_detected():
    rep = run_lambda_trials(5, seed=0, coeffs=corrupted_lambda_coeffs())
    assert not rep.passed and rep.max_diff > 1e-3


def test_lambda_identity_rejects_bad_input():
    with pytest.raises(ValueError):
        check_lambda_identity(0.0, np.eye(2))
    with pytest.raises(ValueError):
        check_lambda_identity(1.0, np.eye(3))
    with pytest.raises(np.linalg.LinAlgError):
        check_lambda_identity(1.0, np.zeros((2, 2)))
