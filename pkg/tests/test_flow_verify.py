import numpy as np
import pytest

from conftest import random_field
from RG.errors import StepTooLarge
from RG.flow_verify import conjugacy_residual, integrate, winding_after_step, winding_ratio
from RG.fourier_core import FourierField, norm, plain, prime
from RG.renorm_operator import RenormConfig, renorm_step_detailed

K = 8


@pytest.fixture(scope="module")
def cfg(golden):
    return RenormConfig.build(golden, K=K, quiet=True)


@pytest.fixture(scope="module")
def omega(golden):
    return FourierField.constant(golden.omega, K, real=True)


class TestIntegrate:
    def test_constant_field_is_a_straight_line(self, omega, golden):
        theta0 = np.array([0.25, -0.1])
        traj = integrate(omega, theta0, t_end=50.0, dt=0.01)
        assert traj.points.shape == (5001, 2)
        np.testing.assert_allclose(traj.points[-1], theta0 + 50.0 * golden.omega, rtol=1e-13)
        np.testing.assert_allclose(traj.at(20.0), theta0 + 20.0 * golden.omega, rtol=1e-13)
        assert traj.max_error_estimate < 1e-14

    def test_matches_fine_step(self, omega):
        X = omega + random_field(2, K, 3, 1e-2, seed=1, radius=2)
        coarse = integrate(X, [0.1, 0.2], t_end=2.0, dt=0.002)
        fine = integrate(X, [0.1, 0.2], t_end=2.0, dt=0.001)
        assert np.abs(coarse.points[-1] - fine.points[-1]).max() < 1e-8

    def test_step_too_large(self, omega):
        X = omega + FourierField.from_modes({(6, 0): (1.0, 1.0), (-6, 0): (1.0, 1.0)}, K, real=True)
        with pytest.raises(StepTooLarge, match="reduce dt") as excinfo:
            integrate(X, [0.0, 0.0], t_end=10.0, dt=0.5)
        assert excinfo.value.error_estimate > 1e-6

    def test_complex_field_is_rejected(self, golden):
        X = FourierField.constant(golden.omega, K, real=False)
        with pytest.raises(ValueError, match="real-flagged"):
            integrate(X, [0.0, 0.0], 1.0, 0.1)

    def test_bad_start(self, omega):
        with pytest.raises(ValueError, match="theta0 must have shape"):
            integrate(omega, [0.0, 0.0, 0.0], 1.0, 0.1)

    def test_bad_step(self, omega):
        with pytest.raises(ValueError, match="dt > 0"):
            integrate(omega, [0.0, 0.0], 1.0, 0.0)


class TestWindingRatio:
    def test_frequency_direction(self, omega, golden):
        estimate = winding_ratio(integrate(omega, [0.0, 0.0], t_end=100.0, dt=0.05))
        assert estimate.status == "defined"
        assert estimate.confident
        np.testing.assert_allclose(estimate.w, golden.omega / np.abs(golden.omega).sum(), rtol=1e-12)

    def test_bounded_orbit(self):
        estimate = winding_ratio(integrate(FourierField.zeros(2, K, real=True), [0.3, 0.3], 10.0, 0.1))
        assert estimate.status == "bounded"
        assert not estimate.confident
        assert estimate.w == [0.0, 0.0]

    def test_small_perturbation_keeps_ratio(self, omega, golden):
        X = omega + random_field(2, K, 3, 1e-4, seed=2, radius=2)
        estimate = winding_ratio(integrate(X, [0.0, 0.0], t_end=200.0, dt=0.01))
        assert estimate.status == "defined"
        assert np.abs(np.array(estimate.w) - golden.omega / np.abs(golden.omega).sum()).sum() < 1e-4


class TestConjugacy:
    def test_fixed_point(self, cfg, omega, golden):
        outcome = renorm_step_detailed(omega, cfg)
        assert conjugacy_residual(omega, outcome, golden, grid_n=8) < 1e-13

    def test_perturbed_step(self, cfg, omega, golden):
        """c·Dh·R(X) = X∘h up to the elimination residual and truncation."""
        X = omega + random_field(2, K, 4, 1e-5, seed=3, radius=3, with_mean=True)
        outcome = renorm_step_detailed(X, cfg)
        assert not outcome.elimination.u.is_zero()
        assert conjugacy_residual(X, outcome, golden, grid_n=16) < 1e-8

    def test_wrong_rescale_is_detected(self, cfg, omega, golden):
        X = omega + random_field(2, K, 4, 1e-5, seed=4, radius=3)
        outcome = renorm_step_detailed(X, cfg)
        assert conjugacy_residual(X, outcome, golden, rescale=2 * outcome.rescale, grid_n=8) > 0.1


class TestConjugacyAtScale:
    """A 1e-3 seed at σ = 0.3 checked on a 32 × 32 grid."""

    @pytest.fixture(scope="class")
    def step(self, golden):
        c = RenormConfig.build(golden, K=K, sigma=0.3, quiet=True)
        f = random_field(2, K, 4, 1.0, seed=9, radius=3, with_mean=True)
        X = FourierField.constant(golden.omega, K, real=True) + f * (1e-3 / norm(f, prime(c.rho)))
        return X, renorm_step_detailed(X, c)

    def test_residual(self, step, golden):
        X, outcome = step
        assert conjugacy_residual(X, outcome, golden, grid_n=32) < 1e-8

    def test_mutated_change_of_variables_is_detected(self, step, golden):
        X, outcome = step
        u = outcome.elimination.u
        assert norm(u, plain(0.0)) > 1e-6
        bent = outcome.model_copy(update={"elimination": outcome.elimination.model_copy(update={"u": u * 1.1})})
        assert conjugacy_residual(X, bent, golden, grid_n=32) > 1e-6


@pytest.mark.slow
def test_winding_after_step(cfg, omega):
    X = omega + random_field(2, K, 3, 1e-5, seed=5, radius=2)
    report = winding_after_step(X, cfg, np.zeros(2), t_end=100.0, dt=0.01)
    assert report["before"]["status"] == "defined"
    assert report["after"]["status"] == "defined"
    assert report["discrepancy"] < 1e-4
