"""
Tests for DR(ω): assembly, spectrum, nilpotency, projections and stable-manifold shooting.
"""

import numpy as np
import pytest

from conftest import GOLDEN, random_field
from RG.errors import BadSpectrum, WindowOverflow
from RG.fourier_core import FourierField, mean, nonconstant, norm, prime
from RG.flow_verify import integrate, winding_ratio
from RG.renorm_operator import MAXITER, RenormConfig, renorm_iterate, renorm_step
from RG.resonance import ResonanceParams, far_modes, resonant_modes
from RG.spectral_analysis import (
    build_dr_matrix,
    chain_lengths,
    commutation_error,
    constant_block_eigen,
    eigen_spectrum,
    finite_difference_check,
    nilpotency_check,
    project_stable_unstable,
    shoot_stable,
)

K = 8


@pytest.fixture(scope="module")
def cfg(golden):
    return RenormConfig.build(golden, K=K, quiet=True)


@pytest.fixture(scope="module")
def dr(cfg):
    return build_dr_matrix(cfg.basis, cfg.params, K)


@pytest.fixture(scope="module")
def dr15(golden):
    c = RenormConfig.build(golden, K=15, quiet=True)
    return build_dr_matrix(c.basis, c.params, 15)


class TestBuild:
    def test_neutral_direction_is_annihilated(self, dr, golden):
        out = dr.apply(FourierField.constant(golden.omega, K, real=True))
        assert np.abs(out.coeffs).max() < 1e-12

    def test_unstable_direction(self, dr, golden):
        v = golden.unstable_basis()[:, 0]
        out = dr.apply(FourierField.constant(v, K, real=True))
        np.testing.assert_allclose(mean(out).real, -(GOLDEN ** 2) * v, atol=1e-13)

    def test_far_columns_vanish(self, dr, cfg):
        for k in far_modes(2, K, cfg.params)[:20]:
            k = tuple(int(x) for x in k)
            for i in range(2):
                assert not np.any(dr.matrix[:, dr.index(k, i)])

    def test_resonant_column_block(self, dr, golden, cfg):
        """A resonant k maps to T*k with block λ₁T⁻¹."""
        ks = [tuple(int(x) for x in k) for k in resonant_modes(2, K, cfg.params) if any(k)]
        k = max(ks, key=lambda m: sum(abs(x) for x in m))
        image = tuple(int(x) for x in np.array(k) @ golden.T)
        cols = [dr.index(k, i) for i in range(2)]
        rows = [dr.index(image, i) for i in range(2)]
        np.testing.assert_allclose(dr.matrix[np.ix_(rows, cols)], golden.lambda1 * golden.T_inv, rtol=1e-15)

    def test_overflow_is_strict(self, golden):
        """Past the cone bound (1,1) is resonant and T*(1,1) = (1,2) leaves |k| <= 2."""
        p = ResonanceParams(omega=tuple(golden.omega), sigma=1.5, kappa=0.99)
        with pytest.raises(WindowOverflow):
            build_dr_matrix(golden, p, 2)
        assert build_dr_matrix(golden, p, 2, strict=False).dropped > 0

    def test_finite_differences(self, dr, cfg):
        report = finite_difference_check(dr, cfg, n_dirs=20, t=1e-7)
        assert len(report.errors) == 20
        assert report.max_rel_error < 1e-5


class TestSpectrum:
    def test_golden(self, dr):
        spectrum = eigen_spectrum(dr)
        assert abs(spectrum[0] + GOLDEN ** 2) < 1e-8
        assert sum(1 for z in spectrum if abs(z) > 1) == 1
        assert all(abs(z) < 1e-6 for z in spectrum[1:])
        assert len(spectrum) == dr.matrix.shape[0]

    def test_dense_eigensolve_agrees(self, dr):
        dense = np.linalg.eigvals(dr.matrix)
        assert np.abs(dense).max() == pytest.approx(GOLDEN ** 2, rel=1e-8)

    def test_eigenvector_is_unstable_direction(self, dr, golden):
        vals, vecs = constant_block_eigen(dr)
        v = golden.unstable_basis()[:, 0]
        cosine = abs(np.vdot(vecs[:, 0], v)) / (np.linalg.norm(vecs[:, 0]) * np.linalg.norm(v))
        assert cosine == pytest.approx(1.0, abs=1e-10)

    def test_golden_large_window(self, dr15):
        spectrum = eigen_spectrum(dr15)
        assert abs(spectrum[0] + GOLDEN ** 2) < 1e-8
        assert sum(1 for z in spectrum if abs(z) > 1) == 1
        assert all(abs(z) < 1e-6 for z in spectrum[1:])

    def test_plastic_pair(self, plastic):
        p = ResonanceParams(omega=tuple(plastic.omega), sigma=0.05, kappa=0.99)
        L = build_dr_matrix(plastic, p, 8, strict=False)
        spectrum = eigen_spectrum(L)
        unstable = [z for z in spectrum if abs(z) > 1]
        assert len(unstable) == 2
        assert unstable[0] == pytest.approx(np.conj(unstable[1]), abs=1e-10)
        assert abs(unstable[0]) == pytest.approx(plastic.lambda1 ** 1.5, rel=1e-10)


class TestNilpotency:
    def test_exact_and_bounded(self, dr):
        report = nilpotency_check(dr, rho=0.6)
        assert report.max_residual == 0.0
        assert report.nilpotency_index >= 1
        assert report.nilpotency_index <= report.bound
        assert len(report.norm_sequence) == report.nilpotency_index - 1

    def test_small_window(self, golden):
        """‖k‖ <= 1 holds only far modes at σ = 0.2: (I−E)L = 0."""
        p = ResonanceParams(omega=tuple(golden.omega), sigma=0.2, kappa=0.8)
        L = build_dr_matrix(golden, p, 1)
        assert nilpotency_check(L).nilpotency_index == 1

    def test_chain_lengths(self, dr, golden):
        lengths = chain_lengths(dr)
        assert lengths[dr.mode_index((0, 0))] == 0
        assert lengths[dr.mode_index((1, 0))] == 0
        assert lengths.max() >= 1

    def test_commutes_with_neutral_projection(self, dr):
        assert commutation_error(dr) < 1e-12

    def test_norm_ratios_decrease(self, dr15):
        report = nilpotency_check(dr15, rho=0.6)
        assert report.max_residual == 0.0
        assert len(report.norm_ratios) >= 2
        assert report.decreasing
        assert all(b < a for a, b in zip(report.norm_ratios, report.norm_ratios[1:]))

    def test_perturbed_block_is_rejected(self, dr):
        """A diagonal entry on a nonconstant row breaks nilpotency; no zeros are reported."""
        matrix = dr.matrix.copy()
        j = dr.index((1, 0), 0)
        matrix[j, j] = 0.5
        with pytest.raises(BadSpectrum, match="not nilpotent"):
            eigen_spectrum(dr.model_copy(update={"matrix": matrix}))


class TestProjections:
    def test_frequency_is_not_unstable(self, golden):
        _, unstable = project_stable_unstable(FourierField.constant(golden.omega, K, real=True), golden)
        assert np.abs(unstable.coeffs).max() < 1e-15

    def test_unstable_vector(self, golden):
        v = golden.unstable_basis()[:, 0]
        _, unstable = project_stable_unstable(FourierField.constant(v, K, real=True), golden)
        np.testing.assert_allclose(mean(unstable), v, atol=1e-15)

    def test_zero_mean_field(self, golden):
        f = random_field(2, K, 5, 1e-3, seed=1)
        stable, unstable = project_stable_unstable(f, golden)
        assert unstable.is_zero()
        np.testing.assert_array_equal(stable.coeffs, f.coeffs)

    def test_complementary_and_idempotent(self, golden):
        f = random_field(2, K, 5, 1e-3, seed=2, with_mean=True)
        stable, unstable = project_stable_unstable(f, golden)
        assert np.abs((stable + unstable).coeffs - f.coeffs).max() < 1e-17
        _, again = project_stable_unstable(unstable, golden)
        np.testing.assert_allclose(again.coeffs, unstable.coeffs, atol=1e-17)
        assert abs(golden.omega_bar @ mean(unstable)) < 1e-17


@pytest.mark.slow
class TestShooting:
    def test_ray_seed_returns_immediately(self, cfg, golden):
        """ω + εω already renormalises onto ω."""
        f = FourierField.constant(1e-4 * golden.omega, K, real=True)
        X = shoot_stable(f, cfg, n_targets=2)
        assert norm(X.add_constant(-cfg.omega) - f, prime(cfg.rho)) < 1e-15

    def test_random_seed(self, cfg):
        """After shooting, R³ leaves no component along ω^(2)."""
        f = random_field(2, K, 4, 1e-4, seed=4, radius=3, with_mean=True)
        X = shoot_stable(f, cfg, n_targets=3)
        assert norm(nonconstant(X) - nonconstant(f), prime(cfg.rho)) == 0.0
        for _ in range(3):
            X, report = renorm_step(X, cfg)
        assert abs(report.unstable_coords[0]) < 1e-9 * norm(f, prime(cfg.rho))

    def test_unstable_seed_is_cancelled(self, cfg, golden):
        f = FourierField.constant(1e-4 * golden.unstable_basis()[:, 0], K, real=True)
        X = shoot_stable(f, cfg, n_targets=2)
        assert norm(X.add_constant(-cfg.omega), prime(cfg.rho)) < 1e-12


@pytest.fixture(scope="module")
def shot(cfg):
    """A 1e-3 random real seed moved onto the stable manifold."""
    f = random_field(2, K, 4, 1.0, seed=21, radius=3, with_mean=True)
    f = f * (1e-3 / norm(f, prime(cfg.rho)))
    return shoot_stable(f, cfg, n_targets=3)


@pytest.mark.slow
class TestStableRun:
    def test_six_iterates_approach_omega(self, cfg, shot):
        result = renorm_iterate(shot, cfg.model_copy(update={"converge_tol": 1e-300}), max_iters=6)
        assert result.status == MAXITER
        assert len(result.reports) == 6
        initial = norm(shot.add_constant(-cfg.omega), prime(cfg.rho))
        assert result.reports[-1].norm_prime < 1e-3 * initial
        assert all(abs(r.unstable_coords[0]) < 1e-6 * initial for r in result.reports)

    def test_winding_ratio_of_shot_field(self, shot, golden):
        estimate = winding_ratio(integrate(shot, [0.0, 0.0], t_end=1000.0, dt=0.01))
        assert estimate.status == "defined"
        w = np.array(estimate.w)
        assert np.abs(w - golden.omega / np.abs(golden.omega).sum()).max() < 1e-3
