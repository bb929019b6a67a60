"""
Tests for the truncated Fourier algebra.

Validates:
- weighted l1 norms and their ordering
- Jacobian products, composition and Neumann inversion against grid/DFT oracles
- Hermitian symmetry and JSON round trips
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import GOLDEN, random_field
from RG.errors import Divergence, NonConvergence
from RG.fourier_core import (
    FourierField,
    NormKind,
    compose_displacement,
    dot,
    evaluate,
    evaluate_jacobian,
    jacobian_apply,
    max_coefficient_difference,
    mean,
    multiply,
    neumann_inverse_apply,
    norm,
    partial,
    plain,
    prime,
    window,
)
from tests.oracles import dft_field, grid_points

OMEGA = np.array([1.0, GOLDEN])
ORACLE_SEEDS = 100


def scaled_to_prime(u, target, r=1e-12):
    return u * (target / norm(u, prime(r)))


class TestNorm:
    """Test suite for ‖·‖_r and ‖·‖'_r."""

    def test_constant_field(self):
        """The constant ω has plain norm 1+γ at any radius."""
        f = FourierField.constant(OMEGA, 10)
        for r in (0.01, 0.6, 3.0):
            assert norm(f, plain(r)) == pytest.approx(1 + GOLDEN, rel=1e-15)

    def test_single_mode_prime(self):
        """One mode k=(1,0): ε(1+2π)e^{0.1}."""
        eps = 1e-3
        f = FourierField.single_mode((1, 0), (eps, 0), 5)
        assert norm(f, prime(0.1)) == pytest.approx(eps * (1 + 2 * math.pi) * math.exp(0.1), rel=1e-14)

    def test_ordering_and_direct_sum(self):
        """prime ≥ plain, plain is monotone in r, and both match a per-term fsum."""
        f = random_field(2, 12, 25, 1.0, seed=3, real=False)
        for r in (0.1, 0.5):
            direct = math.fsum(
                float(np.abs(v).sum()) * math.exp(r * sum(abs(x) for x in k)) for k, v in f.items()
            )
            assert norm(f, plain(r)) == pytest.approx(direct, rel=1e-13)
            assert norm(f, prime(r)) >= norm(f, plain(r))
        assert norm(f, plain(0.2)) <= norm(f, plain(0.5))

    def test_empty_field(self):
        assert norm(FourierField.zeros(2, 4), prime(0.5)) == 0.0

    def test_radius_must_be_positive(self):
        with pytest.raises(ValidationError, match="must be positive"):
            NormKind(tag="plain_r", r=0.0)


class TestMean:
    def test_nonzero_modes_integrate_out(self):
        f = FourierField.single_mode((2, -1), (1e-3, 2e-3), 6).add_constant(OMEGA)
        np.testing.assert_array_equal(mean(f), OMEGA.astype(complex))

    def test_empty(self):
        np.testing.assert_array_equal(mean(FourierField.zeros(3, 2)), np.zeros(3))


class TestJacobianApply:
    """Df·g."""

    def test_constant_f_gives_zero(self):
        g = random_field(2, 8, 5, 1.0, seed=1)
        assert jacobian_apply(FourierField.constant(OMEGA, 8), g).is_zero()

    def test_single_mode_times_constant(self):
        """Component i equals 2πi(k·c)f^i_k."""
        k, v, c = (2, -1), np.array([0.3 + 0.1j, -0.2j]), np.array([0.7, -1.3])
        f = FourierField.single_mode(k, v, 6)
        out = jacobian_apply(f, FourierField.constant(c, 6))
        np.testing.assert_allclose(out.coeff(k), 2j * np.pi * (np.dot(k, c)) * v, rtol=1e-13)
        assert out.mode_count() == 1

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(ORACLE_SEEDS))
    def test_grid_oracle(self, seed):
        """Pointwise Jacobian-vector product, transformed back on a 64x64 grid."""
        pts = grid_points(2, 64)
        f = random_field(2, 16, 10, 0.3, seed=seed, radius=5, real=False)
        g = random_field(2, 16, 10, 0.3, seed=100 + seed, radius=5, real=False, with_mean=True)
        values = np.einsum("...ij,...j->...i", evaluate_jacobian(f, pts), evaluate(g, pts))
        assert max_coefficient_difference(jacobian_apply(f, g), dft_field(values, 16)) < 1e-10

    def test_bilinear(self):
        f = random_field(2, 10, 6, 1.0, seed=4)
        g1 = random_field(2, 10, 6, 1.0, seed=5)
        g2 = random_field(2, 10, 6, 1.0, seed=6)
        lhs = jacobian_apply(f, 2.0 * g1 - 3.0 * g2)
        rhs = 2.0 * jacobian_apply(f, g1) - 3.0 * jacobian_apply(f, g2)
        assert max_coefficient_difference(lhs, rhs) < 1e-10

    def test_partial_matches_jacobian_column(self):
        f = random_field(2, 8, 5, 1.0, seed=8)
        e0 = FourierField.constant([1.0, 0.0], 8)
        assert max_coefficient_difference(jacobian_apply(f, e0), partial(f, 0)) < 1e-12


class TestComposeDisplacement:
    """f∘(id+u)."""

    def test_zero_displacement_is_identity(self):
        f = random_field(2, 10, 8, 1.0, seed=2)
        out = compose_displacement(f, FourierField.zeros(2, 10))
        np.testing.assert_array_equal(out.coeffs, f.coeffs)

    def test_constant_shift_closed_form(self):
        k, v, c = (3, -2), np.array([1.0, 0.5j]), np.array([0.013, -0.021])
        f = FourierField.single_mode(k, v, 8)
        out = compose_displacement(f, FourierField.constant(c, 8))
        np.testing.assert_allclose(out.coeff(k), v * np.exp(2j * np.pi * np.dot(k, c)), rtol=1e-14, atol=1e-16)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(ORACLE_SEEDS))
    def test_grid_oracle(self, seed):
        """Evaluate f at θ+u(θ) on a 64x64 grid and transform back."""
        pts = grid_points(2, 64)
        f = random_field(2, 16, 8, 0.1, seed=seed, radius=4)
        u = scaled_to_prime(random_field(2, 16, 4, 1.0, seed=1000 + seed, radius=3), 1e-2)
        values = evaluate(f, pts + evaluate(u, pts).real)
        assert max_coefficient_difference(compose_displacement(f, u), dft_field(values, 16)) < 1e-9

    def test_hermitian_symmetry_preserved(self):
        f = random_field(2, 12, 6, 0.2, seed=11)
        u = scaled_to_prime(random_field(2, 12, 3, 1.0, seed=12, radius=2), 1e-2)
        out = compose_displacement(f, u)
        assert out.real
        assert out.hermitian_defect() < 1e-14

    def test_non_convergence(self):
        """A large displacement makes the series terms grow."""
        f = FourierField.single_mode((8, 0), (1.0, 0.0), 10)
        u = FourierField.constant([3.0, 0.0], 10)
        with pytest.raises(NonConvergence, match="did not decrease"):
            compose_displacement(f, u, order_cap=5)

    def test_order_cap_must_be_positive(self):
        f = FourierField.single_mode((1, 0), (1.0, 0.0), 4)
        with pytest.raises(ValueError, match="order_cap"):
            compose_displacement(f, FourierField.constant([0.1, 0.0], 4), order_cap=-1)


def cosine_displacement(a, K):
    """u = 2a cos(2πθ₁) e₁."""
    return FourierField.from_modes({(1, 0): (a, 0.0), (-1, 0): (a, 0.0)}, K, real=True)


class TestNeumannInverse:
    """(I+Du)⁻¹g."""

    def test_zero_displacement(self):
        g = random_field(2, 6, 4, 1.0, seed=1)
        assert neumann_inverse_apply(FourierField.zeros(2, 6), g) is g

    def test_round_trip(self):
        u = scaled_to_prime(FourierField.single_mode((1, 1), (0.3, -0.4), 12), 0.1)
        g = FourierField.constant([0.4, -1.1], 12)
        h = neumann_inverse_apply(u, g)
        residual = h + jacobian_apply(u, h) - g
        assert float(np.abs(residual.coeffs).max()) < 1e-11

    def test_slow_contraction_still_converges(self):
        """‖u‖' = 0.9: more terms, same residual."""
        u = scaled_to_prime(cosine_displacement(1.0, 16), 0.9)
        g = FourierField.constant([1.0, 0.0], 16)
        h = neumann_inverse_apply(u, g, tol=1e-13, max_terms=2000)
        residual = h + jacobian_apply(u, h) - g
        assert float(np.abs(residual.coeffs).max()) < 1e-11

    def test_last_term_within_tol(self):
        """A constant u has Du = 0, so the single computed term already meets tol."""
        u = FourierField.constant([0.1, 0.0], 8)
        g = random_field(2, 8, 3, 1.0, seed=4)
        h = neumann_inverse_apply(u, g, max_terms=1)
        np.testing.assert_allclose(h.coeffs, g.coeffs, rtol=0, atol=1e-15)

    def test_term_budget_exhausted(self):
        u = scaled_to_prime(cosine_displacement(1.0, 16), 0.9)
        g = FourierField.constant([1.0, 0.0], 16)
        with pytest.raises(NonConvergence, match="did not reach") as excinfo:
            neumann_inverse_apply(u, g, tol=1e-13, max_terms=3)
        assert len(excinfo.value.term_norms) == 4

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(ORACLE_SEEDS))
    def test_grid_oracle(self, seed):
        """Pointwise solve of (I+Du(θ))x = g(θ) on the grid."""
        pts = grid_points(2, 64)
        u = scaled_to_prime(random_field(2, 16, 3, 1.0, seed=9 + seed, radius=2), 1e-2)
        g = random_field(2, 16, 4, 0.5, seed=500 + seed, radius=3, with_mean=True)
        mats = np.eye(2) + evaluate_jacobian(u, pts)
        values = np.linalg.solve(mats, evaluate(g, pts)[..., None])[..., 0]
        assert max_coefficient_difference(neumann_inverse_apply(u, g), dft_field(values, 16)) < 1e-9

    def test_divergence(self):
        u = scaled_to_prime(cosine_displacement(1.0, 10), 8.0)
        g = FourierField.constant([1.0, 0.0], 10)
        with pytest.raises(Divergence, match="not contracting"):
            neumann_inverse_apply(u, g)


class TestEvaluate:
    def test_constant(self):
        f = FourierField.constant(OMEGA, 5)
        np.testing.assert_allclose(evaluate(f, [0.3, 0.9]), OMEGA)

    def test_single_mode_at_origin(self):
        v = np.array([0.2 - 0.1j, 0.5])
        np.testing.assert_allclose(evaluate(FourierField.single_mode((2, 1), v, 4), [0.0, 0.0]), v)

    def test_real_fields_are_real(self):
        f = random_field(2, 8, 6, 1.0, seed=21)
        vals = evaluate(f, grid_points(2, 16))
        assert np.abs(vals.imag).max() < 1e-12

    def test_parseval(self):
        f = random_field(2, 10, 12, 1.0, seed=22, radius=5, real=False)
        vals = evaluate(f, grid_points(2, 32))
        energy = float((np.abs(vals) ** 2).sum(axis=-1).mean())
        assert energy == pytest.approx(float((np.abs(f.coeffs) ** 2).sum()), rel=1e-10)


class TestBanachAlgebra:
    """Sampled submultiplicativity of the plain norm."""

    def test_products(self):
        r = plain(0.6)
        rng = np.random.default_rng(0)
        for trial in range(100):
            K = int(rng.integers(3, 9))
            f = random_field(2, K, 4, 1.0, seed=trial, radius=3)
            g = random_field(2, K, 4, 1.0, seed=1000 + trial, radius=3)
            alpha = dot(random_field(2, K, 3, 1.0, seed=2000 + trial, radius=2), FourierField.constant([1.0, 0.0], K))
            assert norm(multiply(alpha, f), r) <= norm(alpha, r) * norm(f, r) * (1 + 1e-12)
            assert norm(dot(f, g), r) <= norm(f, r) * norm(g, r) * (1 + 1e-12)


class TestSerialization:
    def test_json_round_trip_is_bit_exact(self):
        f = random_field(3, 5, 10, 1e-3, seed=5)
        back = FourierField.from_json(f.to_json())
        np.testing.assert_array_equal(back.coeffs, f.coeffs)
        assert back.real and back.K == 5 and back.dim == 3

    def test_modes_outside_window_rejected(self):
        with pytest.raises(ValueError, match="outside the window"):
            FourierField.from_modes({(3, 3): (1.0, 0.0)}, 5)

    def test_window_counts(self):
        assert len(window(2, 15)) == 2 * 15 * 15 + 2 * 15 + 1

    def test_compact_drops_tiny_modes(self):
        f = FourierField.from_modes({(0, 0): (1.0, 0.0), (1, 0): (1e-20, 0.0)}, 3)
        assert f.compact().mode_count() == 1
