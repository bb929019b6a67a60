"""Elimination of far-from-resonance modes by a near-identity change of coordinates.

For X = ω + f we look for u on I⁻ with F(u) = I⁻(I+Du)⁻¹[ω + f∘(id+u)] = 0.
The path F(u_λ) = (1−λ)F(0) is followed by integrating
DF(u_λ) du/dλ = −F(0) with RK4 in λ, then a few Newton steps polish u.
"""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from RG import settings
from RG.errors import Divergence, NonConvergence, ResonantInput, SolverDiverged
from RG.fourier_core import (
    TWO_PI_I,
    FourierField,
    compose_displacement,
    jacobian_apply,
    jacobian_array,
    jacobian_field,
    matrix_field_apply,
    neumann_inverse_apply,
    norm,
    plain,
    prime,
    window,
)
from RG.kt_basis import theorem_radius
from RG.resonance import far_modes, project, resonant_mask

logger = logging.getLogger(__name__)


class EliminationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_steps: int = Field(default=8, ge=1)
    newton_polish: int = Field(default=2, ge=0)
    residual_tol: float = Field(default=1e-11, gt=0)
    linsolve: Literal["direct", "neumann"] = "direct"
    max_support_growth: float = Field(default=50.0, gt=0)
    order_cap: int = Field(default=settings.ORDER_CAP, ge=1)
    rho: float = Field(default=settings.DEFAULT_RHO, gt=0)
    rho_prime: float = Field(default=settings.DEFAULT_RHO_PRIME, gt=0)
    track_tolerance: float = Field(default=0.1, gt=0)
    neumann_max_iters: int = Field(default=200, ge=1)


class EliminationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    u: FourierField
    transformed: FourierField
    residual: float
    theorem_radius: float
    inside_theorem_ball: bool
    delta_hat: float
    residual_history: list[float] = []
    residual_plain_rho: float = 0.0
    u_norm_prime: float = 0.0
    f_norm_prime: float = 0.0

    def to_dict(self):
        return {
            "u": self.u.to_dict(),
            "transformed": self.transformed.to_dict(),
            "residual": self.residual,
            "residual_plain_rho": self.residual_plain_rho,
            "residual_history": self.residual_history,
            "theorem_radius": self.theorem_radius,
            "delta_hat": self.delta_hat,
            "inside_theorem_ball": self.inside_theorem_ball,
            "u_norm_prime": self.u_norm_prime,
            "f_norm_prime": self.f_norm_prime,
        }


def _omega(p):
    return p.omega_array


def _check_far_support(h, p, name):
    if not project(h, p, "plus").is_zero():
        raise ValueError(f"{name} must be supported on far-from-resonance modes")


def _pieces(u, f, p, order_cap=None):
    """(A, w) with A = Df∘(id+u) and w = (I+Du)⁻¹[ω + f∘(id+u)]."""
    composed = compose_displacement(f, u, order_cap=order_cap)
    w = neumann_inverse_apply(u, composed.add_constant(_omega(p)))
    A = compose_displacement(jacobian_field(f), u, order_cap=order_cap)
    return A, w


def transform(X, u, order_cap=None):
    """U(X) = (I+Du)⁻¹ X∘(id+u)."""
    return neumann_inverse_apply(u, compose_displacement(X, u, order_cap=order_cap))


def f_operator(u, f, p, order_cap=None):
    """F(u) = I⁻(I+Du)⁻¹[ω + f∘(id+u)]."""
    _check_far_support(u, p, "u")
    composed = compose_displacement(f, u, order_cap=order_cap)
    return project(neumann_inverse_apply(u, composed.add_constant(_omega(p))), p, "minus")


def df_apply(u, f, h, p, order_cap=None):
    """DF(u)h = I⁻(I+Du)⁻¹[Df∘(id+u)·h − Dh·(I+Du)⁻¹(ω + f∘(id+u))]."""
    _check_far_support(h, p, "h")
    A, w = _pieces(u, f, p, order_cap)
    inner = matrix_field_apply(A, h) - jacobian_apply(h, w)
    return project(neumann_inverse_apply(u, inner), p, "minus")


def _divisors(dim, K, p):
    """2πi k·ω over the window cube."""
    return TWO_PI_I * np.tensordot(_omega(p), window(dim, K).grid, axes=1)


def small_divisor_inverse(g, p):
    """(D·ω)⁻¹g: each far-from-resonance mode divided by 2πi k·ω."""
    res = resonant_mask(g.dim, g.K, p)
    bad = (g.mode_norms() > 0) & res
    if np.any(bad):
        win = g.window
        offending = win.modes[bad[win.positions]]
        raise ResonantInput(f"{len(offending)} resonant modes passed to the small-divisor inverse", offending[:10])
    div = _divisors(g.dim, g.K, p)
    safe = np.where(res, 1.0, div)
    result = FourierField(np.where(res, 0.0, g.coeffs / safe), g.K, real=g.real)
    sigma = p.sigma
    r = settings.DEFAULT_RHO_PRIME
    if norm(result, prime(r)) > 2.0 / sigma * norm(g, plain(r)) * (1 + 1e-12):
        logger.warning(f"⚠ small-divisor bound ‖(D·ω)⁻¹g‖' <= (2/σ)‖g‖ violated at σ={sigma}")
    return result


def _f_hat(f, h):
    """f̂h = Df·h − Dh·f."""
    return jacobian_apply(f, h) - jacobian_apply(h, f)


def _gather(coeffs, win, modes_out, modes_in):
    """coeffs at k − q for every (k, q) pair, zero outside the window; shape (lead..., out, in)."""
    diff = modes_out[:, None, :] - modes_in[None, :, :]
    inside = np.abs(diff).sum(axis=-1) <= win.K
    clipped = np.clip(diff + win.K, 0, 2 * win.K)
    pos = tuple(clipped[..., i] for i in range(win.dim))
    lead = (slice(None),) * (coeffs.ndim - win.dim)
    return coeffs[lead + pos] * inside


def _multiplication_matrix(mat, win, modes_out, modes_in):
    """Galerkin matrix of h ↦ M·h for a matrix-valued field M given as (m, n, *cube)."""
    blocks = _gather(mat, win, modes_out, modes_in)
    m, n, n_out, n_in = blocks.shape
    return blocks.transpose(2, 0, 3, 1).reshape(n_out * m, n_in * n)


def _advection_matrix(w, win, modes_out, modes_in):
    """Galerkin matrix of h ↦ Dh·w."""
    vals = _gather(w.coeffs, win, modes_out, modes_in)
    s = TWO_PI_I * np.einsum("jkq,qj->kq", vals, modes_in.astype(float))
    d = win.dim
    return np.einsum("kq,ab->kaqb", s, np.eye(d)).reshape(len(modes_out) * d, len(modes_in) * d)


def df_matrix(u, f, p, K=None, order_cap=None):
    """DF(u) as a dense matrix on the far-from-resonance coefficients (mode, component) of the window.

    Returns (matrix, modes); vectors are laid out as FourierField.to_vector(modes).
    """
    K = f.K if K is None else K
    win = window(f.dim, K)
    modes = far_modes(f.dim, K, p)
    A, w = _pieces(u, f, p, order_cap)
    d = f.dim
    A_mat = A.coeffs.reshape((d, d) + A.coeffs.shape[1:])
    if u.is_zero():
        B = _multiplication_matrix(A_mat, win, modes, modes) - _advection_matrix(w, win, modes, modes)
        return B, modes
    full = win.modes
    B = _multiplication_matrix(A_mat, win, full, modes) - _advection_matrix(w, win, full, modes)
    M = np.eye(len(full) * d) + _multiplication_matrix(jacobian_array(u), win, full, full)
    rows = np.flatnonzero(np.repeat(~resonant_mask(f.dim, K, p)[win.positions], d))
    return np.linalg.solve(M, B)[rows], modes


def _df0_neumann(g, f, p, cfg):
    """DF(0)⁻¹g = −(D·ω)⁻¹ Σ_n (I⁻f̂(D·ω)⁻¹)ⁿ g."""
    tol = max(cfg.residual_tol * 1e-3 * float(g.mode_norms().sum()), 1e-300)
    term = g
    total = g
    norms = [float(term.mode_norms().sum())]
    rising = 0
    for _ in range(cfg.neumann_max_iters):
        if norms[-1] < tol:
            break
        term = project(_f_hat(f, small_divisor_inverse(term, p)), p, "minus")
        total = total + term
        norms.append(float(term.mode_norms().sum()))
        rising = rising + 1 if norms[-1] >= norms[-2] else 0
        if rising >= 5 or not np.isfinite(norms[-1]):
            raise SolverDiverged("Neumann series for DF(0)⁻¹ diverges (is ‖f‖' < σ/4?)", norms)
    else:
        raise SolverDiverged(f"Neumann series for DF(0)⁻¹ did not converge in {cfg.neumann_max_iters} terms", norms)
    return -small_divisor_inverse(total, p)


def _solve_direct(u, f, g, p, cfg):
    mat, modes = df_matrix(u, f, p, order_cap=cfg.order_cap)
    try:
        vec = np.linalg.solve(mat, g.to_vector(modes))
    except np.linalg.LinAlgError as exc:
        raise SolverDiverged(f"DF(u) is singular on the truncated space: {exc}") from exc
    h = FourierField.from_vector(vec, modes, f.dim, f.K, real=g.real and f.real)
    return h.symmetrize() if h.real else h


def df0_solve(g, f, p, cfg):
    """h with DF(0)h = g, by the Neumann representation or the truncated linear system."""
    _check_far_support(g, p, "g")
    if cfg.linsolve == "neumann":
        f_size = norm(f, prime(cfg.rho))
        if f_size >= p.sigma / 4:
            logger.warning(f"⚠ ‖f‖' = {f_size:.3e} >= σ/4 = {p.sigma / 4:.3e}, Neumann inverse of DF(0) may diverge")
        h = _df0_neumann(g, f, p, cfg)
    else:
        h = _solve_direct(FourierField.zeros(f.dim, f.K), f, g, p, cfg)
    miss = norm(df_apply(FourierField.zeros(f.dim, f.K), f, h, p, cfg.order_cap) - g, plain(cfg.rho_prime))
    if miss > cfg.residual_tol:
        logger.warning(f"⚠ DF(0)h = g solved only to {miss:.3e}")
    return h


def _solve_df(u, f, g, p, cfg):
    """h with DF(u)h = g."""
    if cfg.linsolve == "direct":
        return _solve_direct(u, f, g, p, cfg)
    if u.is_zero():
        return df0_solve(g, f, p, cfg)
    # fixed point h ← h + DF(0)⁻¹(g − DF(u)h)
    h = df0_solve(g, f, p, cfg)
    history = []
    for _ in range(cfg.neumann_max_iters):
        miss = g - df_apply(u, f, h, p, cfg.order_cap)
        history.append(norm(miss, plain(cfg.rho_prime)))
        if history[-1] < cfg.residual_tol * 1e-3:
            return h
        if len(history) > 5 and history[-1] >= history[-6]:
            raise SolverDiverged("fixed-point solve of DF(u)h = g stalled", history)
        h = h + df0_solve(miss, f, p, cfg)
    raise SolverDiverged(f"fixed-point solve of DF(u)h = g did not converge in {cfg.neumann_max_iters} iterations", history)


def _result(X, u, transformed, f, p, cfg, history):
    minus = project(transformed, p, "minus")
    eps_hat, delta_hat = theorem_radius(p.sigma, cfg.rho, cfg.rho_prime, _omega(p))
    f_prime = norm(f, prime(cfg.rho))
    return EliminationResult(
        u=u,
        transformed=transformed,
        residual=norm(minus, plain(cfg.rho_prime)),
        residual_plain_rho=norm(minus, plain(cfg.rho)),
        residual_history=history,
        theorem_radius=eps_hat,
        delta_hat=delta_hat,
        inside_theorem_ball=f_prime < eps_hat,
        u_norm_prime=norm(u, prime(cfg.rho_prime)),
        f_norm_prime=f_prime,
    )


def eliminate(X, p, cfg=None):
    """Find U = id + u with I⁻ U(X) = 0 and return u with the transformed field."""
    cfg = cfg or EliminationConfig()
    if X.dim != p.dim:
        raise ValueError(f"field dimension {X.dim} does not match frequency dimension {p.dim}")
    f = X.add_constant(-_omega(p))
    F0 = project(f, p, "minus")
    zero = FourierField.zeros(X.dim, X.K, real=X.real)
    if F0.is_zero():
        return _result(X, zero, X, f, p, cfg, [0.0])

    eps_hat, _ = theorem_radius(p.sigma, cfg.rho, cfg.rho_prime, _omega(p))
    if norm(f, prime(cfg.rho)) >= eps_hat:
        logger.debug(f"perturbation ‖f‖' = {norm(f, prime(cfg.rho)):.3e} lies outside the theorem ball ε̂ = {eps_hat:.3e}")

    r = plain(cfg.rho_prime)
    f0_size = norm(F0, r)
    rhs = -F0
    dl = 1.0 / cfg.lambda_steps
    u = zero
    history = []
    try:
        for step in range(1, cfg.lambda_steps + 1):
            k1 = _solve_df(u, f, rhs, p, cfg)
            k2 = _solve_df(u + 0.5 * dl * k1, f, rhs, p, cfg)
            k3 = _solve_df(u + 0.5 * dl * k2, f, rhs, p, cfg)
            k4 = _solve_df(u + dl * k3, f, rhs, p, cfg)
            u = u + (dl / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            history.append(norm(f_operator(u, f, p, cfg.order_cap), r))
            expected = (1.0 - step * dl) * f0_size
            if step < cfg.lambda_steps and abs(history[-1] - expected) > cfg.track_tolerance * expected:
                logger.warning(f"⚠ homotopy step {step}: ‖F(u)‖ = {history[-1]:.3e} drifts from (1-λ)‖F(0)‖ = {expected:.3e}")
            if not np.isfinite(history[-1]) or history[-1] > 10 * f0_size:
                raise SolverDiverged(f"homotopy left the perturbative regime at step {step}", history)

        for _ in range(cfg.newton_polish):
            Fu = f_operator(u, f, p, cfg.order_cap)
            if Fu.is_zero():
                break
            u = u - _solve_df(u, f, Fu, p, cfg)
            history.append(norm(f_operator(u, f, p, cfg.order_cap), r))
    except (Divergence, NonConvergence, np.linalg.LinAlgError) as exc:
        raise SolverDiverged(f"elimination failed: {exc}", history) from exc

    limit = cfg.max_support_growth * max(X.mode_count(), 1)
    if u.mode_count() > limit:
        logger.warning(f"⚠ u carries {u.mode_count()} modes, more than {cfg.max_support_growth}x the input support")

    transformed = transform(X, u, cfg.order_cap)
    result = _result(X, u, transformed, f, p, cfg, history)
    if not result.residual <= cfg.residual_tol:
        raise SolverDiverged(
            f"elimination residual {result.residual:.3e} above tolerance {cfg.residual_tol:.1e}", history
        )
    logger.debug(f"✓ eliminated {len(far_modes(X.dim, X.K, p))} far modes, residual {result.residual:.3e}")
    return result
