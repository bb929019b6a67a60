"""The renormalisation step R = F∘T∘U and its iteration."""

import logging
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from RG import settings
from RG.errors import RenormError, RescaleDegenerate, WindowOverflow
from RG.fourier_core import FourierField, mean, nonconstant, norm, plain, prime
from RG.homotopy_eliminator import EliminationConfig, EliminationResult, eliminate
from RG.kt_basis import KTBasis, choose_params, sigma_bound
from RG.resonance import ResonanceParams, project

logger = logging.getLogger(__name__)

CONVERGED = "CONVERGED"
DIVERGED = "DIVERGED"
MAXITER = "MAXITER"


class RenormConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    basis: KTBasis
    params: ResonanceParams
    elim: EliminationConfig = EliminationConfig()
    K: int = Field(default=settings.DEFAULT_K, ge=1)
    rho: float = Field(default=settings.DEFAULT_RHO, gt=0)
    rho_prime: float = Field(default=settings.DEFAULT_RHO_PRIME, gt=0)
    min_rescale: float = Field(default=settings.MIN_RESCALE, ge=0)
    max_iters: int = Field(default=10, ge=1)
    rescale_mode: Literal["mean_dual", "lambda1"] = "mean_dual"
    on_overflow: Literal["raise", "drop"] = "drop"
    converge_tol: float = Field(default=1e-12, gt=0)
    divergence_factor: float = Field(default=10.0, gt=1)
    quiet: bool = False

    @model_validator(mode="after")
    def _consistent(self):
        if not self.params.kappa * self.rho < self.rho_prime:
            raise ValueError(f"need κρ < ρ', got κ={self.params.kappa}, ρ={self.rho}, ρ'={self.rho_prime}")
        if not self.rho_prime < self.rho:
            raise ValueError(f"need ρ' < ρ, got ρ={self.rho}, ρ'={self.rho_prime}")
        if self.params.dim != self.basis.d or not np.allclose(self.params.omega_array, self.basis.omega, rtol=0, atol=1e-14):
            raise ValueError("resonance parameters were built for a different frequency than the basis")
        if not self.params.sigma < sigma_bound(self.basis):
            raise ValueError(f"σ = {self.params.sigma} must stay below ½‖ω̄‖⁻¹ = {sigma_bound(self.basis):.6f}")
        return self

    @classmethod
    def build(cls, basis, K=None, rho=None, rho_prime=None, sigma=None, kappa=None, **kwargs):
        """Config for a basis; σ and κ are chosen automatically unless given."""
        K = settings.DEFAULT_K if K is None else K
        rho = settings.DEFAULT_RHO if rho is None else rho
        rho_prime = settings.DEFAULT_RHO_PRIME if rho_prime is None else rho_prime
        if sigma is None:
            params = choose_params(basis, rho, rho_prime, K)
        else:
            if kappa is None:
                kappa = 0.99 * rho_prime / rho
            params = ResonanceParams(omega=tuple(float(x) for x in basis.omega), sigma=sigma, kappa=kappa)
        elim = kwargs.pop("elim", None) or EliminationConfig(rho=rho, rho_prime=rho_prime)
        return cls(basis=basis, params=params, elim=elim, K=K, rho=rho, rho_prime=rho_prime, **kwargs)

    @property
    def omega(self):
        return self.basis.omega


class StepReport(BaseModel):
    iter: int
    norm_prime: float
    nonconstant_norm: float
    mean_re: list[float]
    mean_im: list[float]
    rescale_re: float
    rescale_im: float
    residual_minus: float
    mode_count: int
    unstable_coords: list[float] = []
    status: str = "ok"
    error: Optional[str] = None

    def csv_row(self, status=None):
        return [self.iter, repr(self.norm_prime), repr(self.nonconstant_norm), repr(self.rescale_re),
                repr(self.rescale_im), self.mode_count, status or self.status]


CSV_HEADER = ["iter", "norm_prime", "nonconstant_norm", "rescale_re", "rescale_im", "mode_count", "status"]


class StepOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    field: FourierField
    report: StepReport
    elimination: EliminationResult
    rescale: complex


class IterationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    reports: list[StepReport]
    final: FourierField
    status: str
    growth_ratios: list[float] = []
    error: Optional[str] = None


def _check_dim(X, b):
    if X.dim != b.d:
        raise ValueError(f"field dimension {X.dim} does not match basis dimension {b.d}")


def _reindex(X, new_modes, matrix, on_overflow):
    win = X.window
    modes = X.modes()
    vals = X.coeffs[(slice(None),) + win.positions_of(modes)]
    targets = new_modes(modes)
    inside = np.abs(targets).sum(axis=1) <= X.K
    if not np.all(inside):
        lost = modes[~inside]
        mass = float(np.abs(vals[:, ~inside]).sum())
        if on_overflow == "raise":
            raise WindowOverflow(f"{len(lost)} modes leave the window |k| <= {X.K} under pullback", lost, mass)
        logger.warning(f"⚠ pullback dropped {len(lost)} modes outside the window (coefficient mass {mass:.3e})")
    arr = np.zeros_like(X.coeffs)
    arr[(slice(None),) + win.positions_of(targets[inside])] = matrix @ vals[:, inside]
    return FourierField(arr, X.K, real=X.real)


def pullback_T(X, b, params=None, on_overflow="raise"):
    """T(X) = T⁻¹·X∘T: mode k moves to T*k with coefficient T⁻¹X_k."""
    _check_dim(X, b)
    if params is not None:
        minus = project(X, params, "minus")
        if not minus.is_zero():
            logger.warning(f"⚠ pullback drops {minus.mode_count()} far-from-resonance modes (mass {float(minus.mode_norms().sum()):.3e})")
            X = project(X, params, "plus")
    return _reindex(X, lambda modes: modes @ b.T, b.T_inv.astype(float), on_overflow)


def pullback_inverse(X, b, on_overflow="raise"):
    """Inverse of pullback_T: mode k moves to (T*)⁻¹k with coefficient T·X_k."""
    _check_dim(X, b)
    return _reindex(X, lambda modes: modes @ b.T_inv, b.T.astype(float), on_overflow)


def rescale_time(X, b, min_rescale=None):
    """X/(ω̄·E(X)) together with the factor ω̄·E(X)."""
    min_rescale = settings.MIN_RESCALE if min_rescale is None else min_rescale
    c = complex(b.omega_bar @ mean(X))
    if not abs(c) >= min_rescale:
        raise RescaleDegenerate(f"|ω̄·E(X)| = {abs(c):.3e} below min_rescale = {min_rescale}", c)
    return X / c, c


def step_report(X, cfg, rescale, iteration=0, residual_minus=None):
    """Diagnostics of a field relative to ω."""
    r = prime(cfg.rho)
    avg = mean(X)
    if residual_minus is None:
        residual_minus = norm(project(X, cfg.params, "minus"), plain(cfg.rho_prime))
    coords = cfg.basis.coordinates((avg - cfg.omega).real)[1:]
    return StepReport(
        iter=iteration,
        norm_prime=norm(X.add_constant(-cfg.omega), r),
        nonconstant_norm=norm(nonconstant(X), r),
        mean_re=avg.real.tolist(),
        mean_im=avg.imag.tolist(),
        rescale_re=float(np.real(rescale)),
        rescale_im=float(np.imag(rescale)),
        residual_minus=residual_minus,
        mode_count=X.mode_count(),
        unstable_coords=coords.tolist(),
    )


def renorm_step_detailed(X, cfg, iteration=1):
    """One application of R with its intermediate results."""
    _check_dim(X, cfg.basis)
    if X.K != cfg.K:
        raise ValueError(f"field window K={X.K} does not match config K={cfg.K}")
    elimination = eliminate(X, cfg.params, cfg.elim)
    resonant = project(elimination.transformed, cfg.params, "plus")
    pulled = pullback_T(resonant, cfg.basis, on_overflow=cfg.on_overflow)
    if cfg.rescale_mode == "lambda1":
        c = complex(1.0 / cfg.basis.lambda1)
        out = pulled / c
    else:
        out, c = rescale_time(pulled, cfg.basis, cfg.min_rescale)
    report = step_report(out, cfg, c, iteration)
    return StepOutcome(field=out, report=report, elimination=elimination, rescale=c)


def renorm_step(X, cfg):
    """R(X) = X̃/(ω̄·E(X̃)) with X̃ = T∘U(X)."""
    outcome = renorm_step_detailed(X, cfg)
    return outcome.field, outcome.report


def _growth(prev, curr):
    prev, curr = np.asarray(prev), np.asarray(curr)
    if len(prev) == 0:
        return float("nan")
    if len(prev) == 1:
        return float(curr[0] / prev[0]) if prev[0] != 0 else float("nan")
    base = np.abs(prev).sum()
    return float(np.abs(curr).sum() / base) if base > 0 else float("nan")


def renorm_iterate(X, cfg, max_iters=None):
    """Iterate R until convergence to ω, divergence or max_iters.

    A failing step is recorded as DIVERGED, never raised; a field that does not
    fit the config raises ValueError up front.
    """
    max_iters = max_iters or cfg.max_iters
    _check_dim(X, cfg.basis)
    if X.K != cfg.K:
        raise ValueError(f"field window K={X.K} does not match config K={cfg.K}")
    start = step_report(X, cfg, 1.0, 0)
    initial = start.norm_prime
    reports = []
    growth = []
    prev_coords = start.unstable_coords
    status, error = MAXITER, None
    field = X
    for n in tqdm(range(1, max_iters + 1), desc="Renormalising", disable=cfg.quiet):
        try:
            outcome = renorm_step_detailed(field, cfg, n)
        except (RenormError, ValueError, FloatingPointError) as exc:
            error = f"{type(exc).__name__}: {exc}"
            failed = step_report(field, cfg, 0.0, n).model_copy(update={"status": "error", "error": error})
            reports.append(failed)
            status = DIVERGED
            if not cfg.quiet:
                tqdm.write(f"✗ step {n}: {error}")
            break
        field, report = outcome.field, outcome.report
        reports.append(report)
        growth.append(_growth(prev_coords, report.unstable_coords))
        prev_coords = report.unstable_coords
        if not cfg.quiet:
            tqdm.write(f"step {n}: ‖X−ω‖' = {report.norm_prime:.3e}, nonconstant = {report.nonconstant_norm:.3e}, modes = {report.mode_count}")
        if report.norm_prime < cfg.converge_tol:
            status = CONVERGED
            break
        if report.norm_prime > cfg.divergence_factor * initial:
            status = DIVERGED
            break
    logger.info(f"✓ renormalisation finished: {status} after {len(reports)} steps")
    return IterationResult(reports=reports, final=field, status=status, growth_ratios=growth, error=error)
