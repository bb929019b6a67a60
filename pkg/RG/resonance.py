"""Resonant / far-from-resonance splitting of Fourier indices and the T-cone check."""

import logging
from enum import Enum
from functools import lru_cache
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from RG import settings
from RG.errors import ConeViolation
from RG.fourier_core import window

logger = logging.getLogger(__name__)

CONE_SLACK = 1e-12


class Resonance(str, Enum):
    RESONANT = "resonant"
    FAR = "far_from_resonance"


class ResonanceParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    omega: tuple[float, ...]
    sigma: float = Field(gt=0)
    kappa: float = Field(gt=0, lt=1)

    @field_validator("omega")
    @classmethod
    def _dimension(cls, value):
        if len(value) < 2:
            raise ValueError(f"frequency needs dimension >= 2, got {len(value)}")
        if not all(np.isfinite(value)):
            raise ValueError("frequency components must be finite")
        return value

    @property
    def omega_array(self):
        return np.array(self.omega, dtype=float)

    @property
    def dim(self):
        return len(self.omega)


class ConeReport(BaseModel):
    max_ratio: float
    ok: bool
    kappa: float
    sigma: float
    sampled_directions: int
    integer_max_ratio: float
    offending: list[list[float]] = []


def classify(k, p):
    """k ∈ I⁻ iff |ω·k| > σ‖k‖; ties are resonant."""
    k = np.asarray(k)
    if len(k) != p.dim:
        raise ValueError(f"index {tuple(k)} does not match frequency dimension {p.dim}")
    divisor = abs(float(p.omega_array @ k))
    bound = p.sigma * float(np.abs(k).sum())
    if bound > 0 and abs(divisor - bound) <= settings.BOUNDARY_REL_TOL * bound:
        logger.warning(f"⚠ index {tuple(int(x) for x in k)} sits on the resonance boundary (|ω·k|={divisor:.15g}, σ‖k‖={bound:.15g})")
    return Resonance.FAR if divisor > bound else Resonance.RESONANT


@lru_cache(maxsize=128)
def resonant_mask(dim, K, p):
    """Boolean cube over the window, True on I⁺ (k = 0 included)."""
    win = window(dim, K)
    divisor = np.abs(np.tensordot(p.omega_array, win.grid, axes=1))
    bound = p.sigma * win.l1
    mask = (divisor <= bound) & win.mask
    near = win.mask & (bound > 0) & (np.abs(divisor - bound) <= settings.BOUNDARY_REL_TOL * bound)
    if np.any(near):
        logger.warning(f"⚠ {int(near.sum())} indices within {settings.BOUNDARY_REL_TOL:g} of the resonance boundary for σ={p.sigma}")
    mask.setflags(write=False)
    return mask


def project(f, p, part: Literal["plus", "minus"]):
    """I⁺ keeps resonant modes, I⁻ keeps far-from-resonance modes."""
    if f.dim != p.dim:
        raise ValueError(f"field dimension {f.dim} does not match frequency dimension {p.dim}")
    mask = resonant_mask(f.dim, f.K, p)
    if part == "plus":
        return f.masked(mask)
    if part == "minus":
        return f.masked(~mask)
    raise ValueError(f"part must be 'plus' or 'minus', got {part!r}")


def far_modes(dim, K, p):
    """Indices of I⁻ inside the window, in window order."""
    win = window(dim, K)
    return win.modes[~resonant_mask(dim, K, p)[win.positions]]


def resonant_modes(dim, K, p):
    win = window(dim, K)
    return win.modes[resonant_mask(dim, K, p)[win.positions]]


def _ratios(T_star, xs):
    return np.abs(xs @ T_star.T).sum(axis=1) / np.abs(xs).sum(axis=1)


def _in_cone(xs, omega, sigma):
    # slack is absolute in ‖ω‖‖x‖: computed boundary points must survive as σ → 0
    size = np.abs(xs).sum(axis=1)
    return np.abs(xs @ omega) <= sigma * size + CONE_SLACK * np.abs(omega).sum() * size


def _planar_candidates(T_star, omega, sigma):
    """Breakpoints of ‖T*x‖/‖x‖ on the unit l1 diamond, restricted to the cone."""
    candidates = []
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            # x(a) = (s1 a, s2 (1-a)), a in [0, 1]
            base = np.array([0.0, s2])
            slope = np.array([s1, -s2])
            params = [0.0, 1.0]
            for sign in (1.0, -1.0):
                denom = omega @ slope
                if denom != 0:
                    params.append((sign * sigma - omega @ base) / denom)
            for row in T_star:
                denom = row @ slope
                if denom != 0:
                    params.append(-(row @ base) / denom)
            for a in params:
                if 0.0 <= a <= 1.0:
                    candidates.append(base + a * slope)
    xs = np.array(candidates)
    return xs[_in_cone(xs, omega, sigma)]


def _sampled_candidates(omega, sigma, n_samples):
    rng = np.random.default_rng(0)
    y = rng.standard_normal((n_samples, len(omega)))
    y -= np.outer(y @ omega, omega) / (omega @ omega)
    y /= np.abs(y).sum(axis=1, keepdims=True)
    # push along ω up to (and a little past) the cone boundary, then filter
    c = rng.uniform(-1.2, 1.2, size=(n_samples, 1))
    xs = y + c * sigma * omega / (omega @ omega)
    xs = np.vstack([y, xs])
    return xs[_in_cone(xs, omega, sigma)]


def check_cone_inclusion(T, p, n_samples=None, K=None, raise_on_violation=True):
    """max{‖T*x‖/‖x‖ : |ω·x| ≤ σ‖x‖} compared against κ.

    Exact over the cone breakpoints for d = 2, sampled near the plane ⟂ ω for
    d ≥ 3; in both cases every resonant integer index with ‖k‖ ≤ K is checked too.
    """
    T = np.asarray(T)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] != p.dim:
        raise ValueError(f"T must be a {p.dim}x{p.dim} matrix, got shape {T.shape}")
    T_star = T.T.astype(float)
    omega = p.omega_array
    n_samples = n_samples or settings.CONE_SAMPLES
    K = settings.DEFAULT_K if K is None else K

    if p.dim == 2:
        xs = _planar_candidates(T_star, omega, p.sigma)
    else:
        xs = _sampled_candidates(omega, p.sigma, n_samples)
    ratios = _ratios(T_star, xs) if len(xs) else np.zeros(0)

    ks = resonant_modes(p.dim, K, p)
    ks = ks[np.abs(ks).sum(axis=1) > 0].astype(float)
    int_ratios = _ratios(T_star, ks) if len(ks) else np.zeros(0)

    max_ratio = float(max(ratios.max(initial=0.0), int_ratios.max(initial=0.0)))
    bad = np.vstack([xs[ratios >= p.kappa], ks[int_ratios >= p.kappa]])
    offending = [list(map(float, x / np.abs(x).sum())) for x in bad[:10]]
    report = ConeReport(
        max_ratio=max_ratio,
        ok=max_ratio < p.kappa,
        kappa=p.kappa,
        sigma=p.sigma,
        sampled_directions=len(xs),
        integer_max_ratio=float(int_ratios.max(initial=0.0)),
        offending=offending,
    )
    if not report.ok and raise_on_violation:
        raise ConeViolation(
            f"cone condition fails: max ‖T*x‖/‖x‖ = {max_ratio:.6f} >= κ = {p.kappa} at σ = {p.sigma}",
            offending,
            max_ratio,
        )
    return report
