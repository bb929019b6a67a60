"""Flow integration on the lifted torus, winding ratios and the one-step conjugacy check."""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from RG.errors import StepTooLarge
from RG.fourier_core import TWO_PI_I, evaluate, evaluate_jacobian
from RG.renorm_operator import renorm_step_detailed

logger = logging.getLogger(__name__)

ESCAPE_RADIUS = 10.0
WINDING_TOL = 1e-2


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    points: np.ndarray
    theta0: np.ndarray
    max_error_estimate: float = 0.0

    def at(self, t):
        """Point at the stored time closest to t."""
        return self.points[int(np.argmin(np.abs(self.times - t)))]


class WindingEstimate(BaseModel):
    w: list[float]
    confident: bool
    status: Literal["defined", "undefined", "bounded"]
    spread: float = 0.0


def _vector_field(X):
    """Real part of X on the lifted torus, with the series pre-gathered."""
    modes = X.modes()
    vals = X.coeffs[(slice(None),) + X.window.positions_of(modes)].T
    freqs = TWO_PI_I * modes.T

    def rhs(theta):
        wrapped = np.mod(theta, 1.0)
        return (np.exp(wrapped @ freqs) @ vals).real

    return rhs


def _rk4(rhs, y, dt):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(X, theta0, t_end, dt, check_every=64, error_tol=1e-6, quiet=True):
    """Classical RK4 on R^d with Kahan-compensated accumulation of the state."""
    if not X.real:
        raise ValueError("flow integration needs a real-flagged field")
    if not dt > 0 or not t_end > 0:
        raise ValueError(f"need dt > 0 and t_end > 0, got dt={dt}, t_end={t_end}")
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (X.dim,):
        raise ValueError(f"theta0 must have shape ({X.dim},), got {theta0.shape}")

    rhs = _vector_field(X)
    n_steps = int(round(t_end / dt))
    points = np.empty((n_steps + 1, X.dim))
    points[0] = theta0
    y = theta0.copy()
    comp = np.zeros_like(y)
    worst = 0.0
    for n in tqdm(range(n_steps), desc="Integrating", disable=quiet):
        inc = _rk4(rhs, y, dt)
        if n % check_every == 0:
            half = _rk4(rhs, y, 0.5 * dt)
            half = half + _rk4(rhs, y + half, 0.5 * dt)
            err = float(np.abs(inc - half).max())
            worst = max(worst, err)
            if err > error_tol:
                raise StepTooLarge(f"local error {err:.2e} above {error_tol:.0e} at t = {n * dt:g}; reduce dt", err)
        yk = inc - comp
        total = y + yk
        comp = (total - y) - yk
        y = total
        points[n + 1] = y
    times = dt * np.arange(n_steps + 1)
    return Trajectory(times=times, points=points, theta0=theta0, max_error_estimate=worst)


def winding_ratio(traj, tol=WINDING_TOL):
    """Normalised displacement at t_end, checked against the estimate at t_end/2."""
    disp = traj.points - traj.theta0
    end = disp[-1]
    mid = disp[len(disp) // 2]
    d = len(end)
    if np.abs(end).sum() <= ESCAPE_RADIUS:
        return WindingEstimate(w=[0.0] * d, confident=False, status="bounded")
    w_end = end / np.abs(end).sum()
    mid_norm = np.abs(mid).sum()
    if mid_norm == 0:
        return WindingEstimate(w=w_end.tolist(), confident=False, status="undefined", spread=float("inf"))
    spread = float(np.abs(w_end - mid / mid_norm).sum())
    if spread > tol:
        return WindingEstimate(w=w_end.tolist(), confident=False, status="undefined", spread=spread)
    return WindingEstimate(w=w_end.tolist(), confident=True, status="defined", spread=spread)


def conjugacy_residual(X, outcome, b, rescale=None, grid_n=32):
    """max over a grid of ‖c·Dh(θ)Y(θ) − X(h(θ))‖ with h(θ) = Tθ + u(Tθ)."""
    Y = outcome.field
    u = outcome.elimination.u
    c = outcome.rescale if rescale is None else rescale
    d = X.dim
    axes = [np.arange(grid_n) / grid_n] * d
    theta = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    T = b.T.astype(float)
    Ttheta = theta @ T.T
    h = Ttheta + evaluate(u, Ttheta).real
    Dh = (np.eye(d) + evaluate_jacobian(u, Ttheta)) @ T
    lhs = c * np.einsum("nij,nj->ni", Dh, evaluate(Y, theta))
    rhs = evaluate(X, h)
    return float(np.abs(lhs - rhs).sum(axis=1).max())


def winding_after_step(X, cfg, theta0, t_end, dt):
    """Winding ratio of X against T̂ applied to the ratio of R(X)."""
    outcome = renorm_step_detailed(X, cfg)
    before = winding_ratio(integrate(X, theta0, t_end, dt))
    after = winding_ratio(integrate(outcome.field, theta0, t_end, dt))
    mapped = cfg.basis.T.astype(float) @ np.array(after.w)
    if np.abs(mapped).sum() > 0:
        mapped = mapped / np.abs(mapped).sum()
    discrepancy = float(np.abs(mapped - np.array(before.w)).sum())
    return {
        "before": before.model_dump(),
        "after": after.model_dump(),
        "mapped": mapped.tolist(),
        "discrepancy": discrepancy,
    }
