"""Linearisation of R at ω: assembled matrix, spectrum, projections and stable-manifold shooting."""

import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from RG.errors import BadSpectrum, RenormError, ShootingFailed, WindowOverflow
from RG.fourier_core import FourierField, mean, norm, prime, window
from RG.renorm_operator import renorm_step, renorm_step_detailed
from RG.resonance import resonant_mask

logger = logging.getLogger(__name__)


class LinearizedOperator(BaseModel):
    """DR(ω) on the window coefficients (k, i), row index = mode_index(k)·d + i."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    basis: object
    params: object
    K: int
    matrix: np.ndarray
    l_matrix: np.ndarray
    modes: np.ndarray
    dropped: int = 0

    @property
    def d(self):
        return self.basis.d

    def index(self, k, i):
        return self.mode_index(k) * self.d + i

    def mode_index(self, k):
        win = window(self.d, self.K)
        return int(_index_cube(self.d, self.K)[win.position(k)])

    def to_vector(self, f):
        return f.to_vector(self.modes)

    def to_field(self, vec, real=False):
        return FourierField.from_vector(vec, self.modes, self.d, self.K, real=real)

    def apply(self, f):
        out = self.to_field(self.matrix @ self.to_vector(f), real=f.real)
        return out

    def constant_block(self):
        zero = self.mode_index((0,) * self.d) * self.d
        return self.matrix[zero:zero + self.d, zero:zero + self.d]

    def nonconstant_block(self):
        zero = self.mode_index((0,) * self.d) * self.d
        keep = np.r_[0:zero, zero + self.d:self.matrix.shape[0]]
        return self.matrix[np.ix_(keep, keep)]


class NilpotencyReport(BaseModel):
    nilpotency_index: int
    max_residual: float
    bound: float
    norm_sequence: list[float] = []
    norm_ratios: list[float] = []
    decreasing: bool = True


class FiniteDifferenceReport(BaseModel):
    n_dirs: int
    t: float
    max_rel_error: float
    errors: list[float]


def _index_cube(d, K):
    win = window(d, K)
    idx = np.full(win.shape, -1, dtype=np.int64)
    idx[win.positions] = np.arange(len(win))
    return idx


def build_dr_matrix(b, p, K, strict=True):
    """DR(ω)f = Lf − [ω̄·E(Lf)]ω with Lf = λ₁T(I⁺f), assembled mode by mode."""
    d = b.d
    win = window(d, K)
    modes = win.modes
    idx = _index_cube(d, K)
    res = resonant_mask(d, K, p)[win.positions]
    n = len(modes) * d
    L = np.zeros((n, n))
    block = b.lambda1 * b.T_inv.astype(float)
    images = modes @ b.T
    inside = np.abs(images).sum(axis=1) <= K
    overflow = res & ~inside
    if np.any(overflow):
        lost = modes[overflow]
        if strict:
            raise WindowOverflow(f"{len(lost)} resonant modes map outside the window |k| <= {K}", lost)
        logger.warning(f"⚠ DR(ω): dropping {len(lost)} resonant columns whose images leave the window")
    for col in np.flatnonzero(res & inside):
        row = idx[tuple(images[col] + K)]
        L[row * d:(row + 1) * d, col * d:(col + 1) * d] = block
    DR = L.copy()
    zero = idx[win.zero_position]
    # rank-one correction: −ω ω̄ᵀ applied to the k = 0 rows of Lf
    DR[zero * d:(zero + 1) * d, :] -= np.outer(b.omega, b.omega_bar @ L[zero * d:(zero + 1) * d, :])
    logger.debug(f"✓ DR(ω) assembled: {n}x{n}, {int((res & inside).sum())} resonant columns")
    return LinearizedOperator(basis=b, params=p, K=K, matrix=DR, l_matrix=L, modes=modes, dropped=int(overflow.sum()))


def constant_block_eigen(L):
    """Eigenvalues and eigenvectors of the k = 0 block, by descending modulus."""
    vals, vecs = np.linalg.eig(L.constant_block())
    order = np.argsort(-np.abs(vals), kind="stable")
    return vals[order], vecs[:, order]


def eigen_spectrum(L, dense_check=False, nilpotency=None):
    """Spectrum of DR(ω): the k = 0 block eigenvalues plus exact zeros from the nilpotent remainder.

    The zeros are only reported once some power of the non-constant block is
    exactly zero; otherwise BadSpectrum is raised.
    """
    nilpotency = nilpotency or nilpotency_check(L)
    if nilpotency.max_residual != 0.0:
        raise BadSpectrum(
            f"non-constant block is not nilpotent: ((I−E)L)^{nilpotency.nilpotency_index} "
            f"has residual {nilpotency.max_residual:.3e}"
        )
    vals, _ = constant_block_eigen(L)
    spectrum = list(vals.astype(complex)) + [0j] * (L.matrix.shape[0] - L.d)
    spectrum.sort(key=lambda z: -abs(z))
    if dense_check:
        dense = np.linalg.eigvals(L.matrix)
        dense = dense[np.argsort(-np.abs(dense), kind="stable")]
        gap = float(np.abs(np.abs(dense[: L.d]) - np.abs(np.array(spectrum[: L.d]))).max())
        logger.info(f"dense eigensolve agrees with the block spectrum to {gap:.2e}")
    return spectrum


def chain_lengths(L):
    """For each window mode, how many times (I−E)L can be applied before its support dies."""
    d, K = L.d, L.K
    win = window(d, K)
    res = resonant_mask(d, K, L.params)
    lengths = np.zeros(len(win), dtype=np.int64)
    T = L.basis.T
    memo = {}

    def walk(k):
        key = tuple(int(x) for x in k)
        if key in memo:
            return memo[key]
        steps = 0
        current = np.array(key)
        path = []
        # follow k → T*k while the mode is a nonzero resonant index whose image stays in the window
        while True:
            ck = tuple(int(x) for x in current)
            if ck in memo:
                steps += memo[ck]
                break
            if not any(ck) or not res[win.position(ck)]:
                break
            image = current @ T
            if np.abs(image).sum() > K:
                break
            path.append(ck)
            steps += 1
            current = image
            if steps > len(win):
                raise RenormError("resonant chain does not terminate inside the window")
        for j, node in enumerate(path):
            memo.setdefault(node, steps - j)
        memo[key] = steps
        return steps

    for m, k in enumerate(win.modes):
        lengths[m] = walk(k)
    return lengths


def _weights(L, rho):
    win = window(L.d, L.K)
    return np.repeat(win.weights(prime(rho))[win.positions], L.d)


def operator_norm(matrix, L, rho, weights=None):
    """Operator norm induced by the weighted norm ‖·‖'_ρ on window coefficients."""
    if weights is None:
        weights = _weights(L, rho)
        if matrix.shape[0] != len(weights):
            weights = weights[_nonconstant_rows(L)]
    scaled = np.abs(matrix) * weights[:, None] / weights[None, :]
    return float(scaled.sum(axis=0).max(initial=0.0))


def _nonconstant_rows(L):
    zero = L.mode_index((0,) * L.d) * L.d
    return np.r_[0:zero, zero + L.d:L.matrix.shape[0]]


def nilpotency_bound(L):
    """Longest possible resonant chain: λ₁ⁿ min|ω·k| ≤ σK."""
    win = window(L.d, L.K)
    res = resonant_mask(L.d, L.K, L.params)[win.positions]
    ks = win.modes[res & (np.abs(win.modes).sum(axis=1) > 0)]
    if len(ks) == 0:
        return 1.0
    smallest = float(np.abs(ks @ L.basis.omega).min())
    lam = abs(L.basis.lambda1)
    return 1.0 + max(0.0, math.log(L.params.sigma * L.K / smallest) / math.log(lam)) + 1.0


def nilpotency_check(L, rho=None):
    """Smallest n with ((I−E)L)ⁿ = 0, found by support chasing and confirmed on the matrix.

    Powers are taken on the rows and columns the block actually touches; the
    others stay zero in every power.
    """
    index = int(chain_lengths(L).max(initial=0)) + 1
    N = L.nonconstant_block()
    touched = np.abs(N).sum(axis=0) + np.abs(N).sum(axis=1)
    active = np.flatnonzero(touched)
    N = N[np.ix_(active, active)]
    weights = None if rho is None else _weights(L, rho)[_nonconstant_rows(L)][active]
    power = N.copy()
    sequence = []
    for _ in range(1, index):
        if rho is not None:
            sequence.append(operator_norm(power, L, rho, weights))
        power = power @ N
    max_residual = float(np.abs(power).max(initial=0.0))
    if max_residual != 0.0:
        logger.warning(f"⚠ ((I−E)L)^{index} has residual {max_residual:.3e}, expected an exact zero")
    ratios = [b / a for a, b in zip(sequence, sequence[1:]) if a > 0]
    return NilpotencyReport(
        nilpotency_index=index,
        max_residual=max_residual,
        bound=nilpotency_bound(L),
        norm_sequence=sequence,
        norm_ratios=ratios,
        decreasing=all(b < a for a, b in zip(ratios, ratios[1:])),
    )


def project_stable_unstable(f, b):
    """(P^s f, P^u f) with P^u f = Ef − (ω̄·Ef)ω and P^s = I − P^u."""
    avg = mean(f)
    unstable_vec = avg - (b.omega_bar @ avg) * b.omega
    unstable = FourierField.constant(unstable_vec, f.K, real=f.real)
    stable = f.add_constant(-unstable_vec)
    return stable, unstable


def finite_difference_check(L, cfg, n_dirs=20, t=1e-7, seed=0):
    """Compare the assembled DR(ω) with (R(ω + t e) − ω)/t on random real mode directions."""
    rng = np.random.default_rng(seed)
    win = window(L.d, L.K)
    omega = FourierField.constant(cfg.basis.omega, L.K, real=True)
    errors = []
    for _ in tqdm(range(n_dirs), desc="Finite differences", disable=cfg.quiet):
        k = tuple(int(x) for x in win.modes[rng.integers(len(win))])
        v = np.zeros(L.d)
        v[rng.integers(L.d)] = 1.0
        if any(k):
            e = FourierField.from_modes({k: v, tuple(-x for x in k): v}, L.K, real=True)
        else:
            e = FourierField.constant(v, L.K, real=True)
        pushed, _ = renorm_step(omega + t * e, cfg)
        fd = (pushed - omega) / t
        exact = L.apply(e)
        scale = max(float(exact.mode_norms().sum()), float(e.mode_norms().sum()))
        errors.append(float(np.abs(fd.coeffs - exact.coeffs).sum()) / scale)
    return FiniteDifferenceReport(n_dirs=n_dirs, t=t, max_rel_error=max(errors), errors=errors)


def commutation_error(L, n_vectors=10, seed=0):
    """max ‖(I − P_ωE)L v − L(I − P_ωE)v‖ over random v."""
    rng = np.random.default_rng(seed)
    d = L.d
    zero = L.mode_index((0,) * d) * d
    n = L.l_matrix.shape[0]
    P = np.zeros((n, n))
    P[zero:zero + d, zero:zero + d] = np.outer(L.basis.omega, L.basis.omega_bar)
    Q = np.eye(n) - P
    worst = 0.0
    for _ in range(n_vectors):
        v = rng.standard_normal(n)
        worst = max(worst, float(np.abs(Q @ (L.l_matrix @ v) - L.l_matrix @ (Q @ v)).max()))
    return worst


def _unstable_coordinates(X, cfg, n_targets):
    field = X
    for n in range(1, n_targets + 1):
        outcome = renorm_step_detailed(field, cfg, n)
        field = outcome.field
    return np.array(outcome.report.unstable_coords), field


def shoot_stable(f_seed, cfg, n_targets=3, max_iter=50, tol_factor=1e-9):
    """Adjust the unstable constant part of ω + f_seed so that n_targets steps of R stay near ω."""
    b = cfg.basis
    if f_seed.dim != b.d:
        raise ValueError(f"seed dimension {f_seed.dim} does not match basis dimension {b.d}")
    seed_size = norm(f_seed, prime(cfg.rho))
    tol = tol_factor * max(seed_size, 1e-300)
    frame = b.unstable_basis()
    omega = FourierField.constant(b.omega, f_seed.K, real=True)

    def candidate(a):
        return omega + f_seed.add_constant(frame @ a)

    def residual(a):
        try:
            coords, _ = _unstable_coordinates(candidate(a), cfg, n_targets)
        except RenormError as exc:
            raise ShootingFailed(f"renormalisation failed while shooting: {exc}") from exc
        return coords

    a = -b.coordinates(mean(f_seed).real)[1:]
    G = residual(a)
    if np.abs(G).max() < tol:
        logger.info(f"✓ seed already on the stable manifold (|P^u R^{n_targets}| = {np.abs(G).max():.2e})")
        return candidate(a)

    # finite-difference Jacobian, then Broyden updates
    delta = max(1e-3 * seed_size, 1e-8)
    J = np.zeros((len(a), len(a)))
    for j in range(len(a)):
        step = np.zeros(len(a))
        step[j] = delta
        J[:, j] = (residual(a + step) - G) / delta

    history = [float(np.abs(G).max())]
    for it in tqdm(range(max_iter), desc="Shooting", disable=cfg.quiet):
        try:
            step = -np.linalg.solve(J, G)
        except np.linalg.LinAlgError as exc:
            raise ShootingFailed(f"singular secant matrix: {exc}") from exc
        a = a + step
        G_new = residual(a)
        history.append(float(np.abs(G_new).max()))
        if not cfg.quiet:
            tqdm.write(f"shooting iteration {it + 1}: |P^u R^{n_targets}(X)| = {history[-1]:.3e}")
        if history[-1] < tol:
            logger.info(f"✓ shooting converged after {it + 1} iterations, adjustment {frame @ a}")
            return candidate(a)
        J = J + np.outer(G_new - G - J @ step, step) / (step @ step)
        G = G_new
    raise ShootingFailed(f"shooting did not reach {tol:.2e} in {max_iter} iterations (last {history[-1]:.3e})")
