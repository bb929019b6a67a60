"""Koch-type frequency bases: ω, the unimodular matrix T and its eigendata."""

import logging
import math

import numpy as np
import orjson

from RG.errors import BadSpectrum, DegenerateEigenvector, NoFeasibleParams, NotUnimodular
from RG.fourier_core import window
from RG.resonance import ResonanceParams, check_cone_inclusion

logger = logging.getLogger(__name__)

GOLDEN_T = [[0, 1], [1, 1]]
PLASTIC_T = [[0, 1, 0], [0, 0, 1], [1, 1, 0]]

GAP_TOL = 1e-9         # smallest accepted distance between eigenvalues
UNIT_CIRCLE_TOL = 1e-12
CONE_MARGIN = 1e-6      # relative room left between the cone ratio and ρ'/ρ


def _readonly(arr):
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


class KTBasis:
    """Certified frequency data (ω, ω̄, T, λ, ω^(j)) for one unimodular matrix."""

    __slots__ = ("name", "d", "base", "power", "T", "T_star", "T_inv", "lambdas", "omega", "omega_bar", "evecs", "residuals")

    def __init__(self, name, base, power, T, T_inv, lambdas, omega, omega_bar, evecs):
        self.name = name
        self.d = T.shape[0]
        self.base = _readonly(base)
        self.power = power
        self.T = _readonly(T)
        self.T_star = _readonly(T.T)
        self.T_inv = _readonly(T_inv)
        self.lambdas = _readonly(lambdas)
        self.omega = _readonly(omega)
        self.omega_bar = _readonly(omega_bar)
        self.evecs = _readonly(evecs)
        self.residuals = self._residuals()

    @property
    def lambda1(self):
        return float(self.lambdas[0].real)

    def _residuals(self):
        Tf = self.T.astype(float)
        lam = self.lambda1
        return {
            "eigen_omega": float(np.abs(Tf @ self.omega - lam * self.omega).sum()),
            "eigen_omega_bar": float(np.abs(Tf.T @ self.omega_bar - lam * self.omega_bar).sum()),
            "duality": float(abs(self.omega_bar @ self.omega - 1.0)),
            "modulus_product": float(abs(np.prod(np.abs(self.lambdas)) - 1.0)),
            "biorthogonality": float(max((abs(self.omega_bar @ self.evecs[:, j]) for j in range(1, self.d)), default=0.0)),
        }

    def unstable_basis(self):
        """Real d×(d−1) basis of span{ω^(2)…ω^(d)}; complex pairs contribute real and imaginary parts."""
        cols = []
        j = 1
        while j < self.d:
            v = self.evecs[:, j]
            if np.abs(v.imag).max() > 1e-12 and j + 1 < self.d:
                cols.extend([v.real, v.imag])
                j += 2
            else:
                cols.append(v.real)
                j += 1
        return np.stack(cols, axis=1)

    def coordinates(self, z):
        """Coordinates of a real constant vector in the basis [ω, unstable…]."""
        frame = np.column_stack([self.omega, self.unstable_basis()])
        return np.linalg.solve(frame, np.asarray(z, dtype=float))

    def diophantine_fit(self, K):
        """(β, C) with β = −1 − ln|λ₁|/ln|λ₂| and C = min |ω·k|‖k‖^{β+1} over 0 < ‖k‖ ≤ K."""
        beta = -1.0 - math.log(abs(self.lambdas[0])) / math.log(abs(self.lambdas[1]))
        modes = window(self.d, K).modes
        modes = modes[np.abs(modes).sum(axis=1) > 0]
        norms = np.abs(modes).sum(axis=1)
        C = float((np.abs(modes @ self.omega) * norms ** (beta + 1)).min())
        return beta, C

    def inverse_norm_check(self):
        """Compare the l1-induced ‖T⁻¹‖ with |λ₁|."""
        inv_norm = float(np.abs(self.T_inv).sum(axis=0).max())
        ok = inv_norm <= abs(self.lambda1)
        if not ok:
            logger.warning(f"⚠ basis {self.name}: ‖T⁻¹‖₁ = {inv_norm:g} exceeds |λ₁| = {abs(self.lambda1):.6f}")
        return inv_norm, ok

    def to_dict(self):
        return {
            "name": self.name,
            "T": self.base.tolist(),
            "power": self.power,
            "omega": self.omega.tolist(),
            "omega_bar": self.omega_bar.tolist(),
            "lambda_re": self.lambdas.real.tolist(),
            "lambda_im": self.lambdas.imag.tolist(),
            "residuals": self.residuals,
        }

    def to_json(self):
        return orjson.dumps(self.to_dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)

    def __repr__(self):
        return f"KTBasis(name={self.name!r}, d={self.d}, power={self.power}, λ₁={self.lambda1:.9f})"


def from_matrix(T, power=1, name=None):
    """Certify an integer matrix (raised to `power`) as a Koch-type basis."""
    base = np.asarray(T)
    if base.ndim != 2 or base.shape[0] != base.shape[1] or base.shape[0] < 2:
        raise ValueError(f"T must be a square matrix of size >= 2, got shape {base.shape}")
    if not np.all(np.equal(np.round(base), base)):
        raise ValueError("T must have integer entries")
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")
    base = np.round(base).astype(np.int64)
    d = base.shape[0]
    Tp = np.linalg.matrix_power(base, power)

    det = int(round(np.linalg.det(Tp.astype(float))))
    if abs(det) != 1:
        raise NotUnimodular(f"det T = {det}, T is not in GL({d}, Z)")
    T_inv = np.round(np.linalg.inv(Tp.astype(float))).astype(np.int64)
    if not np.array_equal(Tp @ T_inv, np.eye(d, dtype=np.int64)):
        raise NotUnimodular("integer inverse of T could not be recovered")

    vals, vecs = np.linalg.eig(Tp.astype(float))
    order = np.argsort(-np.abs(vals), kind="stable")
    vals, vecs = vals[order].astype(complex), vecs[:, order].astype(complex)
    moduli = np.abs(vals)
    if np.any(np.abs(moduli - 1.0) < UNIT_CIRCLE_TOL):
        raise BadSpectrum(f"eigenvalue on the unit circle: |λ| = {moduli.tolist()}")
    if np.count_nonzero(moduli > 1.0) != 1:
        raise BadSpectrum(f"need exactly one eigenvalue outside the unit circle, got moduli {moduli.tolist()}")
    if abs(vals[0].imag) > UNIT_CIRCLE_TOL:
        raise BadSpectrum(f"leading eigenvalue {vals[0]} is not real")
    gaps = np.abs(vals[:, None] - vals[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < GAP_TOL:
        raise BadSpectrum(f"repeated eigenvalues {vals.tolist()}")
    vals[0] = vals[0].real

    lead = vecs[:, 0].real
    if abs(lead[0]) < 1e-12 * np.abs(lead).max():
        raise DegenerateEigenvector("the λ₁-eigenvector has vanishing first component")
    omega = lead / lead[0]

    dual_vals, dual_vecs = np.linalg.eig(Tp.T.astype(float))
    dual = dual_vecs[:, np.argmin(np.abs(dual_vals - vals[0].real))].real
    omega_bar = dual / (dual @ omega)

    evecs = np.zeros((d, d), dtype=complex)
    evecs[:, 0] = omega
    for j in range(1, d):
        v = vecs[:, j] / np.abs(vecs[:, j]).sum()
        pivot = v[np.argmax(np.abs(v))]
        evecs[:, j] = v * (abs(pivot) / pivot)
    # keep conjugate pairs exactly conjugate
    for j in range(1, d - 1):
        if abs(vals[j].imag) > 0 and np.isclose(vals[j], np.conj(vals[j + 1])):
            evecs[:, j + 1] = np.conj(evecs[:, j])
            vals[j + 1] = np.conj(vals[j])

    basis = KTBasis(name or f"matrix{base.tolist()}", base, power, Tp, T_inv, vals, omega, omega_bar, evecs)
    bad = {key: value for key, value in basis.residuals.items() if value > 1e-12 * max(1.0, float(np.abs(Tp).max()))}
    if bad:
        logger.warning(f"⚠ basis {basis.name}: certification residuals above 1e-12: {bad}")
    logger.debug(f"✓ certified {basis!r}")
    return basis


def golden_basis(power=1):
    return from_matrix(GOLDEN_T, power=power, name="golden")


def plastic_basis(power=1):
    return from_matrix(PLASTIC_T, power=power, name="plastic")


def load_basis(ref, power=1):
    """Resolve a --basis reference: golden, plastic or file:PATH (JSON {"T": ..., "power": p})."""
    if ref == "golden":
        return golden_basis(power)
    if ref == "plastic":
        return plastic_basis(power)
    if ref.startswith("file:"):
        path = ref[len("file:"):]
        with open(path, "rb") as f:
            data = orjson.loads(f.read())
        return from_matrix(data["T"], power=int(data.get("power", power)), name=data.get("name", path))
    raise ValueError(f"unknown basis reference {ref!r} (expected golden, plastic or file:PATH)")


def theorem_radius(sigma, rho, rho_prime, omega):
    """(ε̂, δ̂) of the elimination theorem."""
    omega_norm = float(np.abs(np.asarray(omega)).sum())
    delta_hat = min((rho - rho_prime) / (4 * math.pi), (3 - math.sqrt(6)) / 6 * sigma / omega_norm)
    eps_hat = min(sigma / 4, (math.sqrt(6) - 2) / 12 * sigma * delta_hat)
    return eps_hat, delta_hat


def sigma_bound(b):
    return 0.5 / float(np.abs(b.omega_bar).sum())


def choose_params(b, rho, rho_prime, K, n_samples=None, iterations=50):
    """Pick (σ, κ) with κρ < ρ', σ < ½‖ω̄‖⁻¹ and a passing cone check at truncation K.

    σ is bisected downward from ½‖ω̄‖⁻¹ to the largest value whose cone ratio
    stays below ρ'/ρ·(1 − CONE_MARGIN); κ is then set halfway between the
    ratio and ρ'/ρ, so κ sits strictly above the ratio.
    """
    if not 0 < rho_prime < rho:
        raise ValueError(f"need 0 < rho' < rho, got rho={rho}, rho'={rho_prime}")
    target = rho_prime / rho
    limit = target * (1 - CONE_MARGIN)
    omega = tuple(float(x) for x in b.omega)

    def ratio(sigma):
        trial = ResonanceParams(omega=omega, sigma=sigma, kappa=min(target, 1 - 1e-12))
        return check_cone_inclusion(b.T, trial, n_samples=n_samples, K=K, raise_on_violation=False).max_ratio

    hi = sigma_bound(b) * (1 - 1e-9)
    lo = hi * 1e-6
    narrow = ratio(lo)
    if narrow >= limit:
        raise NoFeasibleParams(
            f"basis {b.name} (p={b.power}): cone ratio {narrow:.6f} >= ρ'/ρ = {target:.6f} even as σ → 0"
        )
    if ratio(hi) < limit:
        lo = hi
    else:
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if ratio(mid) < limit:
                lo = mid
            else:
                hi = mid
    sigma = lo
    max_ratio = ratio(sigma)
    kappa = 0.5 * (target + max_ratio)
    params = ResonanceParams(omega=omega, sigma=sigma, kappa=kappa)
    check_cone_inclusion(b.T, params, n_samples=n_samples, K=K)
    logger.info(f"✓ {b.name} (p={b.power}): σ = {sigma:.6f}, κ = {kappa:.6f} (cone ratio {max_ratio:.6f}, ρ'/ρ = {target:.6f})")
    return params
