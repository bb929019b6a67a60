"""Truncated Fourier series on the d-torus.

A field f(θ) = Σ_k f_k e^{2πik·θ} is stored as a dense complex array of shape
(ncomp, 2K+1, ..., 2K+1). Index k sits at array position k+K and every entry
outside the l1 ball ‖k‖ ≤ K is structurally zero. Vector fields have
ncomp == dim, scalar fields ncomp == 1.

All arithmetic is direct convolution over the window. FFT/grid evaluation is
only ever used by the tests as an oracle.
"""

import logging
import math
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Literal

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, field_validator

from RG import settings
from RG.errors import Divergence, NonConvergence

logger = logging.getLogger(__name__)

TWO_PI_I = 2j * np.pi


class NormKind(BaseModel):
    model_config = ConfigDict(frozen=True)

    tag: Literal["plain_r", "prime_r"] = "plain_r"
    r: float

    @field_validator("r")
    @classmethod
    def _positive_radius(cls, value):
        if not value > 0:
            raise ValueError(f"analyticity radius must be positive, got {value}")
        return value


def plain(r):
    return NormKind(tag="plain_r", r=r)


def prime(r):
    return NormKind(tag="prime_r", r=r)


class Window:
    """Index bookkeeping for the l1 ball ‖k‖ ≤ K inside the cube [-K, K]^dim."""

    def __init__(self, dim, K):
        if dim < 2:
            raise ValueError(f"ambient dimension must be at least 2, got {dim}")
        if K < 0:
            raise ValueError(f"truncation radius must be non-negative, got {K}")
        self.dim = dim
        self.K = K
        self.side = 2 * K + 1
        self.shape = (self.side,) * dim
        self.grid = np.indices(self.shape) - K
        self.l1 = np.abs(self.grid).sum(axis=0)
        self.mask = self.l1 <= K
        self.positions = np.nonzero(self.mask)
        self.modes = np.stack(self.positions, axis=1) - K
        self.zero_position = (K,) * dim
        for arr in (self.grid, self.l1, self.mask, self.modes):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.modes)

    def position(self, k):
        return tuple(int(x) + self.K for x in k)

    def positions_of(self, modes):
        modes = np.asarray(modes, dtype=int).reshape(-1, self.dim)
        return tuple((modes + self.K).T)

    def weights(self, kind):
        """Per-mode weight e^{r‖k‖}, times (1+2π‖k‖) for the primed norm."""
        w = np.exp(kind.r * self.l1)
        if kind.tag == "prime_r":
            w = w * (1.0 + 2.0 * np.pi * self.l1)
        return w

    def reflect(self, arr):
        """Array of coefficients at -k (spatial axes reversed)."""
        flip = (slice(None),) * (arr.ndim - self.dim) + (slice(None, None, -1),) * self.dim
        return arr[flip]


@lru_cache(maxsize=None)
def window(dim, K):
    return Window(dim, K)


class FourierField:
    """Immutable truncated Fourier series with C^ncomp-valued coefficients."""

    __slots__ = ("dim", "K", "real", "_coeffs")

    def __init__(self, coeffs, K, real=False):
        arr = np.array(coeffs, dtype=complex)
        if arr.ndim < 3:
            raise ValueError(f"coefficient array needs (ncomp, *cube) layout, got shape {arr.shape}")
        dim = arr.ndim - 1
        win = window(dim, K)
        if arr.shape[1:] != win.shape:
            raise ValueError(f"coefficient cube {arr.shape[1:]} does not match window {win.shape}")
        arr = arr * win.mask
        arr.setflags(write=False)
        self.dim = dim
        self.K = K
        self.real = bool(real)
        self._coeffs = arr

    # construction -------------------------------------------------------

    @classmethod
    def zeros(cls, dim, K, ncomp=None, real=True):
        win = window(dim, K)
        return cls(np.zeros((ncomp or dim,) + win.shape, dtype=complex), K, real=real)

    @classmethod
    def constant(cls, vec, K, real=None):
        vec = np.asarray(vec, dtype=complex)
        dim = len(vec)
        win = window(dim, K)
        arr = np.zeros((dim,) + win.shape, dtype=complex)
        arr[(slice(None),) + win.zero_position] = vec
        if real is None:
            real = not np.any(vec.imag)
        return cls(arr, K, real=real)

    @classmethod
    def from_modes(cls, modes, K, dim=None, ncomp=None, real=False):
        """Build from a mapping {k: coefficient vector}."""
        modes = {tuple(int(x) for x in k): np.asarray(v, dtype=complex) for k, v in modes.items()}
        if dim is None:
            if not modes:
                raise ValueError("dim is required for an empty mode map")
            dim = len(next(iter(modes)))
        if ncomp is None:
            ncomp = len(next(iter(modes.values()))) if modes else dim
        win = window(dim, K)
        arr = np.zeros((ncomp,) + win.shape, dtype=complex)
        for k, v in modes.items():
            if len(k) != dim:
                raise ValueError(f"index {k} does not have dimension {dim}")
            if sum(abs(x) for x in k) > K:
                raise ValueError(f"index {k} lies outside the window |k| <= {K}")
            arr[(slice(None),) + win.position(k)] += v
        return cls(arr, K, real=real)

    @classmethod
    def single_mode(cls, k, v, K, real=False):
        return cls.from_modes({tuple(k): v}, K, real=real)

    @classmethod
    def from_vector(cls, vec, modes, dim, K, ncomp=None, real=False):
        """Inverse of to_vector: values laid out as (mode, component) in C order."""
        ncomp = ncomp or dim
        win = window(dim, K)
        arr = np.zeros((ncomp,) + win.shape, dtype=complex)
        values = np.asarray(vec, dtype=complex).reshape(len(modes), ncomp)
        arr[(slice(None),) + win.positions_of(modes)] = values.T
        return cls(arr, K, real=real)

    # accessors ----------------------------------------------------------

    @property
    def coeffs(self):
        return self._coeffs

    @property
    def ncomp(self):
        return self._coeffs.shape[0]

    @property
    def window(self):
        return window(self.dim, self.K)

    def coeff(self, k):
        return self._coeffs[(slice(None),) + self.window.position(k)].copy()

    def mode_norms(self):
        """l1 norm of each coefficient vector, as a cube."""
        return np.abs(self._coeffs).sum(axis=0)

    def modes(self):
        """Stored indices (nonzero coefficients), in window order."""
        win = self.window
        present = self.mode_norms()[win.positions] > 0
        return win.modes[present]

    def mode_count(self):
        return int(np.count_nonzero(self.mode_norms()))

    def is_zero(self):
        return not np.any(self._coeffs)

    def to_vector(self, modes):
        return self._coeffs[(slice(None),) + self.window.positions_of(modes)].T.reshape(-1).copy()

    def items(self):
        for k in self.modes():
            yield tuple(int(x) for x in k), self.coeff(k)

    def hermitian_defect(self):
        c = self._coeffs
        return float(np.abs(c - np.conj(self.window.reflect(c))).max(initial=0.0))

    # arithmetic ---------------------------------------------------------

    def _check(self, other):
        if not isinstance(other, FourierField):
            raise TypeError(f"expected a FourierField, got {type(other).__name__}")
        if other.dim != self.dim or other.K != self.K:
            raise ValueError(f"window mismatch: (d={self.dim}, K={self.K}) vs (d={other.dim}, K={other.K})")

    def __add__(self, other):
        self._check(other)
        return FourierField(self._coeffs + other._coeffs, self.K, real=self.real and other.real)

    def __sub__(self, other):
        self._check(other)
        return FourierField(self._coeffs - other._coeffs, self.K, real=self.real and other.real)

    def __neg__(self):
        return FourierField(-self._coeffs, self.K, real=self.real)

    def __mul__(self, scalar):
        scalar = complex(scalar)
        return FourierField(self._coeffs * scalar, self.K, real=self.real and scalar.imag == 0)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        scalar = complex(scalar)
        return FourierField(self._coeffs / scalar, self.K, real=self.real and scalar.imag == 0)

    def add_constant(self, vec):
        vec = np.asarray(vec, dtype=complex)
        arr = self._coeffs.copy()
        arr[(slice(None),) + self.window.zero_position] += vec
        return FourierField(arr, self.K, real=self.real and not np.any(vec.imag))

    def masked(self, mask):
        """Keep only the modes where the boolean cube `mask` is set (bit-exact)."""
        return FourierField(self._coeffs * mask, self.K, real=self.real)

    def component(self, i):
        return FourierField(self._coeffs[i:i + 1], self.K, real=self.real)

    def compact(self, tol=None):
        """Zero every mode whose coefficient norm is below tol (default: relative drop tolerance)."""
        norms = self.mode_norms()
        if tol is None:
            tol = settings.DROP_TOL * norms.sum()
        drop = (norms < tol) & (norms > 0)
        if not np.any(drop):
            return self
        return FourierField(self._coeffs * ~drop, self.K, real=self.real)

    def symmetrize(self):
        """Average with the conjugate reflection so that coeff(-k) = conj(coeff(k))."""
        c = self._coeffs
        return FourierField(0.5 * (c + np.conj(self.window.reflect(c))), self.K, real=True)

    def to_json(self):
        return orjson.dumps(self.to_dict())

    def to_dict(self):
        return {
            "dim": self.dim,
            "real": self.real,
            "K": self.K,
            "modes": [
                {"k": list(k), "re": v.real.tolist(), "im": v.imag.tolist()}
                for k, v in self.items()
            ],
        }

    @classmethod
    def from_dict(cls, data):
        dim, K = int(data["dim"]), int(data["K"])
        modes = {}
        for entry in data["modes"]:
            modes[tuple(entry["k"])] = np.array(entry["re"], dtype=float) + 1j * np.array(entry["im"], dtype=float)
        return cls.from_modes(modes, K, dim=dim, real=bool(data.get("real", False)))

    @classmethod
    def from_json(cls, raw):
        return cls.from_dict(orjson.loads(raw))

    def __repr__(self):
        return f"FourierField(dim={self.dim}, ncomp={self.ncomp}, K={self.K}, modes={self.mode_count()}, real={self.real})"


def _finish(arr, K, real):
    """Wrap an arithmetic result: compact, and restore Hermitian symmetry for real inputs."""
    field = FourierField(arr, K, real=real).compact()
    return field.symmetrize() if real else field


# norms -----------------------------------------------------------------


def norm(f, kind):
    """‖f‖_r = Σ‖f_k‖e^{r‖k‖} or ‖f‖'_r = Σ(1+2π‖k‖)‖f_k‖e^{r‖k‖}, l1 norm on coefficients."""
    return float((f.mode_norms() * f.window.weights(kind)).sum())


def max_coefficient_difference(f, g):
    f._check(g)
    return float(np.abs(f.coeffs - g.coeffs).max(initial=0.0))


def mean(f):
    """E(f) = ∫f dθ, the k=0 coefficient."""
    return f.coeffs[(slice(None),) + f.window.zero_position].copy()


def nonconstant(f):
    arr = f.coeffs.copy()
    arr[(slice(None),) + f.window.zero_position] = 0
    return FourierField(arr, f.K, real=f.real)


# convolution -------------------------------------------------------------


def _spatial_support(arr, dim):
    lead = tuple(range(arr.ndim - dim))
    return np.argwhere(np.any(arr != 0, axis=lead) if lead else arr != 0)


def _convolve(a, b, dim, K):
    """Truncated convolution out[..., k] = Σ_p a[..., p] b[..., k-p] over the cube.

    Leading axes of a and b broadcast against each other. The loop runs over
    the nonzero positions of the sparser operand.
    """
    lead = np.broadcast_shapes(a.shape[:-dim], b.shape[:-dim])
    side = 2 * K + 1
    out = np.zeros(lead + (side,) * dim, dtype=complex)
    sup_a = _spatial_support(a, dim)
    sup_b = _spatial_support(b, dim)
    if len(sup_a) == 0 or len(sup_b) == 0:
        return out
    if len(sup_b) < len(sup_a):
        a, b, sup_a = b, a, sup_b
    expand = (Ellipsis,) + (None,) * dim
    for p in sup_a:
        shift = p - K
        out_sl = tuple(slice(max(0, s), min(side, side + s)) for s in shift)
        b_sl = tuple(slice(max(0, -s), min(side, side - s)) for s in shift)
        coef = a[(Ellipsis,) + tuple(p)]
        out[(Ellipsis,) + out_sl] += coef[expand] * b[(Ellipsis,) + b_sl]
    return out * window(dim, K).mask


def _derivative_factors(win):
    """2πi k_j as a (dim, *cube) array."""
    return TWO_PI_I * win.grid


def jacobian_array(f):
    """(Df)_{ij} coefficients 2πi k_j f^i_k, shape (ncomp, dim, *cube)."""
    return f.coeffs[:, None] * _derivative_factors(f.window)[None, :]


def jacobian_field(f):
    """Df as a field with ncomp*dim components (row-major over (i, j))."""
    arr = jacobian_array(f)
    return FourierField(arr.reshape((-1,) + arr.shape[2:]), f.K, real=f.real)


def partial(f, j):
    """∂_j f."""
    return FourierField(f.coeffs * _derivative_factors(f.window)[j], f.K, real=f.real)


def _matrix_apply(mat, g, dim, K):
    """Pointwise matrix-vector product of a (m, n, *cube) matrix field and an (n, *cube) field."""
    return _convolve(mat, g[None], dim, K).sum(axis=1)


def jacobian_apply(f, g):
    """(Df·g)(θ) = Df(θ) g(θ)."""
    f._check(g)
    if g.ncomp != f.dim:
        raise ValueError(f"Df·g needs g with {f.dim} components, got {g.ncomp}")
    arr = _matrix_apply(jacobian_array(f), g.coeffs, f.dim, f.K)
    return _finish(arr, f.K, f.real and g.real)


def matrix_field_apply(mat, g):
    """Apply a matrix-valued field given with ncomp = m*n components (row-major) to g."""
    mat._check(g)
    n = g.ncomp
    m = mat.ncomp // n
    arr = _matrix_apply(mat.coeffs.reshape((m, n) + mat.coeffs.shape[1:]), g.coeffs, g.dim, g.K)
    return _finish(arr, g.K, mat.real and g.real)


def multiply(alpha, f):
    """Scalar field times field."""
    alpha._check(f)
    if alpha.ncomp != 1:
        raise ValueError(f"multiply expects a scalar field, got {alpha.ncomp} components")
    arr = _convolve(alpha.coeffs, f.coeffs, f.dim, f.K)
    return _finish(arr, f.K, alpha.real and f.real)


def dot(f, g):
    """Pointwise inner product f·g (no conjugation), a scalar field."""
    f._check(g)
    arr = _convolve(f.coeffs, g.coeffs, f.dim, f.K).sum(axis=0, keepdims=True)
    return _finish(arr, f.K, f.real and g.real)


# composition -------------------------------------------------------------


def compose_displacement(f, u, order_cap=None, tol=None, rho=None, rho_prime=None):
    """f∘(id+u) as Σ_m Σ_{|α|=m} ∂^α f · u^α / α!.

    Regrouping the exponential series Σ_m (2πik·u)^m/m! by multi-index gives
    the same sum; terms are added until the order-m contribution has plain
    norm below `tol` (default: drop tolerance times ‖f‖) or m reaches order_cap.
    """
    f._check(u)
    if u.ncomp != f.dim:
        raise ValueError(f"displacement needs {f.dim} components, got {u.ncomp}")
    if u.is_zero():
        return f
    order_cap = order_cap or settings.ORDER_CAP
    if order_cap < 1:
        raise ValueError(f"order_cap must be at least 1, got {order_cap}")

    win = f.window
    u_prime = norm(u, prime(rho_prime or 1e-300))
    if u_prime >= 1.0:
        logger.warning(f"⚠ composition with ‖u‖' = {u_prime:.3e} >= 1, series may not converge")
    elif rho is not None and rho_prime is not None and u_prime >= (rho - rho_prime) / (4 * np.pi):
        logger.warning(f"⚠ ‖u‖' = {u_prime:.3e} exceeds the composition bound (ρ-ρ')/4π = {(rho - rho_prime) / (4 * np.pi):.3e}")

    f_size = float(f.mode_norms().sum())
    if tol is None:
        tol = max(settings.COMPOSE_TOL * f_size, 1e-300)

    factors = _derivative_factors(win)
    uc = u.coeffs
    total = f.coeffs.copy()
    # order m-1 multisets of component indices -> (u^α, ∂^α f)
    level = {(): (None, f.coeffs)}
    term_norms = []
    for m in range(1, order_cap + 1):
        next_level = {}
        term = np.zeros_like(total)
        for combo in combinations_with_replacement(range(f.dim), m):
            head, j = combo[:-1], combo[-1]
            mono_prev, deriv_prev = level[head]
            mono = uc[j][None] if mono_prev is None else _convolve(mono_prev, uc[j][None], f.dim, f.K)
            deriv = deriv_prev * factors[j]
            next_level[combo] = (mono, deriv)
            alpha_fact = math.prod(math.factorial(combo.count(i)) for i in set(combo))
            term += _convolve(mono, deriv, f.dim, f.K) / alpha_fact
        level = next_level
        total += term
        term_norms.append(float(np.abs(term).sum()))
        if term_norms[-1] < tol:
            break
    else:
        if term_norms[-1] >= term_norms[0]:
            raise NonConvergence(
                f"composition terms did not decrease within order_cap={order_cap} (last term {term_norms[-1]:.3e})",
                term_norms,
            )
        logger.warning(f"⚠ composition stopped at order_cap={order_cap} with term norm {term_norms[-1]:.3e}")
    return _finish(total, f.K, f.real and u.real)


def neumann_inverse_apply(u, g, tol=None, max_terms=None):
    """(I+Du)^{-1} g = Σ_n (-Du)^n g, truncated once a term's plain norm is below tol."""
    u._check(g)
    if u.is_zero():
        return g
    max_terms = max_terms or settings.NEUMANN_MAX_TERMS
    if tol is None:
        tol = max(settings.NEUMANN_TOL * float(g.mode_norms().sum()), 1e-300)
    du = jacobian_array(u)
    term = g.coeffs
    total = term.copy()
    norms = [float(np.abs(term).sum())]
    rising = 0
    for _ in range(max_terms):
        if norms[-1] < tol:
            break
        term = -_matrix_apply(du, term, u.dim, u.K)
        total += term
        norms.append(float(np.abs(term).sum()))
        rising = rising + 1 if norms[-1] >= norms[-2] else 0
        if rising >= 5:
            raise Divergence(f"Neumann series for (I+Du)^-1 is not contracting (‖u‖' too large?)", norms)
    else:
        if norms[-1] >= tol:
            raise NonConvergence(f"Neumann series did not reach tol={tol:.1e} in {max_terms} terms", norms)
    return _finish(total, g.K, u.real and g.real)


# pointwise evaluation ----------------------------------------------------


def _phases(f, theta):
    theta = np.asarray(theta, dtype=float)
    modes = f.modes()
    phase = np.exp(TWO_PI_I * (theta @ modes.T))
    return modes, phase


def evaluate(f, theta):
    """Σ f_k e^{2πik·θ} at one point (dim,) or a batch (..., dim)."""
    modes, phase = _phases(f, theta)
    values = f.coeffs[(slice(None),) + f.window.positions_of(modes)].T
    return phase @ values


def evaluate_jacobian(f, theta):
    """Df(θ), shape (..., ncomp, dim)."""
    modes, phase = _phases(f, theta)
    values = f.coeffs[(slice(None),) + f.window.positions_of(modes)].T
    weighted = TWO_PI_I * values[:, :, None] * modes[:, None, :]
    return np.einsum("...n,nij->...ij", phase, weighted)
