"""Grid evaluation and DFT helpers used as independent oracles by the tests."""

import numpy as np

from RG.fourier_core import FourierField, window


def grid_points(dim, n):
    axes = [np.arange(n) / n] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def dft_field(values, K, real=False):
    """Fourier coefficients of grid samples shaped (n, ..., n, ncomp), restricted to the window."""
    n = values.shape[0]
    dim = values.ndim - 1
    spectrum = np.fft.fftn(values, axes=tuple(range(dim))) / n ** dim
    win = window(dim, K)
    idx = tuple(np.mod(win.grid[i], n) for i in range(dim))
    return FourierField(np.moveaxis(spectrum[idx], -1, 0), K, real=real)
