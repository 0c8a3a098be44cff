"""
Stationary unit-variance Gaussian random fields on a 2-D lattice, built by
smoothing white noise with a truncated Gaussian kernel.
"""

import math
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from models.simulation import GrfConfig


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Separable 2-D Gaussian kernel truncated at radius ceil(4 sigma), unit L2 norm"""
    radius = int(math.ceil(4.0 * sigma))
    offsets = np.arange(-radius, radius + 1)
    profile = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    kernel = np.outer(profile, profile)
    return kernel / np.sqrt(np.sum(kernel ** 2))


def generate_grf(config: GrfConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    n_fields x dims[0] x dims[1] array of fields with pixel variance 1.

    Noise is drawn on the lattice enlarged by the kernel radius on every side
    and only fully supported pixels are kept, so edges are as smooth as the
    interior. fwhm = 0 returns the white noise itself.
    """
    rng = rng or np.random.default_rng(config.seed)
    rows, cols = config.dims
    if config.fwhm == 0:
        return rng.standard_normal((config.n_fields, rows, cols))

    kernel = gaussian_kernel(config.kernel_sigma)
    radius = kernel.shape[0] // 2
    noise = rng.standard_normal((config.n_fields, rows + 2 * radius, cols + 2 * radius))
    return fftconvolve(noise, kernel[None, :, :], mode='valid', axes=(1, 2))
