from __future__ import annotations

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def expected_improvement(mean, variance, best_so_far):
    """Expected improvement over ``best_so_far`` for a minimization problem.

    Works on scalars or arrays.  Where the variance is zero the improvement is
    deterministic: ``max(best - mean, 0)``.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    diff = best_so_far - mean
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = diff * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(diff, 0.0))
    return float(ei) if ei.ndim == 0 else ei
