"""Gauss quadrature on the reference triangle and the reference segment.

Triangle rules are collapsed (Duffy) tensor products of a Gauss-Jacobi
rule, which absorbs the collapse Jacobian, and a Gauss-Legendre rule.  All
weights are positive.  Reference triangle: vertices (0,0), (1,0), (0,1),
measure 1/2.  Reference segment: [0, 1], measure 1.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates and weights.

    For triangle rules ``points`` has shape (n, 3); for segment rules it
    has shape (n, 2) with the coordinate pair ``(1 - s, s)``.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def cartesian(self):
        """Reference coordinates: (x, y) for triangles, s for segments."""
        if self.points.shape[1] == 3:
            return self.points[:, 1:]
        return self.points[:, 1]

    def __len__(self):
        return len(self.weights)


def _check_degree(d):
    if not 0 <= d <= MAX_DEGREE:
        raise ValueError(f"quadrature degree {d} unsupported (0..{MAX_DEGREE})")


@lru_cache(maxsize=None)
def triangle_quadrature(d):
    """Rule exact for bivariate polynomials of total degree ``d``."""
    _check_degree(d)
    n = max(1, (d + 2) // 2)
    # Gauss-Jacobi in xi with weight (1 - xi), Gauss-Legendre in eta
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    xi = 0.5 * (xj + 1.0)
    wxi = wj / 4.0
    eta = 0.5 * (xl + 1.0)
    weta = wl / 2.0
    X = np.repeat(xi, n)
    Y = np.tile(eta, n) * (1.0 - X)
    W = np.repeat(wxi, n) * np.tile(weta, n)
    pts = np.stack([1.0 - X - Y, X, Y], axis=1)
    return QuadratureRule(pts, W, d)


@lru_cache(maxsize=None)
def edge_quadrature(d):
    """Gauss-Legendre rule on [0, 1] exact for degree ``d``."""
    _check_degree(d)
    n = max(1, (d + 2) // 2)
    x, w = roots_legendre(n)
    s = 0.5 * (x + 1.0)
    return QuadratureRule(np.stack([1.0 - s, s], axis=1), w / 2.0, d)
