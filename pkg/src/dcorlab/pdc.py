"""U-centered distance matrices and partial distance correlation.

The U-centered inner product ``(A . B) = 1/(n(n-3)) sum_{k != l} A_kl B_kl``
is an unbiased estimator of the squared population distance covariance.
Projections and partial statistics are built on that inner product.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_batch, check_same_n, check_same_size, check_square
from .core import DEGENERATE_TOL, pairwise_distances
from .exceptions import SizeError

#: Smallest sample count for which the U-centered inner product is defined.
MIN_SAMPLES = 4


@dataclass(frozen=True)
class PDCorReport:
    pdcor2: float
    pdcov: float
    proj_x_norm: float
    proj_y_norm: float
    beta_xz: float
    beta_yz: float
    degenerate: bool

    def __float__(self):
        return self.pdcor2


def u_center(d):
    """U-center a symmetric, zero-diagonal distance matrix (n > 2)."""
    d = check_square(d, "distance matrix")
    n = d.shape[0]
    if n <= 2:
        raise SizeError(f"U-centering needs n > 2, got n={n}")
    col = d.sum(axis=0)
    # Reusing one sum vector keeps the output exactly symmetric.
    row = col if np.array_equal(d, d.T) else d.sum(axis=1)
    u = d - (row[:, None] + col[None, :]) / (n - 2) + d.sum() / ((n - 1) * (n - 2))
    np.fill_diagonal(u, 0.0)
    return u


def u_inner(a, b):
    """Unbiased inner product of two U-centered matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_size(a, b)
    n = a.shape[0]
    if n < MIN_SAMPLES:
        raise SizeError(f"U-centered inner product needs n >= 4, got n={n}")
    # Diagonals are zero by construction, so the full sum equals the k != l sum.
    return float(np.sum(a * b)) / (n * (n - 3))


def _projection(a, c):
    """Return (residual, coefficient, degenerate) for projecting ``a`` off ``c``."""
    cc = u_inner(c, c)
    if cc <= DEGENERATE_TOL:
        return a, 0.0, True
    beta = u_inner(a, c) / cc
    return a - beta * c, beta, False


def project_orthogonal(a, c, return_info=False):
    """Project ``a`` onto the orthogonal complement of ``c``.

    When ``c`` has (numerically) zero norm the input is returned unchanged.
    With ``return_info=True`` returns ``(residual, coefficient, degenerate)``.
    """
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    check_same_size(a, c)
    res = _projection(a, c)
    return res if return_info else res[0]


def _u_centered_triplet(x, y, z):
    x = check_batch(x, "x")
    y = check_batch(y, "y")
    z = check_batch(z, "z")
    n = check_same_n(x, y, z, names=["x", "y", "z"])
    if n < MIN_SAMPLES:
        raise SizeError(f"partial distance statistics need n >= 4, got n={n}")
    return (u_center(pairwise_distances(x)),
            u_center(pairwise_distances(y)),
            u_center(pairwise_distances(z)))


def _pdcor_from_u(a, b, c):
    px, beta_x, _ = _projection(a, c)
    py, beta_y, _ = _projection(b, c)
    pd = u_inner(px, py)
    nx2 = u_inner(px, px)
    ny2 = u_inner(py, py)
    nx = float(np.sqrt(max(nx2, 0.0)))
    ny = float(np.sqrt(max(ny2, 0.0)))
    if nx2 <= DEGENERATE_TOL or ny2 <= DEGENERATE_TOL:
        return PDCorReport(0.0, pd, nx, ny, beta_x, beta_y, True)
    return PDCorReport(pd / (nx * ny), pd, nx, ny, beta_x, beta_y, False)


def pdcov(x, y, z):
    """Sample partial distance covariance of ``x`` and ``y`` given ``z``."""
    a, b, c = _u_centered_triplet(x, y, z)
    return u_inner(project_orthogonal(a, c), project_orthogonal(b, c))


def pdcor(x, y, z):
    """Sample partial distance correlation of ``x`` and ``y`` given ``z``.

    ``report.pdcor2`` is the signed squared quantity; finite-sample values
    may be negative. It is 0 with ``degenerate=True`` when either projected
    matrix has zero norm.
    """
    return _pdcor_from_u(*_u_centered_triplet(x, y, z))


def bias_corrected_dcor2(x, y):
    """Squared distance correlation from U-centered matrices.

    Unbiased-numerator analogue of ``dcor(x, y) ** 2``; slightly negative
    values occur near independence.
    """
    x = check_batch(x, "x")
    y = check_batch(y, "y")
    n = check_same_n(x, y, names=["x", "y"])
    if n < MIN_SAMPLES:
        raise SizeError(f"bias-corrected dcor needs n >= 4, got n={n}")
    a = u_center(pairwise_distances(x))
    b = u_center(pairwise_distances(y))
    aa = u_inner(a, a)
    bb = u_inner(b, b)
    if aa <= DEGENERATE_TOL or bb <= DEGENERATE_TOL:
        return 0.0
    return u_inner(a, b) / (np.sqrt(aa) * np.sqrt(bb))
