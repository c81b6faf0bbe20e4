"""Empirical distance covariance and distance correlation.

All statistics use Euclidean pairwise distances and are accumulated in
double precision.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ._validation import check_batch, check_same_n, check_same_size, check_square
from .exceptions import DegenerateError, InvalidInputError

#: Products of distance variances at or below this value take the zero branch.
DEGENERATE_TOL = 1e-14


@dataclass(frozen=True)
class DCorReport:
    """Distance correlation with the quantities it was computed from."""

    dcor: float
    dcov2: float
    dvar2_x: float
    dvar2_y: float
    degenerate: bool

    def __float__(self):
        return self.dcor


def pairwise_distances(x):
    """Euclidean distance matrix between the rows of ``x``.

    Returns an exactly symmetric (n, n) array with a zero diagonal.
    """
    x = check_batch(x)
    if x.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(x, metric="euclidean"))


def double_center(d):
    """Subtract row and column means from ``d`` and add back the grand mean."""
    d = check_square(d, "distance matrix")
    row = d.mean(axis=1, keepdims=True)
    col = d.mean(axis=0, keepdims=True)
    return d - row - col + d.mean()


def dcov2(a, b):
    """Squared distance covariance ``(1/n^2) sum A_kl B_kl`` of two centered matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_size(a, b)
    n = a.shape[0]
    return float(np.sum(a * b)) / (n * n)


def _report_from_centered(a, b):
    v_xy = dcov2(a, b)
    v_xx = dcov2(a, a)
    v_yy = dcov2(b, b)
    denom = v_xx * v_yy
    if denom <= DEGENERATE_TOL:
        return DCorReport(0.0, v_xy, v_xx, v_yy, True)
    # V_n^2(x, y) is non-negative in exact arithmetic; clip roundoff.
    r2 = max(v_xy, 0.0) / np.sqrt(denom)
    return DCorReport(float(np.sqrt(r2)), v_xy, v_xx, v_yy, False)


def dcor(x, y):
    """Empirical distance correlation between two samples.

    Parameters
    ----------
    x : array-like of shape (n, p)
    y : array-like of shape (n, q)
        ``p`` and ``q`` may differ; 1-D input is one feature per sample.

    Returns
    -------
    DCorReport
        ``report.dcor`` lies in [0, 1]. When either distance variance is
        (numerically) zero the report is flagged degenerate and ``dcor`` is 0.
    """
    x = check_batch(x, "x")
    y = check_batch(y, "y")
    check_same_n(x, y, names=["x", "y"])
    a = double_center(pairwise_distances(x))
    b = double_center(pairwise_distances(y))
    return _report_from_centered(a, b)


def pearson(x, y):
    """Sample Pearson correlation coefficient of two real vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise InvalidInputError("pearson needs two vectors of equal length >= 2")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("pearson input contains non-finite entries")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateError("pearson correlation of a constant vector is undefined")
    r = float(xc @ yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def make_rng(seed):
    """Counter-based generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(seed))


_FIG1_MEAN = np.array([0.0, 2.5])
_FIG1_COV = {
    "c": np.array([[1.0, 0.75], [0.75, 1.25]]),
    "d": np.array([[1.0, 0.0], [0.0, 1.25]]),
}


def fig1_sampler(case, n, seed):
    """Draw one of the four two-variable toy distributions.

    * ``a``: ``y = 0.5 x^2 + 0.75 e``
    * ``b``: ``y = 0.15 x^3 + 0.75 e + 2.5``
    * ``c``: bivariate normal, mean (0, 2.5), covariance [[1, .75], [.75, 1.25]]
    * ``d``: bivariate normal, mean (0, 2.5), covariance diag(1, 1.25)

    ``x`` and ``e`` are standard normal in cases ``a`` and ``b``. Returns two
    (n, 1) arrays.
    """
    case = str(case).lower()
    if case not in ("a", "b", "c", "d"):
        raise InvalidInputError(f"unknown case {case!r}; expected one of a, b, c, d")
    if int(n) < 2:
        raise InvalidInputError("fig1_sampler needs n >= 2")
    n = int(n)
    rng = make_rng(seed)
    if case in ("a", "b"):
        x = rng.standard_normal(n)
        noise = rng.standard_normal(n)
        if case == "a":
            y = 0.5 * x**2 + 0.75 * noise
        else:
            y = 0.15 * x**3 + 0.75 * noise + 2.5
    else:
        xy = rng.multivariate_normal(_FIG1_MEAN, _FIG1_COV[case], size=n, method="cholesky")
        x, y = xy[:, 0], xy[:, 1]
    return x.reshape(-1, 1), y.reshape(-1, 1)
