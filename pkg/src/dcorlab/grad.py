"""Exact gradients of distance-correlation losses with respect to a feature batch.

The losses are compositions distance -> centering -> inner product -> ratio,
so the gradient is assembled from the adjoint of each stage. Centering is
linear, and its adjoint is applied to the upstream matrix gradient before it
is pushed through the pairwise distances.

At coincident samples (zero distance) the distance derivative is taken to be
zero, so batches with duplicate rows are legal.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_batch, check_same_n
from .core import DEGENERATE_TOL, double_center, pairwise_distances
from .exceptions import DegenerateError, InvalidInputError, SizeError
from .pdc import MIN_SAMPLES, _projection, u_center, u_inner


@dataclass(frozen=True)
class GradResult:
    value: float
    grad: np.ndarray


def distance_backward(x, d, grad_d):
    """Push a gradient on the distance matrix ``d = pdist(x)`` back onto ``x``.

    ``grad_d`` holds dL/dd_kl for every ordered pair; it is symmetrized here
    since d_kl and d_lk are the same function of ``x``.
    """
    g = grad_d + grad_d.T
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(d > 0, g / d, 0.0)
    np.fill_diagonal(w, 0.0)
    return w.sum(axis=1)[:, None] * x - w @ x


def double_center_backward(grad_a):
    """Adjoint of double centering (the centering map is self-adjoint)."""
    return double_center(grad_a)


def u_center_backward(grad_u):
    """Adjoint of U-centering for an upstream gradient with zero diagonal."""
    g = np.array(grad_u, dtype=np.float64)
    np.fill_diagonal(g, 0.0)
    n = g.shape[0]
    col = g.sum(axis=0, keepdims=True)
    row = g.sum(axis=1, keepdims=True)
    return g - col / (n - 2) - row / (n - 2) + g.sum() / ((n - 1) * (n - 2))


def _other_side(x, y, wrt):
    if wrt in ("X", "x"):
        return x, y
    if wrt in ("Y", "y"):
        return y, x
    raise InvalidInputError(f"wrt must be 'X' or 'Y', got {wrt!r}")


def dcor_value_grad(X, Y, wrt="X"):
    """Distance correlation and its gradient with respect to one argument.

    Raises
    ------
    DegenerateError
        If either distance variance vanishes, where the ratio is 0/0.
    """
    X = check_batch(X, "X", min_samples=2)
    Y = check_batch(Y, "Y", min_samples=2)
    n = check_same_n(X, Y, names=["X", "Y"])
    u, v = _other_side(X, Y, wrt)
    du = pairwise_distances(u)
    a = double_center(du)
    b = double_center(pairwise_distances(v))
    n2 = float(n * n)
    vab = float(np.sum(a * b)) / n2
    vaa = float(np.sum(a * a)) / n2
    vbb = float(np.sum(b * b)) / n2
    if vaa * vbb <= DEGENERATE_TOL:
        raise DegenerateError("distance variance is zero; dcor gradient undefined")
    s = np.sqrt(vaa * vbb)
    r2 = max(vab, 0.0) / s
    r = float(np.sqrt(r2))
    if r == 0.0:
        # sqrt is not differentiable at 0; zero is a valid subgradient.
        return GradResult(0.0, np.zeros_like(u))
    # d r / d A, with the 1/n^2 of each V^2 folded in.
    grad_a = (b / s - r2 * a / vaa) / (2.0 * r * n2)
    grad_d = double_center_backward(grad_a)
    return GradResult(r, distance_backward(u, du, grad_d))


def _pdcor_grad_from_u(x, dx, a, b, c):
    px, _, _ = _projection(a, c)
    py, _, _ = _projection(b, c)
    nx2 = u_inner(px, px)
    ny2 = u_inner(py, py)
    if nx2 <= DEGENERATE_TOL or ny2 <= DEGENERATE_TOL:
        raise DegenerateError("projected U-centered matrix has zero norm")
    n = a.shape[0]
    scale = 1.0 / (n * (n - 3))
    nx = np.sqrt(nx2)
    ny = np.sqrt(ny2)
    value = u_inner(px, py) / (nx * ny)
    # Projection is self-adjoint and idempotent and py is already orthogonal
    # to c, so d(px . py)/dA = scale * py and d(px . px)/dA = 2 scale * px.
    grad_u = scale * (py / (nx * ny) - value * px / nx2)
    grad_d = u_center_backward(grad_u)
    return GradResult(float(value), distance_backward(x, dx, grad_d))


def pdcor_value_grad(X, Y, Z, wrt="X"):
    """Partial distance correlation R*^2(X, Y; Z) and its gradient in ``X``.

    ``Y`` and ``Z`` are treated as constants.
    """
    if wrt not in ("X", "x"):
        raise InvalidInputError("pdcor gradients are only available with respect to X")
    X = check_batch(X, "X")
    Y = check_batch(Y, "Y")
    Z = check_batch(Z, "Z")
    n = check_same_n(X, Y, Z, names=["X", "Y", "Z"])
    if n < MIN_SAMPLES:
        raise SizeError(f"pdcor gradient needs n >= 4, got n={n}")
    dx = pairwise_distances(X)
    a = u_center(dx)
    b = u_center(pairwise_distances(Y))
    c = u_center(pairwise_distances(Z))
    return _pdcor_grad_from_u(X, dx, a, b, c)


def bias_corrected_dcor2_value_grad(X, Y):
    """Bias-corrected squared distance correlation and its gradient in ``X``."""
    X = check_batch(X, "X")
    Y = check_batch(Y, "Y")
    n = check_same_n(X, Y, names=["X", "Y"])
    if n < MIN_SAMPLES:
        raise SizeError(f"bias-corrected dcor gradient needs n >= 4, got n={n}")
    dx = pairwise_distances(X)
    a = u_center(dx)
    b = u_center(pairwise_distances(Y))
    return _pdcor_grad_from_u(X, dx, a, b, np.zeros_like(a))


def central_differences(loss, X, h=1e-5):
    """Entrywise central-difference gradient of a scalar ``loss(X)``."""
    X = np.array(X, dtype=np.float64)
    out = np.empty_like(X)
    flat = X.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss(X)
        flat[i] = orig - h
        down = loss(X)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return out


def relative_discrepancy(analytic, numeric, atol=1e-4):
    """Largest entrywise gap, relative to the largest gradient entry.

    The normalizer never drops below ``atol``, so a gradient that vanishes
    (e.g. at a stationary point) is compared in absolute terms.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), atol)
    return float(np.max(np.abs(analytic - numeric))) / scale


def finite_diff_check(loss, X, h=1e-5, atol=1e-4):
    """Compare an analytic gradient with central differences.

    ``loss`` maps a batch to ``(value, grad)``, e.g. a ``GradResult`` or a
    tuple. Returns the maximum entrywise discrepancy, normalized by the
    largest gradient entry (see :func:`relative_discrepancy`).
    """
    if h <= 0:
        raise InvalidInputError("finite-difference step h must be positive")
    X = np.array(X, dtype=np.float64)

    def value_grad(z):
        res = loss(z)
        if isinstance(res, GradResult):
            return res.value, res.grad
        return res[0], res[1]

    _, analytic = value_grad(X)
    numeric = central_differences(lambda z: value_grad(z)[0], X, h)
    return relative_discrepancy(analytic, numeric, atol)
