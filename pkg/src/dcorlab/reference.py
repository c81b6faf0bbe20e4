"""Naive direct-formula implementations.

Pure Python, loop-based, with ``math.fsum`` accumulation. They exist only to
cross-check the vectorized code (``dcorlab selftest`` and the test suite) and
share nothing with it beyond the definitions.
"""

import math


def _rows(x):
    rows = []
    for r in x:
        try:
            rows.append([float(v) for v in r])
        except TypeError:
            rows.append([float(r)])
    return rows


def distance_matrix(x):
    rows = _rows(x)
    n = len(rows)
    d = [[0.0] * n for _ in range(n)]
    for k in range(n):
        for l in range(n):
            d[k][l] = math.sqrt(math.fsum((u - v) ** 2 for u, v in zip(rows[k], rows[l])))
    return d


def double_centered(d):
    n = len(d)
    row = [math.fsum(d[k]) / n for k in range(n)]
    col = [math.fsum(d[k][l] for k in range(n)) / n for l in range(n)]
    grand = math.fsum(math.fsum(r) for r in d) / (n * n)
    return [[d[k][l] - row[k] - col[l] + grand for l in range(n)] for k in range(n)]


def u_centered(d):
    n = len(d)
    col = [math.fsum(d[i][l] for i in range(n)) for l in range(n)]
    row = [math.fsum(d[k][j] for j in range(n)) for k in range(n)]
    total = math.fsum(math.fsum(r) for r in d)
    out = [[0.0] * n for _ in range(n)]
    for k in range(n):
        for l in range(n):
            if k != l:
                out[k][l] = (d[k][l] - col[l] / (n - 2) - row[k] / (n - 2)
                             + total / ((n - 1) * (n - 2)))
    return out


def v_product(a, b):
    n = len(a)
    return math.fsum(a[k][l] * b[k][l] for k in range(n) for l in range(n)) / (n * n)


def u_product(a, b):
    n = len(a)
    s = math.fsum(a[k][l] * b[k][l] for k in range(n) for l in range(n) if k != l)
    return s / (n * (n - 3))


def dcor(x, y):
    a = double_centered(distance_matrix(x))
    b = double_centered(distance_matrix(y))
    vxy, vxx, vyy = v_product(a, b), v_product(a, a), v_product(b, b)
    if vxx * vyy <= 1e-14:
        return 0.0
    return math.sqrt(max(vxy, 0.0) / math.sqrt(vxx * vyy))


def _residual(a, c):
    n = len(a)
    cc = u_product(c, c)
    if cc <= 1e-14:
        return a
    beta = u_product(a, c) / cc
    return [[a[k][l] - beta * c[k][l] for l in range(n)] for k in range(n)]


def pdcov(x, y, z):
    a = u_centered(distance_matrix(x))
    b = u_centered(distance_matrix(y))
    c = u_centered(distance_matrix(z))
    return u_product(_residual(a, c), _residual(b, c))


def pdcor(x, y, z):
    a = u_centered(distance_matrix(x))
    b = u_centered(distance_matrix(y))
    c = u_centered(distance_matrix(z))
    px, py = _residual(a, c), _residual(b, c)
    nx2, ny2 = u_product(px, px), u_product(py, py)
    if nx2 <= 1e-14 or ny2 <= 1e-14:
        return 0.0
    return u_product(px, py) / (math.sqrt(nx2) * math.sqrt(ny2))
