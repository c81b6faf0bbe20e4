"""Quick oracle and property checks runnable from an installed package.

Each check returns ``(name, passed, detail)``; ``run_selftest`` runs them all.
These use fixed seeds and are much smaller than the test suite.
"""

import numpy as np
from scipy.stats import ortho_group

from . import reference
from .core import dcor, make_rng, pairwise_distances
from .grad import dcor_value_grad, finite_diff_check, pdcor_value_grad
from .pdc import bias_corrected_dcor2, pdcor, pdcov, project_orthogonal, u_center, u_inner
from .storage import FeatureDump, decode_dump, encode_dump


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1.0)


def check_oracles(instances=200, seed=0):
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(4, 65))
        x = rng.standard_normal((n, int(rng.integers(1, 9))))
        y = rng.standard_normal((n, int(rng.integers(1, 9))))
        z = rng.standard_normal((n, int(rng.integers(1, 9))))
        a = u_center(pairwise_distances(x))
        b = u_center(pairwise_distances(y))
        ra = reference.u_centered(reference.distance_matrix(x))
        rb = reference.u_centered(reference.distance_matrix(y))
        worst = max(
            worst,
            _rel(dcor(x, y).dcor, reference.dcor(x, y)),
            _rel(u_inner(a, b), reference.u_product(ra, rb)),
            _rel(pdcov(x, y, z), reference.pdcov(x, y, z)),
            _rel(pdcor(x, y, z).pdcor2, reference.pdcor(x, y, z)),
        )
    return "oracle equivalence", worst < 1e-12, f"max relative error {worst:.2e}"


def check_properties(seed=1):
    rng = make_rng(seed)
    x = rng.standard_normal((40, 3))
    y = x[:, :1] ** 2 + 0.3 * rng.standard_normal((40, 1))
    base = dcor(x, y).dcor
    q = ortho_group.rvs(3, random_state=int(rng.integers(2**31)))
    gaps = [
        abs(dcor(x, x).dcor - 1.0),
        abs(dcor(x + 5.0, y).dcor - base),
        abs(dcor(3.7 * x, y).dcor - base),
        abs(dcor(x @ q, y).dcor - base),
        abs(dcor(y, x).dcor - base),
    ]
    degenerate = dcor(np.ones((10, 2)), rng.standard_normal((10, 2)))
    ok = max(gaps) < 1e-9 and degenerate.dcor == 0.0 and degenerate.degenerate
    return "dcor properties", ok, f"max invariance gap {max(gaps):.2e}"


def check_partial_identities(seed=2):
    rng = make_rng(seed)
    x = rng.standard_normal((30, 2))
    y = rng.standard_normal((30, 3)) + x[:, :1]
    self_cond = abs(pdcov(x, y, x))
    const = abs(pdcor(x, y, np.zeros((30, 1))).pdcor2 - bias_corrected_dcor2(x, y))
    a = u_center(pairwise_distances(x))
    c = u_center(pairwise_distances(y))
    ortho = abs(u_inner(project_orthogonal(a, c), c))
    ok = self_cond < 1e-12 and const < 1e-9 and ortho < 1e-9
    return "partial identities", ok, f"{self_cond:.1e} / {const:.1e} / {ortho:.1e}"


def check_gradients(configs=5, seed=3):
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(configs):
        x = rng.standard_normal((16, 3))
        y = x @ rng.standard_normal((3, 2)) + 0.5 * rng.standard_normal((16, 2))
        z = rng.standard_normal((16, 2))
        worst = max(worst,
                    finite_diff_check(lambda v: dcor_value_grad(v, y), x),
                    finite_diff_check(lambda v: pdcor_value_grad(v, y, z), x))
    return "gradients vs finite differences", worst < 1e-6, f"max discrepancy {worst:.2e}"


def check_dump_roundtrip(seed=4):
    rng = make_rng(seed)
    dump = FeatureDump("selftest", {"h1": rng.standard_normal((7, 3)),
                                    "h2": rng.standard_normal((7, 5)).astype(np.float32)},
                       list(range(7)))
    ok = decode_dump(encode_dump(dump)).equals(dump)
    return "DCFD round-trip", ok, "bit-exact" if ok else "payload differs"


CHECKS = (check_oracles, check_properties, check_partial_identities, check_gradients,
          check_dump_roundtrip)


def run_selftest():
    return [check() for check in CHECKS]
