import numpy as np
import pytest

from superhol.errors import ParityError, UnsupportedOrderError
from superhol.geometry import (
    AuxConnectionSpec,
    ChartSpec,
    ConnectionSpec,
    cov_deriv_curvature,
    curvature_frame,
    differential_matrix,
    sfm_is_zero,
    sfm_pullback_array,
    sfm_text,
)
from superhol.superexpr import sf_compose, sf_partial

from conftest import random_connection, sf


def _sgn(e):
    return -1 if e % 2 else 1


def test_flat_curvature_vanishes():
    conn = ConnectionSpec.flat(ChartSpec(2, 1, 0), 1, 1)
    for i in range(3):
        for j in range(3):
            assert sfm_is_zero(curvature_frame(conn, i, j))


def test_odd_line_curvature_is_two(odd_line):
    assert sfm_text(curvature_frame(odd_line, 0, 0)) == [["2"]]


@pytest.mark.parametrize("seed", range(4))
def test_skew_symmetry(seed):
    rng = np.random.default_rng(seed)
    conn = random_connection(rng, 2, 2, 1, 1, L=1)
    chart = conn.chart
    for i in range(chart.dim):
        for j in range(chart.dim):
            a = curvature_frame(conn, i, j)
            b = curvature_frame(conn, j, i)
            sign = -_sgn(chart.parity(i) * chart.parity(j))
            for ra, rb in zip(a, b):
                for x, y in zip(ra, rb):
                    assert x == y * sign


def test_parity_validation_rejects_bad_entry():
    chart = ChartSpec(1, 1, 0)
    bad = [[[sf("th1", 1, 1)]], [[chart.zero()]]]
    with pytest.raises(ParityError):
        ConnectionSpec.from_matrices(chart, 1, 0, bad)
    good = [[[sf("x1", 1, 1)]], [[sf("th1", 1, 1)]]]
    ConnectionSpec.from_matrices(chart, 1, 0, good)


def test_aux_parity_validation():
    chart = ChartSpec(1, 1, 0)
    z = chart.zero()
    M = [[sf("th1", 1, 1), z], [z, z]]
    with pytest.raises(ParityError):
        AuxConnectionSpec(chart, (M, [[z, z], [z, z]]))


def _classical_gamma(rng, n, r):
    """Polynomial coefficients so the oracle can take exact derivatives."""
    mats = []
    for _ in range(n):
        M = []
        for _a in range(r):
            row = []
            for _b in range(r):
                c0, c1, c2 = rng.uniform(-1, 1, 3)
                row.append(f"{c0:.3f} + {c1:.3f}*x1 + {c2:.3f}*x2*x1")
            M.append(row)
        mats.append(M)
    return mats


def test_classical_oracle_even_data():
    rng = np.random.default_rng(7)
    n, r = 2, 2
    texts = _classical_gamma(rng, n, r)
    chart = ChartSpec(n, 0, 0)
    mats = [[[sf(t, n) for t in row] for row in M] for M in texts]
    conn = ConnectionSpec.from_matrices(chart, r, 0, mats)
    for _ in range(5):
        x = rng.uniform(-1, 1, n)
        xv = [np.array([v]) for v in x]

        def gam(l, dx=None):
            return sfm_pullback_array(mats[l], xv, [], 0)[..., 0]

        for i in range(n):
            for j in range(n):
                Gi, Gj = gam(i), gam(j)
                dGj = sfm_pullback_array([[sf_partial(f, f"x{i + 1}") for f in row] for row in mats[j]], xv, [], 0)[..., 0]
                dGi = sfm_pullback_array([[sf_partial(f, f"x{j + 1}") for f in row] for row in mats[i]], xv, [], 0)[..., 0]
                want = dGj - dGi + Gi @ Gj - Gj @ Gi
                got = sfm_pullback_array(curvature_frame(conn, i, j), xv, [], 0)[..., 0]
                assert np.max(np.abs(got - want)) <= 1e-12


def test_classical_oracle_finite_difference():
    rng = np.random.default_rng(8)
    n = 2
    chart = ChartSpec(n, 0, 0)
    mats = [[[sf(t, n) for t in row] for row in M] for M in _classical_gamma(rng, n, 2)]
    conn = ConnectionSpec.from_matrices(chart, 2, 0, mats)
    x = np.array([0.3, -0.4])
    h = 1e-5

    def gam(l, pt):
        return sfm_pullback_array(mats[l], [np.array([v]) for v in pt], [], 0)[..., 0]

    e = np.eye(n)
    d0G1 = (gam(1, x + h * e[0]) - gam(1, x - h * e[0])) / (2 * h)
    d1G0 = (gam(0, x + h * e[1]) - gam(0, x - h * e[1])) / (2 * h)
    want = d0G1 - d1G0 + gam(0, x) @ gam(1, x) - gam(1, x) @ gam(0, x)
    got = sfm_pullback_array(curvature_frame(conn, 0, 1), [np.array([v]) for v in x], [], 0)[..., 0]
    assert np.max(np.abs(got - want)) <= 1e-8


def test_cov_derivatives_flat_vanish():
    chart = ChartSpec(1, 1, 0)
    conn = ConnectionSpec.flat(chart, 1, 1)
    assert sfm_is_zero(cov_deriv_curvature(conn, None, [0], 0, 1))
    assert sfm_is_zero(cov_deriv_curvature(conn, None, [1, 0], 1, 1))


def test_cov_derivative_classical_oracle():
    # purely even data with flat aux connection: nabla_l R = d_l R + [Gamma_l, R]
    rng = np.random.default_rng(9)
    n = 2
    chart = ChartSpec(n, 0, 0)
    mats = [[[sf(t, n) for t in row] for row in M] for M in _classical_gamma(rng, n, 2)]
    conn = ConnectionSpec.from_matrices(chart, 2, 0, mats)

    def cov(l, M):
        d = [[sf_partial(f, f"x{l + 1}") for f in row] for row in M]
        G = mats[l]
        out = []
        for a in range(2):
            row = []
            for b in range(2):
                s = d[a][b]
                for c in range(2):
                    s = s + G[a][c] * M[c][b] - M[a][c] * G[c][b]
                row.append(s)
            out.append(row)
        return out

    R = curvature_frame(conn, 0, 1)
    first = cov(1, R)
    second = cov(0, cov(1, R))
    assert all(x == y for ra, rb in zip(first, cov_deriv_curvature(conn, None, [1], 0, 1)) for x, y in zip(ra, rb))
    got = cov_deriv_curvature(conn, None, [0, 1], 0, 1)
    xv = [np.array([0.2]), np.array([-0.7])]
    diff = sfm_pullback_array(got, xv, [], 0) - sfm_pullback_array(second, xv, [], 0)
    assert np.max(np.abs(diff)) <= 1e-12


def test_cov_derivative_order_limit(mixed):
    with pytest.raises(UnsupportedOrderError):
        cov_deriv_curvature(mixed, None, [0, 1, 0], 0, 1)


def test_differential_identity_and_even_jacobian():
    names, par = ["x1", "th1"], [0, 1]
    ident = differential_matrix([sf("x1", 1, 1), sf("th1", 1, 1)], names, par, par)
    assert [[f.text() for f in row] for row in ident] == [["1", "0"], ["0", "1"]]
    jac = differential_matrix([sf("x1^2*x2", 2), sf("sin(x2)", 2)], ["x1", "x2"], [0, 0], [0, 0])
    assert jac[0][0] == sf("2*x1*x2", 2)
    assert jac[1][1] == sf("cos(x2)", 2)


def test_chain_rule():
    names, par = ["x1", "th1", "th2"], [0, 1, 1]
    phi = [sf("x1 + th1*th2", 1, 2), sf("x1*th1 + th2", 1, 2), sf("th2 + sin(x1)*th1", 1, 2)]
    psi = [sf("x1^2 + 3*th1*th2", 1, 2), sf("exp(x1)*th2", 1, 2), sf("th1 + x1*th2", 1, 2)]
    sub = dict(zip(names, phi))
    comp = [sf_compose(f, sub) for f in psi]
    whole = differential_matrix(comp, names, par, par)
    dpsi = differential_matrix(psi, names, par, par)
    dphi = differential_matrix(phi, names, par, par)
    for l in range(3):
        for k in range(3):
            acc = sf("0", 1, 2)
            for i in range(3):
                acc = acc + sf_compose(dpsi[l][i], sub) * dphi[i][k]
            assert acc == whole[l][k]
