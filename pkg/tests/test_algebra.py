import numpy as np
import pytest

from superhol.algebra import (
    GrassmannElement,
    SuperMatrix,
    gmul_array,
    gr_body_soul,
    gr_eta_derivative,
    left_regular_array,
    sm_exp,
    sm_inverse,
    sm_supercommutator,
    sm_trace,
    substitution_matrix,
)
from superhol.errors import IndexRangeError, NotInvertibleError, ParityError

from conftest import random_grassmann


def eta(j, G):
    return GrassmannElement.generator(j, G)


def test_generators_anticommute():
    G = 3
    a, b = eta(1, G), eta(2, G)
    assert a * b == -(b * a)
    assert (a * a).is_zero()
    assert (a * b).text() == "eta1*eta2"
    assert (b * a).text() == "-eta1*eta2"


def test_monomial_unsorted_subset_sign():
    G = 3
    assert GrassmannElement.monomial([2, 1], G) == -GrassmannElement.monomial([1, 2], G)
    assert GrassmannElement.monomial([1, 1], G).is_zero()
    with pytest.raises(IndexRangeError):
        GrassmannElement.monomial([4], G)


def test_body_soul_split():
    a = GrassmannElement.from_terms({(): 2.0, (1, 2): 0.5}, 2)
    body, soul = gr_body_soul(a)
    assert body == 2.0
    assert soul == GrassmannElement.monomial([1, 2], 2, 0.5)


def test_inverse_of_even_element(rng):
    G = 4
    a = random_grassmann(rng, G, 0) + 3.0
    one = a * a.inverse()
    assert one.allclose(GrassmannElement.scalar(1.0, G))
    with pytest.raises(NotInvertibleError):
        eta(1, G).inverse()


def test_left_derivative_signs():
    G = 3
    e12 = GrassmannElement.monomial([1, 2], G)
    assert gr_eta_derivative(e12, 1) == eta(2, G)
    assert gr_eta_derivative(e12, 2) == -eta(1, G)
    assert gr_eta_derivative(e12, 3).is_zero()


def test_left_regular_matches_product(rng):
    G = 3
    A = np.stack([random_grassmann(rng, G).coeffs for _ in range(4)]).reshape(2, 2, 8)
    x = rng.normal(size=(2, 8))
    L = left_regular_array(A, G)
    direct = np.stack([sum(gmul_array(A[a, b], x[b], G) for b in range(2)) for a in range(2)])
    assert np.allclose((L @ x.reshape(-1)).reshape(2, 8), direct, atol=1e-13)


def _even_matrix(rng, p, q, G, shift=0.0):
    ip = [0] * p + [1] * q
    entries = []
    for a in range(p + q):
        row = []
        for b in range(p + q):
            g = random_grassmann(rng, G, (ip[a] + ip[b]) % 2, 0.3)
            if a == b:
                g = g + shift
            row.append(g)
        entries.append(row)
    return SuperMatrix.from_entries(entries, p, q)


def test_matrix_inverse_and_exp(rng):
    A = _even_matrix(rng, 1, 2, 3, shift=2.0)
    ident = SuperMatrix.identity(1, 2, 3)
    assert (A @ sm_inverse(A)).allclose(ident, 1e-12)
    Z = SuperMatrix.zeros(1, 2, 3)
    assert sm_exp(Z).allclose(ident)
    B = _even_matrix(rng, 1, 2, 3)
    E = sm_exp(B)
    assert (E @ sm_exp(-B)).allclose(ident, 1e-12)


def test_odd_matrix_not_invertible():
    M = SuperMatrix.from_real([[0.0, 1.0], [1.0, 0.0]], 1, 1, 1)
    assert M.parity() == 1
    with pytest.raises(ParityError):
        sm_inverse(M)


def test_supercommutator_odd_pair_is_anticommutator():
    X = SuperMatrix.from_real([[0, 1], [0, 0]], 1, 1, 0)
    Y = SuperMatrix.from_real([[0, 0], [1, 0]], 1, 1, 0)
    assert X.parity() == Y.parity() == 1
    assert sm_supercommutator(X, Y) == SuperMatrix.identity(1, 1, 0)


def test_trace_is_plain_trace():
    assert sm_trace(SuperMatrix.identity(2, 1, 2)) == GrassmannElement.scalar(3.0, 2)


def test_scale_by_odd_scalar_picks_row_sign():
    G = 2
    A = SuperMatrix.identity(1, 1, G)
    B = A.scale(eta(1, G))
    assert B.entry(0, 0) == eta(1, G)
    assert B.entry(1, 1) == -eta(1, G)
    assert B.eta_derivative(1) == A


def test_substitution_is_algebra_morphism(rng):
    G, Gt = 2, 3
    images = [random_grassmann(rng, Gt, 1) for _ in range(G)]
    S = substitution_matrix(images, Gt)
    a, b = random_grassmann(rng, G), random_grassmann(rng, G)
    lhs = (a * b).coeffs @ S
    rhs = (GrassmannElement(Gt, a.coeffs @ S) * GrassmannElement(Gt, b.coeffs @ S)).coeffs
    assert np.allclose(lhs, rhs, atol=1e-12)
