import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resonant_nf.halfpoly import HalfPoly, compositions, edge_coeff, multinomial, omega1, symmetric_A
from resonant_nf.lattice import enumerate_edges

XI = HalfPoly.var


def sqrt_prod(n, *idx):
    e = [0] * n
    for i in idx:
        e[i] += 1
    return HalfPoly(n, {tuple(e): 1})


def coeff_by_expansion(ell, q):
    """c_q(ell) from expanding the degree-(q+1) power of u ubar around the tangential modes.

    Black labels pick one u and one ubar for z_h zbar_k; red labels pick two u's for z_h z_k.
    The remaining factors are distributed over the n tangential modes in every possible way.
    """
    n = len(ell)
    if sum(ell) == 0:
        pref, qp, qm = (q + 1) ** 2, q, q
    else:
        pref, qp, qm = (q + 1) * q, q - 1, q + 1
    terms = {}
    for ap in compositions(qp, n):
        for am in compositions(qm, n):
            if tuple(a - b for a, b in zip(ap, am)) != tuple(ell):
                continue
            e = tuple(a + b for a, b in zip(ap, am))
            terms[e] = terms.get(e, 0) + pref * multinomial(qp, ap) * multinomial(qm, am)
    return HalfPoly(n, terms)


def test_symmetric_A_examples():
    assert symmetric_A(0, 3) == HalfPoly.const(3, 1)
    assert symmetric_A(1, 3) == XI(3, 0) + XI(3, 1) + XI(3, 2)
    A2 = symmetric_A(2, 2)
    assert A2 == XI(2, 0, 2) + 4 * XI(2, 0) * XI(2, 1) + XI(2, 1, 2)
    assert symmetric_A(1, 2).evaluate((1, 1)) == 2
    assert A2.evaluate((1, 1)) == 6


@pytest.mark.parametrize("r,n", [(2, 2), (3, 3), (4, 2)])
def test_symmetric_A_derivative_nonnegative_and_symmetric(r, n):
    A = symmetric_A(r, n)
    for i in range(n):
        assert all(c >= 0 for c in A.diff(i).terms.values())
    for perm in itertools.permutations(range(n)):
        assert A.permute(perm) == A


def test_omega1_cubic():
    assert omega1(1, 2) == [-2 * XI(2, 0), -2 * XI(2, 1)]
    assert omega1(1, 1) == [-2 * XI(1, 0)]


@pytest.mark.parametrize("q", [1, 2, 3, 4])
@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_omega1_leading_coefficient(q, n):
    om = omega1(q, n)
    for i in range(n):
        e = [0] * n
        e[i] = q
        assert om[i].coeff(e) == -q * (q + 1)
        assert om[i].restrict_axis(i) == -q * (q + 1) * XI(n, i, q)
        assert om[i].degree() == q


@pytest.mark.parametrize("q,n", [(1, 3), (2, 2), (3, 3)])
def test_omega1_matches_finite_difference(q, n):
    rng = np.random.default_rng(q * 10 + n)
    xi = rng.uniform(0.5, 1.5, n)
    A1, A0 = symmetric_A(q + 1, n), symmetric_A(q, n)
    h = 1e-6
    for i, w in enumerate(omega1(q, n)):
        up, dn = xi.copy(), xi.copy()
        up[i] += h
        dn[i] -= h
        fd = (A1.evaluate(up) - A1.evaluate(dn)) / (2 * h) - (q + 1) ** 2 * A0.evaluate(xi)
        assert abs(fd - w.evaluate(xi)) < 1e-6


def test_edge_coeff_cubic():
    target = 4 * sqrt_prod(2, 0, 1)
    assert edge_coeff((1, -1), 1) == target
    assert edge_coeff((-1, -1), 1) == target
    assert edge_coeff((1, -1), 1).evaluate((4, 9)) == 24


@pytest.mark.parametrize("q,n", [(1, 3), (2, 2), (2, 3), (3, 2), (3, 3)])
def test_edge_coeff_matches_expansion(q, n):
    X0, Xm2 = enumerate_edges(q, n)
    for lab in X0 + Xm2:
        assert edge_coeff(lab, q) == coeff_by_expansion(lab.ell, q)


def test_edge_coeff_homogeneous_on_random_edges():
    rng = random.Random(3)
    for _ in range(100):
        q = rng.randint(1, 3)
        n = rng.randint(2, 4)
        X0, Xm2 = enumerate_edges(q, n)
        lab = rng.choice(X0 + Xm2)
        c = edge_coeff(lab, q)
        assert c.degree() == q
        xi = [rng.uniform(0.5, 2) for _ in range(n)]
        assert c.evaluate([4 * x for x in xi]) == pytest.approx(4**q * c.evaluate(xi), rel=1e-12)


@pytest.mark.parametrize("q,n", [(1, 3), (2, 3)])
def test_edge_coeff_commutes_with_relabeling(q, n):
    X0, Xm2 = enumerate_edges(q, n)
    for perm in itertools.permutations(range(n)):
        for lab in X0 + Xm2:
            moved = [0] * n
            for i, a in enumerate(lab.ell):
                moved[perm[i]] = a
            assert edge_coeff(tuple(moved), q) == edge_coeff(lab, q).permute(perm)


def test_edge_coeff_rejects_non_labels():
    with pytest.raises(ValueError):
        edge_coeff((1, 1), 1)


polys = st.dictionaries(
    st.tuples(st.integers(0, 3), st.integers(0, 3)),
    st.fractions(min_value=-5, max_value=5, max_denominator=7),
    max_size=4,
).map(lambda t: HalfPoly(2, t))


@settings(max_examples=60, deadline=None)
@given(polys, polys, polys)
def test_ring_laws(a, b, c):
    assert a + b == b + a
    assert a * b == b * a
    assert (a + b) * c == a * c + b * c
    assert a - a == HalfPoly(2)


@settings(max_examples=60, deadline=None)
@given(polys, polys, st.tuples(st.floats(0.1, 3), st.floats(0.1, 3)))
def test_evaluation_is_a_homomorphism(a, b, xi):
    assert (a * b).evaluate(xi) == pytest.approx(a.evaluate(xi) * b.evaluate(xi), rel=1e-9, abs=1e-9)
    assert a.compile()(np.array([xi]))[0] == pytest.approx(a.evaluate(xi), rel=1e-9, abs=1e-9)


def test_declared_degree_enforced_and_text():
    with pytest.raises(ValueError):
        HalfPoly(2, {(2, 0): 1, (1, 0): 1}, declared_degree=1)
    p = HalfPoly(2, {(1, 1): Fraction(4)})
    assert p.to_text() == "4 * xi1^(1/2) * xi2^(1/2)"
    with pytest.raises(ValueError):
        p.evaluate((0, 1))
