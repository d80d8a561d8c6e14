"""Exact polynomials in the square roots of the actions xi_1..xi_n.

Exponents are stored doubled, so the key ``(1, 1)`` stands for
``sqrt(xi_1 * xi_2)``. Coefficients are ``fractions.Fraction``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import product


def multinomial(m: int, k) -> int:
    """Multinomial coefficient m! / prod(k_i!), zero unless k >= 0 and sum(k) == m."""
    if any(c < 0 for c in k) or sum(k) != m:
        return 0
    out = math.factorial(m)
    for c in k:
        out //= math.factorial(c)
    return out


def compositions(total: int, n: int):
    """All n-tuples of nonnegative integers summing to total, in lex order."""
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, n - 1):
            yield (first,) + rest


class HalfPoly:
    """Sparse polynomial in sqrt(xi) with rational coefficients.

    Parameters
    ----------
    n : int
        Number of variables.
    terms : dict, optional
        Map from doubled exponent tuples to rational coefficients.
    declared_degree : Fraction, optional
        Homogeneity degree in xi; checked on construction when given.
    """

    __slots__ = ("n", "terms", "declared_degree")

    def __init__(self, n: int, terms=None, declared_degree=None):
        self.n = n
        self.terms = {}
        for e, c in (terms or {}).items():
            e = tuple(int(a) for a in e)
            if len(e) != n or any(a < 0 for a in e):
                raise ValueError(f"bad exponent {e} for {n} variables")
            c = Fraction(c)
            if c:
                self.terms[e] = self.terms.get(e, Fraction(0)) + c
        self.terms = {e: c for e, c in self.terms.items() if c}
        self.declared_degree = None
        if declared_degree is not None:
            deg = Fraction(declared_degree)
            for e in self.terms:
                if Fraction(sum(e), 2) != deg:
                    raise ValueError(f"term {e} breaks declared degree {deg}")
            self.declared_degree = deg

    # construction helpers
    @classmethod
    def const(cls, n, c):
        return cls(n, {(0,) * n: c})

    @classmethod
    def var(cls, n, i, power=1):
        e = [0] * n
        e[i] = 2 * power
        return cls(n, {tuple(e): 1})

    def is_zero(self) -> bool:
        return not self.terms

    def degrees(self) -> set:
        return {Fraction(sum(e), 2) for e in self.terms}

    def degree(self):
        """Common xi-degree of all terms, or None when not homogeneous or zero."""
        degs = self.degrees()
        return degs.pop() if len(degs) == 1 else None

    def coeff(self, exponent) -> Fraction:
        """Coefficient of the monomial with the given (undoubled) xi exponent."""
        key = tuple(int(Fraction(a) * 2) for a in exponent)
        return self.terms.get(key, Fraction(0))

    # arithmetic
    def _check(self, other):
        if isinstance(other, HalfPoly):
            if other.n != self.n:
                raise ValueError("variable count mismatch")
            return other
        return HalfPoly.const(self.n, other)

    def __add__(self, other):
        other = self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, Fraction(0)) + c
        return HalfPoly(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return HalfPoly(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._check(other))

    def __rsub__(self, other):
        return self._check(other) - self

    def __mul__(self, other):
        if not isinstance(other, HalfPoly):
            c = Fraction(other)
            return HalfPoly(self.n, {e: c * v for e, v in self.terms.items()})
        other = self._check(other)
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return HalfPoly(self.n, out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, HalfPoly):
            return self.n == other.n and self.terms == other.terms
        return self == HalfPoly.const(self.n, other)

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    def diff(self, i: int) -> "HalfPoly":
        """Exact partial derivative in xi_i."""
        out = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            f = list(e)
            f[i] -= 2
            if f[i] < 0:
                raise ValueError("derivative of sqrt(xi_i) is not a half-polynomial")
            out[tuple(f)] = c * Fraction(e[i], 2)
        return HalfPoly(self.n, out)

    def permute(self, perm) -> "HalfPoly":
        """Relabel variables: variable i becomes variable perm[i]."""
        out = {}
        for e, c in self.terms.items():
            f = [0] * self.n
            for i, a in enumerate(e):
                f[perm[i]] = a
            out[tuple(f)] = c
        return HalfPoly(self.n, out)

    def restrict_axis(self, i: int) -> "HalfPoly":
        """Set every xi_j with j != i to zero."""
        return HalfPoly(
            self.n,
            {e: c for e, c in self.terms.items() if all(a == 0 for j, a in enumerate(e) if j != i)},
        )

    # evaluation
    def evaluate(self, xi) -> float:
        """Evaluate at positive xi: exact rational sums per sqrt-class, one float step at the end."""
        if len(xi) != self.n:
            raise ValueError("xi has the wrong length")
        if any(x <= 0 for x in xi):
            raise ValueError("xi must be componentwise positive")
        xq = [Fraction(x) for x in xi]
        groups = {}
        for e, c in self.terms.items():
            val = c
            for a, x in zip(e, xq):
                if a >= 2:
                    val *= x ** (a // 2)
            odd = tuple(i for i, a in enumerate(e) if a % 2)
            groups[odd] = groups.get(odd, Fraction(0)) + val
        parts = []
        for odd, val in groups.items():
            root = Fraction(1)
            for i in odd:
                root *= xq[i]
            parts.append(float(val) * math.sqrt(root) if odd else float(val))
        return math.fsum(parts)

    def compile(self):
        """Fast numeric evaluator over an array of samples of shape (..., n)."""
        import numpy as np

        if not self.terms:
            return lambda X: np.zeros(np.asarray(X, dtype=float).shape[:-1])
        E = np.array(list(self.terms.keys()), dtype=float) / 2.0
        C = np.array([float(c) for c in self.terms.values()])

        def f(X):
            X = np.asarray(X, dtype=float)
            return np.exp(np.log(X) @ E.T) @ C

        return f

    def __call__(self, xi):
        return self.evaluate(xi)

    # text form
    def to_text(self) -> str:
        if not self.terms:
            return "0"
        pieces = []
        for e in sorted(self.terms, reverse=True):
            c = self.terms[e]
            factors = [f"xi{i + 1}^({a}/2)" for i, a in enumerate(e) if a]
            pieces.append(" * ".join([str(c)] + factors))
        return " + ".join(pieces)

    __str__ = to_text

    def __repr__(self):
        return f"HalfPoly({self.to_text()!r})"


def dot(polys, vec) -> HalfPoly:
    """Sum of integer (or rational) weights times polynomials."""
    out = HalfPoly(polys[0].n)
    for p, v in zip(polys, vec):
        if v:
            out = out + p * v
    return out


def symmetric_A(r: int, n: int) -> HalfPoly:
    """A_r = sum over |k| = r of multinomial(r; k)^2 xi^k."""
    terms = {}
    for k in compositions(r, n):
        terms[tuple(2 * a for a in k)] = multinomial(r, k) ** 2
    return HalfPoly(n, terms, declared_degree=r)


def omega1(q: int, n: int) -> list:
    """Frequency modulation grad A_{q+1} - (q+1)^2 A_q (1, ..., 1)."""
    A_next = symmetric_A(q + 1, n)
    A_q = symmetric_A(q, n)
    shift = A_q * ((q + 1) ** 2)
    return [HalfPoly(n, (A_next.diff(i) - shift).terms, declared_degree=q) for i in range(n)]


def edge_coeff(ell, q: int) -> HalfPoly:
    """Coefficient polynomial c_q(ell) attached to an edge label."""
    ell = tuple(getattr(ell, "ell", ell))
    n = len(ell)
    eta = sum(ell)
    if eta not in (0, -2) or not any(ell):
        raise ValueError(f"{ell} is not an edge label")
    plus = tuple(max(a, 0) for a in ell)
    minus = tuple(max(-a, 0) for a in ell)
    base = tuple(p + m for p, m in zip(plus, minus))  # doubled exponent of xi^((l+ + l-)/2)
    terms = {}
    if eta == 0:
        pref = (q + 1) ** 2
        free = q - sum(plus)
        if free >= 0:
            for alpha in compositions(free, n):
                a_p = tuple(p + a for p, a in zip(plus, alpha))
                a_m = tuple(m + a for m, a in zip(minus, alpha))
                c = multinomial(q, a_p) * multinomial(q, a_m)
                if c:
                    e = tuple(b + 2 * a for b, a in zip(base, alpha))
                    terms[e] = terms.get(e, 0) + pref * c
    else:
        pref = (q + 1) * q
        free = q - 1 - sum(plus)
        if free >= 0:
            for alpha in compositions(free, n):
                a_p = tuple(p + a for p, a in zip(plus, alpha))
                a_m = tuple(m + a for m, a in zip(minus, alpha))
                c = multinomial(q + 1, a_m) * multinomial(q - 1, a_p)
                if c:
                    e = tuple(b + 2 * a for b, a in zip(base, alpha))
                    terms[e] = terms.get(e, 0) + pref * c
    return HalfPoly(n, terms, declared_degree=q)
