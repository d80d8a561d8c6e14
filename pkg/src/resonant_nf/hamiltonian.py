"""Truncated Hamiltonians: sparse monomials in (x, y, z, zbar), Poisson brackets, projections and norms.

A monomial ``e^{i nu.x} y^i z^alpha zbar^beta`` is stored as a ``Monomial`` whose
``alpha`` and ``beta`` are sorted tuples of ``(site, power)`` pairs. Sites are
any sortable hashables; lattice points are integer tuples.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product
from typing import NamedTuple


class Monomial(NamedTuple):
    nu: tuple
    i: tuple
    alpha: tuple
    beta: tuple

    @property
    def degree(self) -> int:
        return 2 * sum(self.i) + sum(p for _, p in self.alpha) + sum(p for _, p in self.beta)

    @property
    def wdegree(self) -> int:
        return sum(p for _, p in self.alpha) + sum(p for _, p in self.beta)

    def conj(self) -> "Monomial":
        return Monomial(tuple(-a for a in self.nu), self.i, self.beta, self.alpha)

    def sites(self) -> set:
        return {k for k, _ in self.alpha} | {k for k, _ in self.beta}


def _pack(d) -> tuple:
    return tuple(sorted((k, p) for k, p in d.items() if p))


def mono(nu, i=None, alpha=None, beta=None) -> Monomial:
    """Build a monomial; alpha/beta are dicts site -> power or iterables of sites (with repetition)."""
    nu = tuple(int(a) for a in nu)
    i = tuple(int(a) for a in i) if i is not None else (0,) * len(nu)

    def norm(x):
        if x is None:
            return ()
        if isinstance(x, dict):
            return _pack(x)
        d = defaultdict(int)
        for k in x:
            d[k] += 1
        return _pack(d)

    return Monomial(nu, i, norm(alpha), norm(beta))


def _merge(a, b, drop=None) -> tuple:
    d = dict(a)
    for k, p in b:
        d[k] = d.get(k, 0) + p
    if drop is not None:
        d[drop] -= 1
    return _pack(d)


def l1(v) -> int:
    return sum(abs(c) for c in v)


class CutoffError(ValueError):
    """Operands carry different truncation cutoffs."""


class TruncatedHamiltonian:
    """Finite sum of monomials with complex (or polynomial) coefficients.

    Parameters
    ----------
    n : int
        Number of angle/action pairs.
    coeffs : dict, optional
        Map Monomial -> coefficient.
    K : int, optional
        Fourier cutoff on |nu|_1 (None means no cutoff).
    max_degree : int, optional
        Degree cutoff with y counted twice (None means no cutoff).

    Attributes
    ----------
    debt : float
        Accumulated majorant-style size of monomials dropped by cutoffs.
    """

    def __init__(self, n: int, coeffs=None, K=None, max_degree=None):
        self.n = n
        self.K = K
        self.max_degree = max_degree
        self.c = {}
        self.debt = 0.0
        for m, v in (coeffs or {}).items():
            if v != 0:
                self.c[m] = self.c.get(m, 0) + v

    # container protocol
    def __len__(self):
        return len(self.c)

    def __iter__(self):
        return iter(self.c.items())

    def __getitem__(self, m):
        return self.c.get(m, 0)

    def copy(self) -> "TruncatedHamiltonian":
        out = TruncatedHamiltonian(self.n, dict(self.c), self.K, self.max_degree)
        out.debt = self.debt
        return out

    def like(self, coeffs=None) -> "TruncatedHamiltonian":
        return TruncatedHamiltonian(self.n, coeffs, self.K, self.max_degree)

    def prune(self, tol: float = 0.0) -> "TruncatedHamiltonian":
        self.c = {m: v for m, v in self.c.items() if abs(v) > tol}
        return self

    # arithmetic
    def __add__(self, other):
        out = self.copy()
        for m, v in other.c.items():
            out.c[m] = out.c.get(m, 0) + v
        out.debt += other.debt
        return out.prune()

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, a):
        if isinstance(a, TruncatedHamiltonian):
            return multiply(self, a)
        out = self.like({m: a * v for m, v in self.c.items()})
        out.debt = abs(a) * self.debt
        return out

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, TruncatedHamiltonian):
            return NotImplemented
        return self.n == other.n and self.c == other.c

    def max_abs(self) -> float:
        return max((abs(v) for v in self.c.values()), default=0.0)

    def is_real(self, tol: float = 0.0) -> bool:
        """coeff(nu, i, alpha, beta) == conj(coeff(-nu, i, beta, alpha)) up to tol."""
        for m, v in self.c.items():
            w = self.c.get(m.conj(), 0)
            if abs(v - complex(w).conjugate()) > tol * max(1.0, abs(v)):
                return False
        return True

    def truncate(self) -> "TruncatedHamiltonian":
        """Drop monomials beyond the cutoffs, recording their coefficient mass as debt."""
        keep = {}
        for m, v in self.c.items():
            if (self.K is not None and l1(m.nu) > self.K) or (
                self.max_degree is not None and m.degree > self.max_degree
            ):
                self.debt += abs(v)
            else:
                keep[m] = v
        self.c = keep
        return self

    def __repr__(self):
        return f"TruncatedHamiltonian(n={self.n}, terms={len(self.c)}, K={self.K}, max_degree={self.max_degree})"


def _cutoffs(F, G):
    K = F.K if G.K is None else G.K if F.K is None else None
    md = F.max_degree if G.max_degree is None else G.max_degree if F.max_degree is None else None
    if F.K is not None and G.K is not None:
        if F.K != G.K:
            raise CutoffError(f"Fourier cutoffs differ: {F.K} vs {G.K}")
        K = F.K
    if F.max_degree is not None and G.max_degree is not None:
        if F.max_degree != G.max_degree:
            raise CutoffError(f"degree cutoffs differ: {F.max_degree} vs {G.max_degree}")
        md = F.max_degree
    return K, md


def bracket_monomials(m1: Monomial, m2: Monomial):
    """Terms (factor, monomial) of {m1, m2} for unit coefficients."""
    out = []
    nu = tuple(a + b for a, b in zip(m1.nu, m2.nu))
    base_i = tuple(a + b for a, b in zip(m1.i, m2.i))
    # angle-action part: sum_j dF/dy_j dG/dx_j - dF/dx_j dG/dy_j
    ab = None
    for j in range(len(nu)):
        f = m1.i[j] * m2.nu[j] - m1.nu[j] * m2.i[j]
        if f:
            if ab is None:
                ab = (_merge(m1.alpha, m2.alpha), _merge(m1.beta, m2.beta))
            i = list(base_i)
            i[j] -= 1
            out.append((1j * f, Monomial(nu, tuple(i), ab[0], ab[1])))
    # normal part: i sum_k dF/dzbar_k dG/dz_k - dF/dz_k dG/dzbar_k
    a1, b1 = dict(m1.alpha), dict(m1.beta)
    a2, b2 = dict(m2.alpha), dict(m2.beta)
    for k in (set(b1) & set(a2)) | (set(a1) & set(b2)):
        f = b1.get(k, 0) * a2.get(k, 0) - a1.get(k, 0) * b2.get(k, 0)
        if f:
            out.append(
                (1j * f, Monomial(nu, base_i, _merge(m1.alpha, m2.alpha, k), _merge(m1.beta, m2.beta, k)))
            )
    return out


def _index(G):
    # monomials of G grouped by the variables they contain, for skipping zero pairs
    by_z, by_zb, by_y, by_x = defaultdict(list), defaultdict(list), defaultdict(list), defaultdict(list)
    for m, v in G.c.items():
        for k, _ in m.alpha:
            by_z[k].append(m)
        for k, _ in m.beta:
            by_zb[k].append(m)
        for j, p in enumerate(m.i):
            if p:
                by_y[j].append(m)
        for j, a in enumerate(m.nu):
            if a:
                by_x[j].append(m)
    return by_z, by_zb, by_y, by_x


def poisson(F: TruncatedHamiltonian, G: TruncatedHamiltonian, K=None, max_degree=None) -> TruncatedHamiltonian:
    """{F, G} with {|z_k|^2, z_k} = i z_k and {y_j, e^{i nu x}} = i nu_j e^{i nu x}, re-truncated to the cutoffs."""
    if F.n != G.n:
        raise CutoffError("operands have different numbers of angles")
    K0, md0 = _cutoffs(F, G)
    K = K0 if K is None else K
    max_degree = md0 if max_degree is None else max_degree
    by_z, by_zb, by_y, by_x = _index(G)
    acc = defaultdict(complex)
    for m1, v1 in F.c.items():
        partners = set()
        for k, _ in m1.alpha:
            partners.update(by_zb.get(k, ()))
        for k, _ in m1.beta:
            partners.update(by_z.get(k, ()))
        for j, p in enumerate(m1.i):
            if p:
                partners.update(by_x.get(j, ()))
        for j, a in enumerate(m1.nu):
            if a:
                partners.update(by_y.get(j, ()))
        for m2 in partners:
            v2 = G.c[m2]
            for f, m in bracket_monomials(m1, m2):
                acc[m] += f * v1 * v2
    out = TruncatedHamiltonian(F.n, {m: v for m, v in acc.items() if v != 0}, K, max_degree)
    out.truncate()
    return out


def multiply(F: TruncatedHamiltonian, G: TruncatedHamiltonian) -> TruncatedHamiltonian:
    """Pointwise product of two Hamiltonians (no truncation)."""
    acc = defaultdict(complex)
    for m1, v1 in F.c.items():
        for m2, v2 in G.c.items():
            m = Monomial(
                tuple(a + b for a, b in zip(m1.nu, m2.nu)),
                tuple(a + b for a, b in zip(m1.i, m2.i)),
                _merge(m1.alpha, m2.alpha),
                _merge(m1.beta, m2.beta),
            )
            acc[m] += v1 * v2
    return TruncatedHamiltonian(F.n, {m: v for m, v in acc.items() if v != 0})


# conserved quantities and selection rules

@dataclass
class SiteCharges:
    """Mass and momentum charge of each normal variable z_k, plus its quadratic-energy weight.

    In original coordinates the charges are (1, k, |k|^2); after phase shifts they
    become (sigma, sigma r, sigma |r|^2) or (s, s r_t, s |r_t|^2).
    """

    mass: dict
    momentum: dict
    energy: dict = field(default_factory=dict)

    @classmethod
    def original(cls, sites):
        sites = list(sites)
        return cls(
            {k: 1 for k in sites}, {k: tuple(k) for k in sites}, {k: sum(c * c for c in k) for k in sites}
        )


def monomial_charges(m: Monomial, S, ch: SiteCharges):
    """(mass, momentum) charge of a monomial; both vanish iff it Poisson-commutes with L and M."""
    d = len(S[0])
    mass = sum(m.nu)
    mom = [sum(a * j[c] for a, j in zip(m.nu, S)) for c in range(d)]
    for sign, part in ((1, m.alpha), (-1, m.beta)):
        for k, p in part:
            mass += sign * p * ch.mass[k]
            for c in range(d):
                mom[c] += sign * p * ch.momentum[k][c]
    return mass, tuple(mom)


def conserves(m: Monomial, S, ch: SiteCharges) -> bool:
    mass, mom = monomial_charges(m, S, ch)
    return mass == 0 and not any(mom)


def conserved_quantities(S, ch: SiteCharges, n=None):
    """Return (L, M components, K) as Hamiltonians with integer coefficients."""
    n = len(S) if n is None else n
    d = len(S[0])
    zero = (0,) * n

    def e(j):
        v = [0] * n
        v[j] = 1
        return tuple(v)

    L = TruncatedHamiltonian(n)
    Ms = [TruncatedHamiltonian(n) for _ in range(d)]
    Kq = TruncatedHamiltonian(n)
    for j, site in enumerate(S):
        m = Monomial(zero, e(j), (), ())
        L.c[m] = 1
        for c in range(d):
            if site[c]:
                Ms[c].c[m] = site[c]
        if any(site):
            Kq.c[m] = sum(a * a for a in site)
    for k in ch.mass:
        m = Monomial(zero, zero, ((k, 1),), ((k, 1),))
        L.c[m] = ch.mass[k]
        for c in range(d):
            if ch.momentum[k][c]:
                Ms[c].c[m] = ch.momentum[k][c]
        if ch.energy.get(k, 0):
            Kq.c[m] = ch.energy[k]
    return L, Ms, Kq


# projections

@dataclass
class SitePartition:
    """Block membership and Lagrangian colour of every normal site (final coordinates)."""

    block_of: dict  # site -> block label
    s: dict  # site -> +1/-1

    def is_kernel(self, m: Monomial) -> bool:
        if any(m.nu):
            return False
        w = m.wdegree
        if w == 0:
            return sum(m.i) <= 1
        if w != 2 or any(m.i):
            return False
        charge = sum(p * self.s[k] for k, p in m.alpha) - sum(p * self.s[k] for k, p in m.beta)
        blocks = {self.block_of[k] for k in m.sites()}
        return charge == 0 and len(blocks) == 1


def project(H: TruncatedHamiltonian, selector: str, partition: SitePartition = None, K=None, j=None):
    """Keep the monomials picked by ``selector``.

    Degree selectors 'deg<=', 'deg=', 'deg>' compare against ``j``; frequency
    selectors 'freq<=', 'freq>' compare |nu|_1 against ``K``. 'kernel' and 'range'
    split the degree <= 2 part using ``partition``; 'range' drops degree > 2.
    """
    if selector in ("kernel", "range") and partition is None:
        raise ValueError(f"projection '{selector}' needs a site partition")
    if selector == "deg<=":
        keep = lambda m: m.degree <= j
    elif selector == "deg=":
        keep = lambda m: m.degree == j
    elif selector == "deg>":
        keep = lambda m: m.degree > j
    elif selector == "kernel":
        keep = lambda m: m.degree <= 2 and partition.is_kernel(m)
    elif selector == "range":
        keep = lambda m: m.degree <= 2 and not partition.is_kernel(m)
    elif selector == "freq<=":
        keep = lambda m: l1(m.nu) <= K
    elif selector == "freq>":
        keep = lambda m: l1(m.nu) > K
    else:
        raise ValueError(f"unknown selector {selector!r}")
    return H.like({m: v for m, v in H.c.items() if keep(m)})


# norms

def _site_weight(k, a: float, p: float) -> float:
    try:
        size = sum(abs(c) for c in k)
    except TypeError:
        return 1.0
    return math.exp(a * size) * max(1.0, size) ** p


def vector_field_norms(F: TruncatedHamiltonian, s: float, r: float, a: float = 0.0, p: float = 0.0) -> dict:
    """Weighted components of the majorant of X_F at the corner |y_i| = r^2, |z_k| = r / w_k.

    The normal components use the weighted l1 sum over sites, which bounds the
    weighted l2 norm from above. Returns the x, y, z, zbar parts already divided
    by their weights (s, r^2, r, r) and their sum as ``total``.
    """
    n = F.n
    xs = [0.0] * n
    ysum = 0.0
    zc = defaultdict(float)
    zbc = defaultdict(float)
    wcache = {}
    for m, v in F.c.items():
        c = abs(v) * math.exp(s * l1(m.nu))
        val = r ** (2 * sum(m.i))
        for k, pw in m.alpha + m.beta:
            if k not in wcache:
                wcache[k] = _site_weight(k, a, p)
            val *= (r / wcache[k]) ** pw
        cv = c * val
        for j, pw in enumerate(m.i):
            if pw:
                xs[j] += cv * pw / r**2
        ysum += cv * l1(m.nu)
        for k, pw in m.beta:
            zc[k] += cv * pw * wcache[k] / r  # d/dzbar_k drives z_k
        for k, pw in m.alpha:
            zbc[k] += cv * pw * wcache[k] / r
    xcomp = max(xs) if xs else 0.0
    zn = sum(wcache[k] * x for k, x in zc.items())
    zbn = sum(wcache[k] * x for k, x in zbc.items())
    out = {"x": float(xcomp / s), "y": float(ysum / r**2), "z": float(zn / r), "zbar": float(zbn / r)}
    out["total"] = out["x"] + out["y"] + out["z"] + out["zbar"]
    return out


def majorant_norm(F: TruncatedHamiltonian, s: float, r: float, a: float = 0.0, p: float = 0.0) -> float:
    return float(vector_field_norms(F, s, r, a, p)["total"])


def _multi_indices(n: int, ell: int):
    for total in range(ell + 1):
        for combo in combinations_with_replacement(range(n), total):
            k = [0] * n
            for i in combo:
                k[i] += 1
            yield tuple(k)


def lambda_norm(H, xi, lam: float, ell: int, s: float, r: float, a: float = 0.0, p: float = 0.0) -> float:
    """sum_{|k| <= ell} lam^|k| ||d_xi^k X||.

    ``H`` is either a TruncatedHamiltonian whose coefficients are HalfPoly (exact
    derivatives) or a callable xi -> TruncatedHamiltonian (centred differences
    with step lam/100).
    """
    xi = tuple(float(t) for t in xi)
    n = len(xi)
    total = 0.0
    if callable(H) and not isinstance(H, TruncatedHamiltonian):
        h = lam / 100.0
        for k in _multi_indices(n, ell):
            # nested centred differences: sum over sign patterns
            acc = None
            steps = [i for i, c in enumerate(k) for _ in range(c)]
            for signs in product((1, -1), repeat=len(steps)):
                x = list(xi)
                for i, sg in zip(steps, signs):
                    x[i] += sg * h
                w = math.prod(signs) / (2 * h) ** len(steps)
                term = H(tuple(x)) * w
                acc = term if acc is None else acc + term
            total += lam ** sum(k) * majorant_norm(acc, s, r, a, p)
        return total
    for k in _multi_indices(n, ell):
        coeffs = {}
        for m, poly in H.c.items():
            dp = poly
            for i, c in enumerate(k):
                for _ in range(c):
                    dp = dp.diff(i)
            val = dp.evaluate(xi)
            if val:
                coeffs[m] = val
        total += lam ** sum(k) * majorant_norm(TruncatedHamiltonian(H.n, coeffs), s, r, a, p)
    return total


# serialization

def to_jsonl(H: TruncatedHamiltonian) -> str:
    import json

    lines = []
    for m, v in sorted(H.c.items(), key=lambda kv: repr(kv[0])):
        v = complex(v)
        lines.append(
            json.dumps(
                {
                    "nu": list(m.nu),
                    "i": list(m.i),
                    "alpha": [[list(k) if isinstance(k, tuple) else k, p] for k, p in m.alpha],
                    "beta": [[list(k) if isinstance(k, tuple) else k, p] for k, p in m.beta],
                    "re": v.real,
                    "im": v.imag,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines)
