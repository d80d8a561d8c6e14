"""Integer lattice primitives.

Tangential sites are stored as tuples of integer tuples. Edge labels are
integer n-tuples whose mass (coordinate sum) is 0 (black) or -2 (red).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

BLACK = "black"
RED = "red"


def as_sites(S) -> tuple[tuple[int, ...], ...]:
    """Normalize a list of sites into a tuple of integer tuples and validate it."""
    sites = tuple(tuple(int(c) for c in j) for j in S)
    if not sites:
        raise ValueError("at least one tangential site is required")
    d = len(sites[0])
    if d < 1 or any(len(j) != d for j in sites):
        raise ValueError("all sites must share the same dimension d >= 1")
    if len(set(sites)) != len(sites):
        raise ValueError("tangential sites must be pairwise distinct")
    return sites


def sqnorm(v) -> int:
    return sum(c * c for c in v)


def add(u, v) -> tuple[int, ...]:
    return tuple(a + b for a, b in zip(u, v))


def sub(u, v) -> tuple[int, ...]:
    return tuple(a - b for a, b in zip(u, v))


def neg(u) -> tuple[int, ...]:
    return tuple(-a for a in u)


def l1(v) -> int:
    return sum(abs(c) for c in v)


def linear_maps(ell, S):
    """Return (eta, pi, pi2) of an integer n-vector against the sites S."""
    if len(ell) != len(S):
        raise ValueError(f"label has length {len(ell)} but there are {len(S)} sites")
    d = len(S[0])
    eta = sum(ell)
    pi = tuple(sum(l * j[a] for l, j in zip(ell, S)) for a in range(d))
    pi2 = sum(l * sqnorm(j) for l, j in zip(ell, S))
    return eta, pi, pi2


@dataclass(frozen=True, order=True)
class EdgeLabel:
    ell: tuple[int, ...]

    def __post_init__(self):
        eta = sum(self.ell)
        if eta not in (0, -2):
            raise ValueError(f"edge label mass must be 0 or -2, got {eta}")
        if not any(self.ell):
            raise ValueError("edge label must be nonzero")
        if eta == -2 and sorted(self.ell)[0] == -2 and sum(map(abs, self.ell)) == 2:
            raise ValueError("labels of the form -2 e_i are excluded")

    @property
    def eta(self) -> int:
        return sum(self.ell)

    @property
    def color(self) -> str:
        return BLACK if self.eta == 0 else RED


@lru_cache(maxsize=None)
def _signed_sums(q: int, n: int) -> frozenset:
    # reachable vectors after m signed unit steps, built up one step at a time
    layer = {(0,) * n}
    for _ in range(2 * q):
        nxt = set()
        for v in layer:
            for i in range(n):
                for s in (1, -1):
                    w = list(v)
                    w[i] += s
                    nxt.add(tuple(w))
        layer = nxt
    return frozenset(layer)


def enumerate_edges(q: int, n: int):
    """Return the sorted black and red edge label lists for degree q on n sites."""
    if q < 1 or n < 1:
        raise ValueError("q and n must be positive")
    X0, Xm2 = [], []
    excluded = set()
    for i in range(n):
        e = [0] * n
        e[i] = -2
        excluded.add(tuple(e))
    for v in _signed_sums(q, n):
        eta = sum(v)
        if not any(v) or v in excluded:
            continue
        if eta == 0:
            X0.append(EdgeLabel(v))
        elif eta == -2:
            Xm2.append(EdgeLabel(v))
    return sorted(X0), sorted(Xm2)


def quadratic_energy(ell, S) -> int:
    """Integer energy ((1 + eta)/2)(|pi|^2 + pi2) attached to an edge label."""
    ell = ell.ell if isinstance(ell, EdgeLabel) else tuple(ell)
    eta, pi, pi2 = linear_maps(ell, S)
    inner = sqnorm(pi) + pi2
    if inner % 2:
        raise ArithmeticError(f"odd energy numerator {inner} for label {ell}")
    return (1 + eta) * inner // 2
