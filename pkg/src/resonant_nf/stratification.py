"""Optimal presentations of lattice points, cuts at geometric scales and the induced stratification."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product

from .graph import block_shape
from .lattice import sub


class NoCutError(ValueError):
    """No scale level admits a cut; the parameters are misconfigured for this point."""


@dataclass(frozen=True)
class Presentation:
    vs: tuple  # d linearly independent vectors, |v|_1 <= N
    ps: tuple  # p_i = v_i . m
    N: int


@dataclass(frozen=True)
class CutResult:
    ell: int
    level: int


@dataclass
class Stratum:
    """Points of the box sharing the first ``codim`` equations of their presentation and the cut level.

    Attributes
    ----------
    key : tuple
        (level, codim, vs, ps) identifying the stratum.
    basepoint : tuple
        Lexicographically smallest member.
    generators : list
        Integer basis of the translations of the affine closure (rank d - codim).
    rho : Fraction
        Order parameter of the cut level.
    members : list
        Box points in the stratum.
    """

    key: tuple
    basepoint: tuple
    generators: list
    rho: Fraction
    members: list = field(default_factory=list)

    @property
    def level(self) -> int:
        return self.key[0]

    @property
    def codim(self) -> int:
        return self.key[1]


def _canonical(v) -> bool:
    for c in v:
        if c:
            return c > 0
    return False


@lru_cache(maxsize=None)
def candidates(d: int, N: int) -> tuple:
    """Sign-canonical nonzero v with |v|_1 <= N (first nonzero coordinate positive)."""
    out = []
    for v in product(range(-N, N + 1), repeat=d):
        if 1 <= sum(abs(c) for c in v) <= N and _canonical(v):
            out.append(v)
    return tuple(out)


def _rank(rows) -> int:
    rows = [[Fraction(c) for c in r] for r in rows]
    rank = 0
    ncol = len(rows[0]) if rows else 0
    for col in range(ncol):
        piv = next((i for i in range(rank, len(rows)) if rows[i][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i][col] != 0:
                f = rows[i][col] / rows[rank][col]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[rank])]
        rank += 1
    return rank


def presentation_key(v, p):
    return (abs(p), sum(abs(c) for c in v), tuple(-c for c in v))


def optimal_presentation(m, N: int, order=None) -> Presentation:
    """Greedy choice of d independent v minimising (|p|, |v|_1, reverse-lex v) with p = v.m.

    ``order`` may supply the candidate list in any order; the result does not depend on it.
    """
    m = tuple(m)
    d = len(m)
    if N < 1:
        raise ValueError("N must be at least 1")
    cands = candidates(d, N) if order is None else tuple(order)
    scored = sorted(((presentation_key(v, sum(a * b for a, b in zip(v, m))), v) for v in cands))
    chosen = []
    for _, v in scored:
        if _rank(chosen + [v]) == len(chosen) + 1:
            chosen.append(v)
            if len(chosen) == d:
                break
    if len(chosen) < d:
        raise ValueError("candidates do not span Z^d")
    ps = tuple(sum(a * b for a, b in zip(v, m)) for v in chosen)
    return Presentation(tuple(chosen), ps, N)


def rho_levels(rho0, d: int) -> list:
    """rho_j = (4d)^j rho0 for j = 0..d+2 as exact fractions."""
    r0 = Fraction(str(rho0)) if not isinstance(rho0, Fraction) else rho0
    return [r0 * (4 * d) ** j for j in range(d + 3)]


def _lt_power(x: int, N: int, rho: Fraction) -> bool:
    """x < N^rho for integer x >= 0, exactly."""
    return x**rho.denominator < N**rho.numerator


def _ge_4power(x: int, N: int, rho: Fraction) -> bool:
    """x >= 4 N^rho, exactly."""
    return x**rho.denominator >= 4**rho.denominator * N**rho.numerator


def find_cut(pres: Presentation, N: int, rho0) -> CutResult:
    """Smallest level j in 1..d+1 with some ell where 2|p_ell| < N^rho_j and |p_ell+1| >= 4 N^rho_(j+1)."""
    d = len(pres.ps)
    rhos = rho_levels(rho0, d)
    ap = [abs(p) for p in pres.ps]
    for j in range(1, d + 2):
        for ell in range(d + 1):
            low = ell == 0 or _lt_power(2 * ap[ell - 1], N, rhos[j])
            high = ell == d or _ge_4power(ap[ell], N, rhos[j + 1])
            if low and high:
                return CutResult(ell, j)
    raise NoCutError(f"no cut for presentation {pres}")


def integer_kernel(rows, d: int) -> list:
    """Integer basis of {x in Z^d : r.x = 0 for all rows}, by unimodular column operations."""
    A = [list(r) for r in rows]
    U = [[int(i == j) for j in range(d)] for i in range(d)]  # columns are the transform
    col0 = 0
    for r in range(len(A)):
        # make A[r][col0:] have a single nonzero at col0 (Euclid on columns)
        while True:
            nz = [c for c in range(col0, d) if A[r][c] != 0]
            if len(nz) <= 1:
                break
            piv = min(nz, key=lambda c: abs(A[r][c]))
            for c in nz:
                if c == piv:
                    continue
                f = A[r][c] // A[r][piv]
                for i in range(len(A)):
                    A[i][c] -= f * A[i][piv]
                for i in range(d):
                    U[i][c] -= f * U[i][piv]
        nz = [c for c in range(col0, d) if A[r][c] != 0]
        if not nz:
            continue
        c = nz[0]
        for M in (A, U):
            for row in M:
                row[c], row[col0] = row[col0], row[c]
        col0 += 1
    return [tuple(U[i][c] for i in range(d)) for c in range(col0, d)]


def stratum_key(m, N: int, rho0):
    pres = optimal_presentation(m, N)
    cut = find_cut(pres, N, rho0)
    return (cut.level, cut.ell, pres.vs[: cut.ell], pres.ps[: cut.ell]), pres, cut


def stratify(box_radius: int, d: int, N: int, rho0) -> tuple:
    """Assign every point of the box to its stratum.

    Returns (strata sorted by key, counts per (codim, level), diagnostics). Each
    stratum is checked to lie on its affine closure.
    """
    rhos = rho_levels(rho0, d)
    groups = {}
    diagnostics = []
    for m in product(range(-box_radius, box_radius + 1), repeat=d):
        try:
            key, pres, cut = stratum_key(m, N, rho0)
        except NoCutError as exc:
            diagnostics.append({"kind": "no-cut", "point": m, "message": str(exc)})
            continue
        groups.setdefault(key, []).append(m)
    strata = []
    for key, members in sorted(groups.items()):
        level, ell, vs, ps = key
        for m in members:
            if any(sum(a * b for a, b in zip(v, m)) != p for v, p in zip(vs, ps)):
                diagnostics.append({"kind": "off-closure", "point": m})
        gens = integer_kernel(vs, d) if ell else [tuple(int(i == j) for j in range(d)) for i in range(d)]
        strata.append(Stratum(key, min(members), gens, rhos[level], sorted(members)))
    counts = defaultdict(int)
    for s in strata:
        counts[(s.codim, s.level)] += 1
    return strata, dict(counts), diagnostics


def count_check(strata, d: int, N: int, rho0) -> dict:
    """Per-level stratum counts against N^((2d-1) rho_j), compared exactly."""
    rhos = rho_levels(rho0, d)
    per_level = defaultdict(int)
    for s in strata:
        per_level[s.level] += 1
    out = {}
    for j, c in sorted(per_level.items()):
        e = (2 * d - 1) * rhos[j]
        ok = c**e.denominator < N**e.numerator
        out[j] = {"count": c, "bound_exponent": str(e), "passed": ok}
    return out


def refinement_check(blocks, strata) -> list:
    """Translation families of red-free interior blocks that are not unions of strata on the box."""
    where = {}
    for i, s in enumerate(strata):
        for m in s.members:
            where[m] = i
    fams = defaultdict(set)
    for b in blocks:
        if b.boundary_flag or b.has_red:
            continue
        fams[block_shape(b)].add(b.root)
    bad = []
    for shape, roots in sorted(fams.items(), key=lambda kv: min(kv[1])):
        touched = {where[r] for r in roots if r in where}
        covered = set()
        for i in touched:
            covered.update(strata[i].members)
        extra = sorted(covered - roots)
        if extra:
            bad.append({"family_root": min(roots), "members": len(roots), "extra_points": len(extra)})
    return bad


def strata_to_json(strata) -> list:
    return [
        {
            "level": s.level,
            "codim": s.codim,
            "rho": str(s.rho),
            "equations": [[list(v), p] for v, p in zip(s.key[2], s.key[3])],
            "basepoint": list(s.basepoint),
            "generators": [list(g) for g in s.generators],
            "members": len(s.members),
        }
        for s in strata
    ]


def translate(points, u):
    return sorted(sub(p, tuple(-c for c in u)) for p in points)
