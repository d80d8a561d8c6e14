"""Resonance graph on a finite lattice box, its components and root data."""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .lattice import add, as_sites, enumerate_edges, l1, linear_maps, neg, sqnorm, sub


@dataclass
class GeometricGraph:
    S: tuple
    q: int
    box_radius: int
    black_edges: list  # (h, k, ell) with k = h + pi(ell)
    red_edges: list  # (h, k, ell) with h <= k lexicographically

    @property
    def d(self) -> int:
        return len(self.S[0])

    def vertices(self):
        R = self.box_radius
        return product(range(-R, R + 1), repeat=self.d)


@dataclass
class GeometricBlock:
    vertices: tuple
    black_edges: list = field(default_factory=list)
    red_edges: list = field(default_factory=list)
    root: tuple = None
    sigma: dict = field(default_factory=dict)
    L: dict = field(default_factory=dict)
    boundary_flag: bool = False
    problems: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.vertices)

    @property
    def has_red(self) -> bool:
        return bool(self.red_edges)


class NonGenericError(Exception):
    """The tangential sites violate a genericity requirement; carries witnesses."""

    def __init__(self, message, witnesses=None):
        super().__init__(message)
        self.witnesses = witnesses or []


def sphere_points(rho: int, d: int, lo=None, hi=None):
    """Integer points u in Z^d with |u|^2 == rho, optionally inside a coordinate box."""
    if rho < 0:
        return []
    lo = lo or [-math.isqrt(rho)] * d
    hi = hi or [math.isqrt(rho)] * d
    out = []

    def rec(prefix, rest):
        i = len(prefix)
        if i == d - 1:
            r = math.isqrt(rest)
            if r * r == rest:
                for a in {r, -r}:
                    if lo[i] <= a <= hi[i]:
                        out.append(tuple(prefix + [a]))
            return
        r = math.isqrt(rest)
        for a in range(max(-r, lo[i]), min(r, hi[i]) + 1):
            rec(prefix + [a], rest - a * a)

    rec([], rho)
    return sorted(out)


def build_graph(S, q: int, box_radius: int) -> GeometricGraph:
    """Enumerate all black and red edges of degree q with both endpoints in the box."""
    S = as_sites(S)
    n, d = len(S), len(S[0])
    R = box_radius
    if R < max(abs(c) for j in S for c in j):
        raise ValueError("box radius must contain all tangential sites")
    X0, Xm2 = enumerate_edges(q, n)
    grid = np.array(list(product(range(-R, R + 1), repeat=d)), dtype=np.int64)
    black = []
    for lab in X0:
        _, pi, pi2 = linear_maps(lab.ell, S)
        p = np.array(pi, dtype=np.int64)
        # |h + pi|^2 - |h|^2 = pi2 is linear in h
        ok = 2 * grid @ p + p @ p == pi2
        k = grid + p
        ok &= np.all(np.abs(k) <= R, axis=1)
        for h in grid[ok]:
            h = tuple(int(c) for c in h)
            black.append((h, add(h, pi), lab.ell))
    red = []
    for lab in Xm2:
        _, pi, pi2 = linear_maps(lab.ell, S)
        # |h|^2 + |h + pi|^2 = -pi2  <=>  |2h + pi|^2 = -2 pi2 - |pi|^2
        rho = -2 * pi2 - sqnorm(pi)
        lo = [c - 2 * R for c in pi]
        hi = [c + 2 * R for c in pi]
        seen = set()
        for u in sphere_points(rho, d, lo, hi):
            if any((a - c) % 2 for a, c in zip(u, pi)):
                continue
            h = tuple((a - c) // 2 for a, c in zip(u, pi))
            k = tuple(-c - a for a, c in zip(h, pi))
            if max(map(abs, h + k)) > R:
                continue
            pair = (min(h, k), max(h, k))
            if pair not in seen:
                seen.add(pair)
                red.append((pair[0], pair[1], lab.ell))
    black.sort()
    red.sort()
    return GeometricGraph(S, q, R, black, red)


def check_edge(edge, color, S) -> bool:
    """Exact momentum and energy identities for a stored edge."""
    h, k, ell = edge
    _, pi, pi2 = linear_maps(ell, S)
    if color == "black":
        return add(pi, h) == k and pi2 + sqnorm(h) - sqnorm(k) == 0
    return add(add(pi, h), k) == (0,) * len(h) and pi2 + sqnorm(h) + sqnorm(k) == 0


def root_data(block: GeometricBlock, S, q=None) -> GeometricBlock:
    """Fill root, colors and phase vectors by propagation along a spanning tree, then verify."""
    n = len(S)
    verts = sorted(block.vertices)
    root = verts[0]
    adj = defaultdict(list)
    for h, k, ell in block.black_edges:
        adj[h].append((k, "black", ell))
        adj[k].append((h, "black", neg(ell)))
    for h, k, ell in block.red_edges:
        adj[h].append((k, "red", ell))
        adj[k].append((h, "red", ell))
    sigma = {root: 1}
    L = {root: (0,) * n}
    queue = deque([root])
    while queue:
        h = queue.popleft()
        for k, color, ell in adj[h]:
            if k in sigma:
                continue
            if color == "black":
                sigma[k] = sigma[h]
                L[k] = sub(L[h], ell)
            else:
                sigma[k] = -sigma[h]
                L[k] = sub(ell, L[h])
            queue.append(k)
    block.root, block.sigma, block.L = root, sigma, L
    problems = []
    if set(sigma) != set(verts):
        problems.append(("disconnected", sorted(set(verts) - set(sigma))))
    r2 = sqnorm(root)
    for k in verts:
        if k not in L:
            continue
        _, pi, pi2 = linear_maps(L[k], S)
        s = sigma[k]
        if add(k, pi) != tuple(s * c for c in root) or sqnorm(k) + pi2 != s * r2 or 1 + sum(L[k]) != s:
            problems.append(("vertex-identity", k))
        if q is not None and l1(L[k]) > 4 * q * len(root):
            problems.append(("L-bound", k, L[k]))
    for h, k, ell in block.black_edges:
        if h in L and k in L and (sub(L[h], ell) != L[k] or sigma[h] != sigma[k]):
            problems.append(("path-dependence", (h, k, ell)))
    for h, k, ell in block.red_edges:
        if h in L and k in L and (sub(ell, L[h]) != L[k] or sigma[h] != -sigma[k]):
            problems.append(("path-dependence", (h, k, ell)))
    block.problems = problems
    return block


def shell_width(S, q: int) -> int:
    return 2 * q * max(max(abs(c) for c in j) for j in S)


def components(g: GeometricGraph):
    """Split the box into connected components; return (special, blocks, diagnostics).

    ``special`` is the component of the first tangential site. ``blocks`` holds the
    remaining components sorted by root. Diagnostics list genericity failures of the
    special component; they are data, not exceptions.
    """
    S = g.S
    R = g.box_radius
    parent = {}

    def find(v):
        while parent.get(v, v) != v:
            parent[v] = parent.get(parent[v], parent[v])
            v = parent[v]
        return v

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    for h, k, _ in g.black_edges:
        union(h, k)
    for h, k, _ in g.red_edges:
        union(h, k)
    groups = defaultdict(list)
    for v in g.vertices():
        groups[find(v)].append(v)
    bedges = defaultdict(list)
    redges = defaultdict(list)
    for e in g.black_edges:
        bedges[find(e[0])].append(e)
    for e in g.red_edges:
        redges[find(e[0])].append(e)
    width = shell_width(S, g.q)
    special = None
    blocks = []
    for rep, verts in groups.items():
        verts = tuple(sorted(verts))
        b = GeometricBlock(verts, bedges[rep], redges[rep])
        b.boundary_flag = any(max(abs(c) for c in v) > R - width for v in verts)
        root_data(b, S, g.q)
        if S[0] in verts:
            special = b
        else:
            blocks.append(b)
    blocks.sort(key=lambda b: b.root)
    diagnostics = []
    if set(special.vertices) != set(S):
        diagnostics.append(
            {"kind": "special-component", "expected": sorted(S), "found": list(special.vertices)}
        )
    return special, blocks, diagnostics


def affinely_independent(points) -> bool:
    if len(points) <= 1:
        return True
    base = np.array(points[0])
    M = np.array([np.array(p) - base for p in points[1:]], dtype=float)
    return np.linalg.matrix_rank(M) == len(points) - 1


def genericity_report(blocks, d: int, q=None) -> dict:
    """Check block size, affine independence and root-data consistency.

    A boundary block is a subset of its true component, so size and root-data
    violations found there are genuine. Affine dependence of a red-free boundary
    block is only listed as unconfirmed: the full component may carry a red edge.
    """
    failures = []
    unconfirmed = []
    red_blocks = 0
    for b in blocks:
        if b.has_red and not b.boundary_flag:
            red_blocks += 1
        if b.size > 2 * d + 1:
            failures.append({"kind": "size", "block": list(b.vertices), "size": b.size})
        if not b.has_red and not affinely_independent(b.vertices):
            entry = {"kind": "affine-dependence", "block": list(b.vertices)}
            (unconfirmed if b.boundary_flag else failures).append(entry)
        for p in b.problems:
            failures.append({"kind": p[0], "block": list(b.vertices), "witness": repr(p[1:])})
    return {"passed": not failures, "failures": failures, "unconfirmed": unconfirmed, "red_blocks": red_blocks}


def block_shape(b: GeometricBlock):
    """Translation-invariant signature of a block: offsets from the root and relative edges."""
    r = b.root
    offs = tuple(sorted(sub(v, r) for v in b.vertices))
    be = tuple(sorted((sub(h, r), sub(k, r), ell) for h, k, ell in b.black_edges))
    re_ = tuple(sorted((sub(h, r), sub(k, r), ell) for h, k, ell in b.red_edges))
    return offs, be, re_


def integer_row_basis(vectors):
    """Echelon basis of the subgroup of Z^d generated by integer vectors."""
    rows = [list(v) for v in vectors if any(v)]
    if not rows:
        return []
    d = len(rows[0])
    basis = []
    col = 0
    while rows and col < d:
        rows = [r for r in rows if any(r)]
        nz = [r for r in rows if r[col] != 0]
        if not nz:
            col += 1
            continue
        # Euclid on column col until a single row carries a nonzero entry there
        while len(nz) > 1:
            nz.sort(key=lambda r: abs(r[col]))
            piv = nz[0]
            for r in nz[1:]:
                f = r[col] // piv[col]
                for i in range(d):
                    r[i] -= f * piv[i]
            nz = [r for r in nz if r[col] != 0]
        piv = nz[0]
        if piv[col] < 0:
            piv[:] = [-c for c in piv]
        basis.append(tuple(piv))
        rows = [r for r in rows if r is not piv]
        col += 1
    return basis


def translation_classes(blocks, d: int) -> list:
    """Group interior red-free blocks into translation families with their translation lattice."""
    fams = defaultdict(list)
    for b in blocks:
        if b.boundary_flag or b.has_red:
            continue
        fams[block_shape(b)].append(b)
    out = []
    for shape, members in sorted(fams.items(), key=lambda kv: kv[1][0].root):
        rep = members[0]
        diffs = [sub(m.root, rep.root) for m in members[1:]]
        gens = integer_row_basis(diffs)
        expected = d - rep.size + 1
        entry = {
            "representative": rep.root,
            "offsets": list(shape[0]),
            "members": len(members),
            "generators": gens,
            "rank": len(gens),
            "expected_rank": expected,
            "flag": None,
        }
        if len(members) == 1:
            entry["flag"] = "single-member"
        elif len(gens) != expected:
            entry["flag"] = "rank-mismatch"
        out.append(entry)
    return out
