import itertools
from types import SimpleNamespace

import numpy as np

import pytest


def brute_edges(q, n):
    """All signed sums of 2q unit vectors, split by mass, with the excluded labels removed."""
    units = [tuple(s * (i == j) for j in range(n)) for i in range(n) for s in (1, -1)]
    seen = set()
    for combo in itertools.product(units, repeat=2 * q):
        seen.add(tuple(map(sum, zip(*combo))))
    bad = {tuple(-2 * (i == j) for j in range(n)) for i in range(n)}
    X0 = {v for v in seen if any(v) and sum(v) == 0}
    Xm2 = {v for v in seen if sum(v) == -2 and v not in bad}
    return X0, Xm2


def brute_graph(S, q, R):
    """Black and red edges by checking every pair of box points against every label."""
    X0, Xm2 = brute_edges(q, len(S))
    d = len(S[0])
    pts = list(itertools.product(range(-R, R + 1), repeat=d))
    black, red = set(), set()
    for ell in X0:
        pi = tuple(sum(l * j[a] for l, j in zip(ell, S)) for a in range(d))
        pi2 = sum(l * sum(c * c for c in j) for l, j in zip(ell, S))
        for h in pts:
            k = tuple(a + b for a, b in zip(h, pi))
            if max(map(abs, k)) <= R and pi2 + sum(c * c for c in h) - sum(c * c for c in k) == 0:
                black.add((h, k, ell))
    for ell in Xm2:
        pi = tuple(sum(l * j[a] for l, j in zip(ell, S)) for a in range(d))
        pi2 = sum(l * sum(c * c for c in j) for l, j in zip(ell, S))
        for h in pts:
            k = tuple(-a - b for a, b in zip(h, pi))
            if max(map(abs, k)) <= R and pi2 + sum(c * c for c in h) + sum(c * c for c in k) == 0:
                red.add((min(h, k), max(h, k), ell))
    return black, red


def build_pipeline(S, q=1, box=8, eps=0.3, seed=0, points=0):
    """Graph, catalog, final partition and (optionally) normal forms at random points."""
    from resonant_nf.blocks import combinatorialize, eigenvalue_catalog, sample_xi
    from resonant_nf.final_graph import assemble_normal_forms, build_final_graph, finalize_partition, y_edges
    from resonant_nf.graph import build_graph, components

    n = len(S)
    g = build_graph(S, q, box)
    special, blocks, diag = components(g)
    cbs = [combinatorialize(b) for b in blocks]
    rng = np.random.default_rng(seed)
    cat = eigenvalue_catalog(cbs, q, sample_xi(rng, n, n + 4, eps))
    ye, ydiag = y_edges(cat)
    fg = build_final_graph(blocks, cat, ye, S)
    part = finalize_partition(fg, blocks, cat, S)
    X = sample_xi(rng, n, points, eps) if points else None
    nfs = assemble_normal_forms(part, cat, blocks, X) if points else []
    return SimpleNamespace(
        S=S, q=q, eps=eps, g=g, special=special, blocks=blocks, diag=diag, cbs=cbs,
        cat=cat, ye=ye, fg=fg, part=part, X=X, nfs=nfs,
    )


@pytest.fixture(scope="session")
def cubic():
    return build_pipeline(((0, 0), (1, 0)), points=100)


@pytest.fixture(scope="session")
def red_instance():
    return build_pipeline(((0, 0), (2, 0)), points=20)
