import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_graph
from resonant_nf.graph import (
    GeometricBlock,
    affinely_independent,
    build_graph,
    components,
    genericity_report,
    root_data,
    translation_classes,
)
from resonant_nf.lattice import linear_maps, sqnorm

CUBIC = ((0, 0), (1, 0))
RED = ((0, 0), (2, 0))


def vertex_identities_hold(b, S):
    r = b.root
    for k in b.vertices:
        ell, s = b.L[k], b.sigma[k]
        eta, pi, pi2 = linear_maps(ell, S)
        if tuple(a + c for a, c in zip(k, pi)) != tuple(s * c for c in r):
            return False
        if sqnorm(k) + pi2 != s * sqnorm(r) or eta != s - 1:
            return False
    return True


def test_cubic_black_edges_match_derivation():
    g = build_graph(CUBIC, 1, 10)
    expected = {((1, y), (0, y), (1, -1)) for y in range(-10, 11)}
    expected |= {((0, y), (1, y), (-1, 1)) for y in range(-10, 11)}
    assert set(g.black_edges) == expected
    assert g.red_edges == [((0, 0), (1, 0), (-1, -1))]


def test_red_pairs_on_circle():
    g = build_graph(RED, 1, 6)
    pairs = {(h, k) for h, k, ell in g.red_edges if ell == (-1, -1)}
    assert pairs == {((0, 0), (2, 0)), ((1, -1), (1, 1))}


def test_single_site_has_no_edges():
    g = build_graph(((1, 2),), 2, 4)
    assert g.black_edges == [] and g.red_edges == []
    special, blocks, diag = components(g)
    assert all(b.size == 1 for b in blocks) and not diag


@pytest.mark.parametrize("S,q,R", [(CUBIC, 1, 6), (RED, 1, 6), (((0, 0), (1, 2), (-1, 1)), 1, 5), (((0, 0), (1, 1)), 2, 4)])
def test_graph_matches_brute_force(S, q, R):
    g = build_graph(S, q, R)
    black, red = brute_graph(S, q, R)
    assert set(g.black_edges) == black
    assert set(g.red_edges) == red


def test_cubic_components():
    special, blocks, diag = components(build_graph(CUBIC, 1, 10))
    assert set(special.vertices) == set(CUBIC) and not diag
    pairs = [b for b in blocks if b.size > 1]
    assert {b.vertices for b in pairs} == {((0, y), (1, y)) for y in range(-10, 11) if y}
    assert all(b.size == 1 for b in blocks if b.size != 2)


def test_red_component_found():
    _, blocks, _ = components(build_graph(RED, 1, 8))
    reds = [b for b in blocks if b.has_red]
    assert [b.vertices for b in reds] == [((1, -1), (1, 1))]


def test_genericity_examples():
    _, blocks, _ = components(build_graph(CUBIC, 1, 8))
    assert genericity_report(blocks, 2, 1)["passed"]
    singles = [GeometricBlock(((3, 3),), root=(3, 3), sigma={(3, 3): 1}, L={(3, 3): (0, 0)})]
    assert genericity_report(singles, 2)["passed"]
    line = GeometricBlock(((0, 0), (1, 0), (2, 0)), black_edges=[((0, 0), (1, 0), (1, -1))])
    rep = genericity_report([line], 2)
    assert not rep["passed"] and rep["failures"][0]["kind"] == "affine-dependence"


def test_affine_independence():
    assert affinely_independent([(0, 0), (1, 0), (0, 1)])
    assert not affinely_independent([(0, 0), (1, 1), (2, 2)])
    assert affinely_independent([(5, 5)])


def test_root_data_black_pair():
    b = root_data(GeometricBlock(((0, 5), (1, 5)), black_edges=[((1, 5), (0, 5), (1, -1))]), CUBIC)
    assert b.root == (0, 5)
    assert b.sigma == {(0, 5): 1, (1, 5): 1}
    assert b.L[(1, 5)] == (1, -1) and not b.problems


def test_root_data_red_pair():
    b = root_data(GeometricBlock(((1, -1), (1, 1)), red_edges=[((1, -1), (1, 1), (-1, -1))]), RED)
    assert b.root == (1, -1) and b.sigma[(1, 1)] == -1
    assert b.L[(1, 1)] == (-1, -1)
    assert sqnorm((1, 1)) + linear_maps(b.L[(1, 1)], RED)[2] == -sqnorm(b.root)


def test_root_data_singleton():
    b = root_data(GeometricBlock(((2, -3),)), CUBIC)
    assert (b.root, b.sigma, b.L) == ((2, -3), {(2, -3): 1}, {(2, -3): (0, 0)})


def test_vertex_identities_on_examples():
    for S in (CUBIC, RED, ((0, 0), (1, 2), (-2, 1))):
        _, blocks, _ = components(build_graph(S, 1, 10))
        assert all(vertex_identities_hold(b, S) for b in blocks)


def test_translation_classes_cubic():
    _, blocks, _ = components(build_graph(CUBIC, 1, 10))
    fams = translation_classes(blocks, 2)
    pair = [f for f in fams if len(f["offsets"]) == 2]
    assert len(pair) == 1 and pair[0]["generators"] == [(0, 1)] and pair[0]["rank"] == 1
    single = [f for f in fams if len(f["offsets"]) == 1]
    assert single[0]["rank"] == 2 == single[0]["expected_rank"]


def test_single_member_family_flagged():
    b = root_data(GeometricBlock(((0, 5), (1, 5)), black_edges=[((1, 5), (0, 5), (1, -1))]), CUBIC)
    fams = translation_classes([b], 2)
    assert fams[0]["generators"] == [] and fams[0]["flag"] == "single-member"


def test_roots_translate_within_families():
    _, blocks, _ = components(build_graph(CUBIC, 1, 10))
    for b in blocks:
        if b.size == 2:
            assert b.root == min(b.vertices)
            shifted = tuple((x, y + 1) for x, y in b.vertices)
            c = root_data(GeometricBlock(shifted, black_edges=[((1, b.root[1] + 1), (0, b.root[1] + 1), (1, -1))]), CUBIC)
            assert c.root == (b.root[0], b.root[1] + 1)


@pytest.mark.parametrize("S", [CUBIC, ((0, 0), (1, 2), (-1, 1))])
def test_interior_components_stable_under_box_growth(S):
    def interior(R):
        _, blocks, _ = components(build_graph(S, 1, R))
        return {b.vertices for b in blocks if not b.boundary_flag}

    small, big = interior(7), interior(10)
    inside = {v for v in small if max(abs(c) for p in v for c in p) <= 7}
    assert small <= big and inside == small


def test_random_sites_identities_and_no_crash():
    rng = random.Random(11)
    for _ in range(20):
        n = rng.choice((3, 4))
        q = rng.choice((1, 2))
        S = tuple(rng.sample([(x, y) for x in range(-3, 4) for y in range(-3, 4)], n))
        _, blocks, diag = components(build_graph(S, q, 9))
        rep = genericity_report(blocks, 2, q)
        assert isinstance(rep["passed"], bool)
        for b in blocks:
            if not any(p[0] == "path-dependence" for p in b.problems):
                assert vertex_identities_hold(b, S)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=2, max_size=3, unique=True))
def test_every_stored_edge_is_exact(S):
    S = tuple(S)
    g = build_graph(S, 1, 5)
    black, red = brute_graph(S, 1, 5)
    assert set(g.black_edges) == black and set(g.red_edges) == red


def test_boundary_blocks_still_report_genuine_violations():
    S = ((-3, 2), (0, 0), (3, 2))
    quad = ((-6, 9), (-3, 11), (3, 11), (6, 9))
    _, small, _ = components(build_graph(S, 1, 15))
    b = next(b for b in small if b.vertices == quad)
    assert b.boundary_flag
    rep = genericity_report(small, 2, 1)
    assert list(quad) in [f["block"] for f in rep["unconfirmed"]]
    # once the block is interior the dependence becomes a failure
    _, big, _ = components(build_graph(S, 1, 25))
    rep = genericity_report(big, 2, 1)
    assert not rep["passed"]
    assert list(quad) in [f["block"] for f in rep["failures"] if f["kind"] == "affine-dependence"]


def test_oversized_boundary_block_fails():
    big = GeometricBlock(tuple((i, 0) for i in range(6)), boundary_flag=True)
    rep = genericity_report([big], 2)
    assert not rep["passed"] and rep["failures"][0]["kind"] == "size"
