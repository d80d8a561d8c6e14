from collections import defaultdict

import numpy as np
import pytest

from conftest import build_pipeline
from resonant_nf.blocks import Branch, Catalog, combinatorialize, eigenvalue_catalog, sample_xi
from resonant_nf.final_graph import (
    assemble_normal_form,
    build_final_graph,
    check_alcf,
    conserved_in_final,
    finalize_partition,
    kernel_monomials,
    normal_form_to_json,
    phase_shift,
    phase_shift_monomial,
    shifted_frequency,
    translation_covariance,
    y_edges,
)
from resonant_nf.graph import GeometricBlock, block_shape, root_data
from resonant_nf.hamiltonian import Monomial, TruncatedHamiltonian, mono, poisson
from resonant_nf.lattice import sqnorm


def singleton_instance(S, roots, eps=0.3, seed=0):
    """1x1 blocks at the given roots; block i carries the branch -2 xi_i."""
    n = len(S)
    X = sample_xi(np.random.default_rng(seed), n, n + 4, eps)
    blocks = [root_data(GeometricBlock((r,)), S) for r in roots]
    branches = [Branch(i, (-2 * X[:, i]).astype(complex), True, [(i, 0)], complex(-2 * 4 * X[0, i])) for i in range(len(roots))]
    cat = Catalog([combinatorialize(b) for b in blocks], 1, branches, [[i] for i in range(len(roots))], X, 4.0)
    ye, _ = y_edges(cat)
    fg = build_final_graph(blocks, cat, ye, S)
    part = finalize_partition(fg, blocks, cat, S)
    return blocks, cat, ye, fg, part


def test_constructed_black_y_edge():
    S = ((0, 0), (1, 0))
    blocks, cat, ye, fg, part = singleton_instance(S, [(0, 5), (1, 5)])
    assert {(e.ell, e.color) for e in ye} >= {((-1, 1), "black"), ((1, -1), "black")}
    # the red Y-edge between the same branches has no root pair satisfying its equations
    assert len(fg.components) == 1 and len(fg.edges) == 2
    assert part.D[part.T[0]] == [(0, 5), (1, 5)]
    assert part.ell[(1, 5)] == (1, -1) and part.ell[(0, 5)] == (0, 0)
    assert part.s == {(0, 5): 1, (1, 5): 1}
    assert check_alcf(part, cat) == []
    m = mono((-1, 1), alpha=[(0, 5)], beta=[(1, 5)])
    assert kernel_monomials(part, cat, 2, [(0, 5), (1, 5)]).count(m) == 1
    assert shifted_frequency(m, part) == (0, 0)


def test_two_black_edges_compose_to_a_direct_edge():
    S = ((0, 0), (1, 0), (3, 0))
    blocks, cat, ye, fg, part = singleton_instance(S, [(0, 5), (1, 5), (3, 5)])
    root = ((0, 5), 0)
    far = ((3, 5), 2)
    assert fg.edges[(root, far)] == ((-1, 0, 1), "black")
    assert fg.edges[(((1, 5), 1), far)] == ((0, -1, 1), "black")
    assert part.ell[(3, 5)] == (1, 0, -1)
    assert check_alcf(part, cat) == []


def test_same_branch_and_mixed_branches_give_no_y_edge(cubic):
    assert cubic.ye == []
    ids = {b.bid for b in cubic.cat.branches}
    assert len(ids) == 3


def test_without_y_edges_partition_is_the_fitting_one(cubic):
    part = cubic.part
    assert len(part.T) == len(cubic.fg.vertices)
    assert all(v == (0, 0) for v in part.ell.values())
    assert part.T_f == set()
    for k, info in part.sites.items():
        assert part.s[k] == info.sigma == 1


def test_all_singletons():
    inst = build_pipeline(((1, 1),), box=4)
    part = inst.part
    assert all(len(part.D[t]) == 1 and part.D[t][0] == t.root for t in part.T)
    assert set(part.ell.values()) == {(0,)} and set(part.s.values()) == {1}


def test_red_instance_partition(red_instance):
    part = red_instance.part
    assert len(part.T_f) == 2
    assert [(e.ell, e.color) for e in red_instance.ye] == [((-1, -1), "red")]
    for t in part.T_f:
        (k,) = part.D[t]
        assert part.s[k] == part.sites[k].sigma
    assert check_alcf(part, red_instance.cat) == []


def test_constructed_red_final_edge_flips_colour():
    S = ((0, 0), (2, 0))
    blocks, cat, ye, fg, part = singleton_instance(S, [(1, -1), (1, 1)])
    assert fg.edges[(((1, -1), 0), ((1, 1), 1))] == ((-1, -1), "red")
    (t,) = part.T
    assert t in part.T_f and part.D[t] == [(1, -1), (1, 1)]
    assert part.ell[(1, 1)] == (-1, -1)
    assert part.s[(1, 1)] == -part.sites[(1, 1)].sigma == -1
    assert check_alcf(part, cat) == []
    m = mono((-1, -1), alpha=[(1, -1), (1, 1)])
    assert m in kernel_monomials(part, cat, 2, [(1, -1), (1, 1)])
    assert shifted_frequency(m, part) == (0, 0)


@pytest.mark.parametrize("which", ["cubic", "red_instance"])
def test_cover_disjoint_and_good_blocks_positive(which, request):
    inst = request.getfixturevalue(which)
    part = inst.part
    seen = defaultdict(int)
    for t in part.T:
        for k in part.D[t]:
            seen[k] += 1
    box = {v for b in inst.blocks for v in b.vertices}
    assert set(seen) == box and set(seen.values()) == {1}
    assert not set(inst.S) & set(seen)
    for t in part.T_g:
        assert all(part.s[k] == 1 for k in part.D[t])
    assert translation_covariance(part, inst.blocks) == []
    assert not [d for d in part.diagnostics if d["kind"] != "block-size"]


def test_good_blocks_scalar_and_family_branch(cubic):
    nf = cubic.nfs[0]
    part = cubic.part
    for t in part.T_g:
        expected = (sqnorm(t.root) + nf.theta[t]) * np.eye(len(part.D[t]))
        assert np.array_equal(nf.Omega[t], np.real_if_close(expected))
        assert t not in nf.nilpotent
    fam = defaultdict(set)
    for bi, b in enumerate(cubic.blocks):
        if not b.boundary_flag:
            fam[block_shape(b)].add(tuple(cubic.cat.labels[bi]))
    assert len(fam) == 2 and all(len(v) == 1 for v in fam.values())


@pytest.mark.parametrize("which", ["cubic", "red_instance"])
def test_energy_coefficients_after_shift(which, request):
    part = request.getfixturevalue(which).part
    _, _, Kq = conserved_in_final(part)
    n0 = (0,) * len(part.S)
    for t in part.T:
        for k in part.D[t]:
            m = Monomial(n0, n0, ((k, 1),), ((k, 1),))
            assert Kq.c.get(m, 0) == part.s[k] * sqnorm(t.root)


def test_phase_shift_examples():
    part = singleton_instance(((0, 0), (2, 0)), [(1, -1), (1, 1)])[4]
    n0 = (0, 0)
    k = next(k for k in part.sites if any(part.ell[k]))
    zz = Monomial(n0, n0, ((k, 1),), ((k, 1),))
    assert phase_shift_monomial(zz, part) == TruncatedHamiltonian(2, {zz: 1.0})
    y = Monomial(n0, (1, 0), (), ())
    shifted = phase_shift_monomial(y, part)
    for m, v in shifted.c.items():
        if m == y:
            assert v == 1
        else:
            (site, _), = m.alpha
            assert v == part.sites[site].sigma * part.ell[site][0]
    expected_terms = 1 + sum(1 for s in part.sites if part.ell[s][0])
    assert len(shifted.c) == expected_terms


@pytest.mark.parametrize("which", ["cubic", "red_instance"])
def test_kernel_basis_becomes_x_independent(which, request):
    inst = request.getfixturevalue(which)
    part = inst.part
    sites = [k for t in part.T if max(map(abs, t.root)) <= 3 for k in part.D[t]]
    ker = kernel_monomials(part, inst.cat, 4, sites)
    assert ker
    for m in ker:
        out = phase_shift_monomial(m, part)
        assert all(not any(mm.nu) for mm in out.c)


@pytest.mark.parametrize("which", ["cubic", "red_instance"])
def test_normal_form_commutes_with_conserved_quantities(which, request):
    inst = request.getfixturevalue(which)
    part = inst.part
    sites = [k for t in part.T if max(map(abs, t.root)) <= 3 for k in part.D[t]]
    Nf = inst.nfs[0].normal_form(sites)
    L, Ms, Kq = conserved_in_final(part, sites)
    for Q in [L, Kq] + Ms:
        assert poisson(Nf, Q).prune().c == {}


def test_assemble_normal_form_single_point(red_instance):
    nf = assemble_normal_form(red_instance.part, red_instance.cat, red_instance.blocks, red_instance.X[0])
    ref = red_instance.nfs[0]
    for t in nf.Omega:
        assert np.allclose(nf.Omega[t], ref.Omega[t], atol=1e-10)
    assert np.allclose(nf.omega, [0, 4] + (-2 * red_instance.X[0]))
    dump = normal_form_to_json(nf)
    assert len(dump["blocks"]) == len(red_instance.part.T)
    assert sum(1 for b in dump["blocks"] if b["bad"]) == 2


def test_catalog_samples_give_same_partition():
    S = ((0, 0), (2, 0))
    a = build_pipeline(S, seed=1)
    b = build_pipeline(S, seed=2)
    assert a.part.D == b.part.D and a.part.ell == b.part.ell and a.part.s == b.part.s
