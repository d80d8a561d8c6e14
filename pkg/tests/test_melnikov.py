import numpy as np
import pytest

from resonant_nf.final_graph import assemble_normal_form
from resonant_nf.hamiltonian import Monomial, TruncatedHamiltonian, poisson
from resonant_nf.melnikov import (
    BoundParams,
    ConservationError,
    GridTooCoarse,
    MelnikovBlockId,
    NormalFormStack,
    block_operator,
    enumerate_blocks,
    integer_part,
    invertibility_screen,
    kernel_verify,
    measure_M,
    resonant_scan,
    rho_of_tau,
    stacked_operator,
    sublevel_measure_check,
)
from resonant_nf.lattice import sqnorm
from test_final_graph import singleton_instance


def w_factor(part, k, sg):
    # sg = +1 picks w_k, -1 its conjugate; w_k is z_k when s(k) = +1
    return ("a" if part.s[k] * sg == 1 else "b", k)


def monomial(nu, factors):
    a, b = {}, {}
    for side, k in factors:
        d = a if side == "a" else b
        d[k] = d.get(k, 0) + 1
    n0 = (0,) * len(nu)
    return Monomial(tuple(nu), n0, tuple(sorted(a.items())), tuple(sorted(b.items())))


def bracket_operator(bid, part, N):
    """ad(N)/i on the monomial basis of one block, computed with the Poisson bracket."""
    if bid.kind == "linear":
        basis = [monomial(bid.nu, [w_factor(part, h, bid.sigma)]) for h in part.D[bid.t]]
    else:
        basis = [
            monomial(bid.nu, [w_factor(part, h, bid.sigma), w_factor(part, k, bid.sigma_prime)])
            for h in part.D[bid.t]
            for k in part.D[bid.t_prime]
        ]
    idx = {m: i for i, m in enumerate(basis)}
    B = np.zeros((len(basis), len(basis)), dtype=complex)
    for j, m in enumerate(basis):
        for mm, v in poisson(N, TruncatedHamiltonian(len(bid.nu), {m: 1})).c.items():
            B[idx[mm], j] += v / 1j
    return B


def test_kernel_block_is_zero(cubic):
    nf = cubic.nfs[0]
    t = cubic.part.T[0]
    bid = MelnikovBlockId((0, 0), t, t, 1, -1)
    assert bid.is_kernel()
    assert not block_operator(bid, nf).any()


def test_scalar_reduction_on_singletons(cubic):
    nf = cubic.nfs[0]
    part = cubic.part
    zero_branch = next(b.bid for b in cubic.cat.branches if not np.any(b.values))
    for bid in enumerate_blocks(part, 2, part.S, roots={(3, 3), (2, 3), (4, 3)}):
        if bid.kind != "quadratic" or bid.t.theta != zero_branch or bid.t_prime.theta != zero_branch:
            continue
        if len(part.D[bid.t]) != 1 or len(part.D[bid.t_prime]) != 1:
            continue
        op = block_operator(bid, nf)
        ss = bid.sigma_prime
        expected = nf.omega @ np.array(bid.nu) + sqnorm(bid.t.root) + ss * sqnorm(bid.t_prime.root)
        assert op.shape == (1, 1) and op[0, 0] == pytest.approx(expected, abs=1e-12)


def test_commutator_spectrum_is_pairwise_differences():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        op = np.kron(A, np.eye(3)) - np.kron(np.eye(3), A.T)
        lam = np.linalg.eigvals(A)
        diffs = np.sort_complex((lam[:, None] - lam[None, :]).ravel())
        got = np.sort_complex(np.linalg.eigvals(op))
        assert np.allclose(np.sort(got.real), np.sort(diffs.real), atol=1e-9)
        assert np.allclose(np.sort(np.abs(got)), np.sort(np.abs(diffs)), atol=1e-9)


def test_operator_matches_bracket_route():
    S = ((0, 0), (2, 0))
    blocks, cat, _, _, part = singleton_instance(S, [(1, -1), (1, 1)])
    nf = assemble_normal_form(part, cat, blocks, cat.xi_samples[0])
    (t,) = part.T
    nf.Omega[t] = nf.Omega[t] + np.random.default_rng(1).normal(size=(2, 2))
    N = nf.normal_form()
    for ss in (1, -1):
        bid = MelnikovBlockId((0, 0), t, t, 1, ss)
        if ss == 1:
            with pytest.raises(ConservationError):
                block_operator(bid, nf)
            continue
        A = block_operator(bid, nf)
        E = np.kron(np.eye(2), np.diag([part.s[k] for k in part.D[t]]))
        assert np.allclose(bracket_operator(bid, part, N), E @ A.T @ E, atol=1e-12)


def test_operator_matches_bracket_route_on_cubic(cubic):
    part = cubic.part
    nf = cubic.nfs[3]
    roots = {(0, 1), (1, 1), (0, 2), (2, 2)}
    sites = [k for t in part.T for k in part.D[t]]
    N = nf.normal_form(sites)
    checked = 0
    for bid in enumerate_blocks(part, 3, part.S, roots=roots):
        if bid.kind == "scalar":
            continue
        A = block_operator(bid, nf)
        B = bracket_operator(bid, part, N)
        assert np.allclose(np.linalg.svd(A, compute_uv=False), np.linalg.svd(B, compute_uv=False), atol=1e-10)
        checked += 1
    assert checked > 10


def test_stacked_operator_matches_pointwise(cubic):
    stack = NormalFormStack(cubic.nfs[:5])
    for bid in enumerate_blocks(cubic.part, 2, cubic.part.S, roots={(0, 1), (1, 2)})[:20]:
        ops = stacked_operator(bid, stack)
        for p, nf in enumerate(stack.nfs):
            assert np.allclose(ops[p], block_operator(bid, nf))


def test_conservation_enforced(cubic):
    t = cubic.part.T[0]
    with pytest.raises(ConservationError):
        block_operator(MelnikovBlockId((1, 0)), cubic.nfs[0])
    with pytest.raises(ConservationError):
        block_operator(MelnikovBlockId((1, 1), t, t, 1, 1), cubic.nfs[0])


def test_screen_examples(cubic):
    t = cubic.part.T[0]
    params = BoundParams(0.05, 1, 8, 2.0, 2, M=3.0)
    assert invertibility_screen(MelnikovBlockId((0, 0), t, t, 1, -1), params, cubic.part.S) == "singular"
    fake = MelnikovBlockId((1, -1), t, t, 1, -1)
    assert abs(integer_part(fake, cubic.part.S)) == 1
    S = ((0, 0), (1, 0), (2, 1))
    r7 = MelnikovBlockId((0, 0, 1), type(t)((1, 1), 0), type(t)((0, 0), 0), 1, -1)
    assert integer_part(r7, S) == 7
    assert invertibility_screen(r7, params, S) == "invertible_fast"
    small = BoundParams(0.05, 1, 8, 2.0, 2, M=3.0, a=1.0, S0=2)
    assert invertibility_screen(MelnikovBlockId((1, -1), t, t, 1, -1), small, S) == "invertible_fast"


def test_screen_is_sound(cubic):
    params = BoundParams(cubic.eps, 1, 6, 2.0, 2)
    params.M = measure_M(cubic.nfs, cubic.eps, 1)
    stack = NormalFormStack(cubic.nfs)
    fast = 0
    for bid in enumerate_blocks(cubic.part, 6, cubic.part.S, roots={(0, 1), (2, 3), (0, 0)}):
        if invertibility_screen(bid, params, cubic.part.S) != "invertible_fast":
            continue
        fast += 1
        ops = stacked_operator(bid, stack)
        smin = np.linalg.svd(ops, compute_uv=False)[:, -1]
        assert smin.min() > params.M * cubic.eps**2
    assert fast


def test_scalar_scan_clean_at_moderate_rho(cubic):
    rep = resonant_scan(4, [2.0], cubic.nfs, cubic.part, BoundParams(cubic.eps, 1, 4, 2.0, 2))
    scalars = [e for e in rep.per_class if e["t"] is None]
    assert scalars == []


def test_scan_monotone_in_rho_and_K(cubic):
    part = cubic.part
    small = resonant_scan(4, [0.5, 2, 4], cubic.nfs, part, BoundParams(cubic.eps, 1, 4, 4, 2))
    big = resonant_scan(6, [0.5, 2, 4], cubic.nfs, part, BoundParams(cubic.eps, 1, 6, 4, 2))
    assert small.monotone and big.monotone
    assert all(small.census[r] <= small.census_bound for r in small.rhos)
    # a larger K enumerates a superset of classes and a smaller threshold only per class
    assert big.classes_checked >= small.classes_checked


def test_grid_too_coarse(cubic):
    with pytest.raises(GridTooCoarse):
        resonant_scan(4, [2], cubic.nfs[:3], cubic.part, BoundParams(cubic.eps, 1, 4, 2, 2))


def test_kernel_verify_small(cubic):
    rep = kernel_verify(cubic.nfs[:20], cubic.part, 4, roots={(0, 0), (0, 1), (1, 1)}, eps=cubic.eps)
    assert rep["passed"] and rep["kernel_failures"] == [] and rep["blocks_tested"] > 0


def test_kernel_sign_flip_block_is_large(cubic):
    for t in cubic.part.T:
        if max(map(abs, t.root)) > 3 or not any(t.root):
            continue
        bid = MelnikovBlockId((0, 0), t, t, 1, 1)
        with pytest.raises(ConservationError):
            block_operator(bid, cubic.nfs[0])
        nf = cubic.nfs[0]
        op = np.kron(nf.Omega[t], np.eye(len(nf.Omega[t]))) + np.kron(np.eye(len(nf.Omega[t])), nf.Omega[t].T)
        assert np.min(np.abs(np.linalg.eigvals(op))) >= 2 * sqnorm(t.root) - 4 * measure_M(cubic.nfs, cubic.eps, 1) * cubic.eps**2


@pytest.mark.parametrize("alpha", [0.1, 0.01])
def test_sublevel_measure_canonical_functions(alpha):
    rng = np.random.default_rng(0)
    r = sublevel_measure_check(lambda X: X[:, 0], 1, 1.0, alpha, [(0, 1)], 20000, rng)
    assert r["passed"] and r["measure"] == pytest.approx(alpha, abs=4 * r["stderr"] + 1e-12)
    r = sublevel_measure_check(lambda X: X[:, 0] ** 2, 2, 1.0, alpha, [(-1, 1)], 20000, rng)
    assert r["passed"] and r["measure"] == pytest.approx(2 * alpha, abs=4 * r["stderr"] + 1e-12)
    r = sublevel_measure_check(lambda X: X[:, 0], 1, 1.0, alpha, [(0, 1), (0, 1)], 20000, rng)
    assert r["passed"] and r["bound"] == pytest.approx(2 * alpha)


def test_rho_of_tau():
    assert rho_of_tau(1.0, 2) == 0
    assert rho_of_tau(88.0, 2) == pytest.approx(87 / (3 * 29))


def test_operator_spectrum_is_eigenvalue_differences():
    S = ((0, 0), (2, 0))
    blocks, cat, _, _, part = singleton_instance(S, [(1, -1), (1, 1)])
    nf = assemble_normal_form(part, cat, blocks, cat.xi_samples[0])
    (t,) = part.T
    nf.Omega[t] = nf.Omega[t] + np.random.default_rng(2).normal(size=(2, 2))
    lam = np.linalg.eigvals(nf.Omega[t])
    for nu in [(0, 0), (1, -1), (2, 1)]:
        bid = MelnikovBlockId(nu, t, t, 1, -1)
        shift = nf.omega @ np.array(nu)
        expected = np.sort_complex((shift + lam[:, None] - lam[None, :]).ravel())
        got = np.sort_complex(np.linalg.eigvals(block_operator(bid, nf, check=False)))
        assert np.allclose(got, expected, atol=1e-9)
