"""NLS Hamiltonians, the homological equation and the iterated KAM step on truncated Hamiltonians."""

from __future__ import annotations

import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .halfpoly import compositions, multinomial
from .hamiltonian import (
    Monomial,
    SiteCharges,
    TruncatedHamiltonian,
    bracket_monomials,
    conserves,
    l1,
    majorant_norm,
    mono,
    poisson,
    project,
)
from .lattice import as_sites, linear_maps, sqnorm


class ResonanceError(ArithmeticError):
    """A block of ad(N) is singular on the frequency-truncated range."""


class LieSeriesError(RuntimeError):
    """The Lie series did not reach the stopping tolerance within the order cap."""


# NLS Hamiltonian

def box_sites(R: int, d: int) -> list:
    return list(product(range(-R, R + 1), repeat=d))


def _multisets(sites, size):
    for combo in combinations_with_replacement(range(len(sites)), size):
        d = defaultdict(int)
        for i in combo:
            d[sites[i]] += 1
        yield tuple(sorted(d.items()))


def build_nls(q: int, S, box: int):
    """Truncated NLS Hamiltonian in complex coordinates u_k on the box, with its Birkhoff data.

    Returns (H, H_Birk, F_Birk). H is the quadratic energy plus the degree-(2q+2)
    term with multinomial weights under momentum conservation. H_Birk keeps the
    resonant part (sum (alpha - beta)|k|^2 = 0) with at most two normal variables,
    and F_Birk = sum c / (i D) over the remaining monomials with at most two normal variables.
    """
    S = as_sites(S) if S else ()
    d = len(S[0]) if S else None
    sites = box_sites(box, d if d is not None else 1) if d is not None else None
    if sites is None:
        raise ValueError("S must be non-empty to fix the dimension")
    tang = set(S)
    zero = ()
    H = TruncatedHamiltonian(0)
    for k in sites:
        if any(k):
            H.c[Monomial(zero, zero, ((k, 1),), ((k, 1),))] = sqnorm(k)
    # momentum-conserving (alpha, beta) with |alpha| = |beta| = q+1
    by_mom = defaultdict(list)
    for a in _multisets(sites, q + 1):
        mom = tuple(sum(p * k[c] for k, p in a) for c in range(d))
        by_mom[mom].append(a)
    Hb = TruncatedHamiltonian(0)
    Fb = TruncatedHamiltonian(0)
    for group in by_mom.values():
        for a in group:
            wa = multinomial(q + 1, [p for _, p in a])
            for b in group:
                c = wa * multinomial(q + 1, [p for _, p in b])
                m = Monomial(zero, zero, a, b)
                H.c[m] = H.c.get(m, 0) + c
                normal = sum(p for k, p in a if k not in tang) + sum(p for k, p in b if k not in tang)
                if tang and normal > 2:
                    continue
                D = sum(p * sqnorm(k) for k, p in a) - sum(p * sqnorm(k) for k, p in b)
                if D == 0:
                    Hb.c[m] = c
                else:
                    Fb.c[m] = c / (1j * D)
    return H, Hb, Fb


def _binom(p: float, m: int) -> float:
    out = 1.0
    for i in range(m):
        out *= (p - i) / (i + 1)
    return out


def to_action_angle(H: TruncatedHamiltonian, S, xi, y_order: int) -> TruncatedHamiltonian:
    """Substitute u_{j_i} = sqrt(xi_i + y_i) e^{i x_i} on tangential sites, with the root expanded to y^y_order."""
    S = as_sites(S)
    n = len(S)
    index = {j: i for i, j in enumerate(S)}
    xi = [float(v) for v in xi]
    if min(xi) <= 0:
        raise ValueError("xi must be positive")
    out = TruncatedHamiltonian(n)
    zero = (0,) * n
    for m, c in H.c.items():
        nu = [0] * n
        powers = [0] * n
        alpha, beta = [], []
        for k, p in m.alpha:
            if k in index:
                nu[index[k]] += p
                powers[index[k]] += p
            else:
                alpha.append((k, p))
        for k, p in m.beta:
            if k in index:
                nu[index[k]] -= p
                powers[index[k]] += p
            else:
                beta.append((k, p))
        # product over tangential sites of (xi + y)^(power/2)
        series = [{(): 1.0}]
        terms = {zero: complex(c)}
        for i, pw in enumerate(powers):
            if not pw:
                continue
            half = pw / 2
            exact = pw % 2 == 0
            top = min(y_order, pw // 2) if exact else y_order
            new = defaultdict(complex)
            for iv, v in terms.items():
                for mm in range(top + 1):
                    coef = _binom(half, mm) * xi[i] ** (half - mm)
                    jv = list(iv)
                    jv[i] += mm
                    new[tuple(jv)] += v * coef
            terms = new
        for iv, v in terms.items():
            if v != 0:
                key = Monomial(tuple(nu), iv, tuple(alpha), tuple(beta))
                out.c[key] = out.c.get(key, 0) + v
    return out.prune()


# toy instance in final coordinates

@dataclass
class ToyInstance:
    """Normal form plus a small conserving perturbation on a few sites near the origin.

    Attributes
    ----------
    N : TruncatedHamiltonian
        omega.y + sum Omega_t |w_k|^2 at the chosen parameter value.
    P : TruncatedHamiltonian
        Real perturbation of degree <= 3 with |nu|_1 <= K0.
    partition : SitePartition
        Block labels and colours of the active sites.
    charges : SiteCharges
        Mass/momentum/energy charges of the active sites in final coordinates.
    """

    S: tuple
    xi: tuple
    sites: list
    N: TruncatedHamiltonian
    P: TruncatedHamiltonian
    partition: object
    charges: SiteCharges
    nf: object = None

    @property
    def H(self) -> TruncatedHamiltonian:
        return self.N + self.P


def frequency_table(S, K: int) -> dict:
    """(eta, pi) -> nu with |nu|_1 <= K; raises if two frequencies share charges."""
    from .melnikov import frequencies

    table = {}
    for nu in frequencies(len(S), K):
        eta, pi, _ = linear_maps(nu, S)
        key = (eta, pi)
        if key in table:
            raise ValueError("frequencies are not determined by their charges; use n = d + 1 style instances")
        table[key] = nu
    return table


def conserving_monomials(sites, S, ch: SiteCharges, K: int, max_degree: int = 3):
    """All conserving monomials of degree <= max_degree on the sites, with |nu|_1 <= K."""
    n = len(S)
    d = len(S[0])
    table = frequency_table(S, K)
    out = []
    variables = [(k, 0) for k in sites] + [(k, 1) for k in sites]
    for w in range(max_degree + 1):
        for combo in combinations_with_replacement(range(len(variables)), w):
            a, b = defaultdict(int), defaultdict(int)
            for idx in combo:
                k, bar = variables[idx]
                (b if bar else a)[k] += 1
            mass = sum(p * ch.mass[k] for k, p in a.items()) - sum(p * ch.mass[k] for k, p in b.items())
            mom = tuple(
                sum(p * ch.momentum[k][c] for k, p in a.items()) - sum(p * ch.momentum[k][c] for k, p in b.items())
                for c in range(d)
            )
            nu = table.get((-mass, tuple(-c for c in mom)))
            if nu is None:
                continue
            ymax = (max_degree - w) // 2
            for ydeg in range(ymax + 1):
                for iv in compositions(ydeg, n):
                    m = Monomial(nu, tuple(iv), tuple(sorted(a.items())), tuple(sorted(b.items())))
                    if conserves(m, S, ch):
                        out.append(m)
    return out


def toy_instance(
    seed: int,
    S=((0, 0), (1, 0)),
    q: int = 1,
    box: int = 6,
    K0: int = 4,
    eps: float = 0.3,
    delta: float = 1e-3,
    active_radius: int = 1,
    xi=None,
    max_degree: int = 3,
):
    """Build the normal form of the given instance and a random real conserving perturbation on nearby sites."""
    from .blocks import combinatorialize, eigenvalue_catalog, sample_xi
    from .final_graph import assemble_normal_form, build_final_graph, finalize_partition, y_edges
    from .graph import build_graph, components

    S = as_sites(S)
    rng = np.random.default_rng(seed)
    g = build_graph(S, q, box)
    _, blocks, _ = components(g)
    cbs = [combinatorialize(b) for b in blocks]
    X = sample_xi(np.random.default_rng(12345), len(S), max(6, len(S) + 3), eps)
    cat = eigenvalue_catalog(cbs, q, X)
    yes, _ = y_edges(cat)
    fg = build_final_graph(blocks, cat, yes, S)
    part = finalize_partition(fg, blocks, cat, S)
    if xi is None:
        xi = sample_xi(rng, len(S), 1, eps)[0]
    nf = assemble_normal_form(part, cat, blocks, xi)
    active = sorted(k for k in part.sites if max(abs(c) for c in k) <= active_radius)
    N = nf.normal_form(active)
    N.c = {m: v for m, v in N.c.items() if m.sites() <= set(active)}
    full = part.charges("final")
    ch = SiteCharges({k: full.mass[k] for k in active}, {k: full.momentum[k] for k in active}, {k: full.energy[k] for k in active})
    sp = part.site_partition()
    sp = type(sp)({k: sp.block_of[k] for k in active}, {k: sp.s[k] for k in active})
    P = TruncatedHamiltonian(len(S))
    for m in conserving_monomials(active, S, ch, K0, max_degree):
        if m in P.c:
            continue
        cm = m.conj()
        if cm == m:
            P.c[m] = delta * rng.standard_normal()
        else:
            v = delta * complex(rng.standard_normal(), rng.standard_normal()) / math.sqrt(2)
            P.c[m] = v
            P.c[cm] = v.conjugate()
    N.c = {m: complex(v) for m, v in N.c.items()}
    N.c = {m: (v.real if abs(v.imag) == 0 else v) for m, v in N.c.items()}
    return ToyInstance(S, tuple(float(v) for v in xi), active, N.prune(), P.prune(), sp, ch, nf)


# homological equation

def split(H: TruncatedHamiltonian, partition):
    """(N, P_rg, P_high): kernel and range parts of degree <= 2 and the part of degree > 2."""
    low = project(H, "deg<=", j=2)
    return project(low, "kernel", partition), project(low, "range", partition), project(H, "deg>", j=2)


def _apply(G: TruncatedHamiltonian, m: Monomial) -> dict:
    """{G, m} for a unit monomial, as a dict."""
    acc = defaultdict(complex)
    for mg, v in G.c.items():
        for f, out in bracket_monomials(mg, m):
            acc[out] += f * v
    return {k: v for k, v in acc.items() if v != 0}


@dataclass
class HomologicalSolution:
    F: TruncatedHamiltonian
    basis_size: int
    blocks: int
    residual: float
    rhs_norm: float
    dense_gap: float
    nilpotent_cube: float
    info: dict = field(default_factory=dict)


def solve_homological(
    N: TruncatedHamiltonian, P: TruncatedHamiltonian, K: int, partition, s: float = 0.5, r: float = 0.3, dense_check: bool = True
) -> HomologicalSolution:
    """Solve {N, F} + Pi_rg,<=K {P^>2, F} = Pi_<=K P_rg for F in the range.

    ad(N)^-1 is applied block by block; the nilpotent correction uses the
    three-term series F = sum_k (-A)^k ad(N)^-1 b with A = ad(N)^-1 Pi ad(P^>2).
    A dense solve of the full operator is kept as an independent check.
    """
    _, P_rg, P_hi = split(P, partition)
    rhs = project(P_rg, "freq<=", K=K)

    def in_range(m):
        return m.degree <= 2 and l1(m.nu) <= K and not partition.is_kernel(m)

    # closure of the support of the right-hand side
    basis = {}
    order = []
    colsN, colsP = [], []
    queue = [m for m in sorted(rhs.c, key=repr)]
    for m in queue:
        basis.setdefault(m, len(basis))
    i = 0
    while i < len(queue):
        m = queue[i]
        i += 1
        imgN = _apply(N, m)
        imgP = {k: v for k, v in _apply(P_hi, m).items() if in_range(k)}
        for k in imgN:
            if not in_range(k):
                raise ValueError(f"ad(N) maps range monomial {m} outside the range: {k}")
        colsN.append(imgN)
        colsP.append(imgP)
        for k in list(imgN) + list(imgP):
            if k not in basis:
                basis[k] = len(basis)
                queue.append(k)
    dim = len(queue)
    rows, cols, vals = [], [], []
    for j, img in enumerate(colsN):
        for k, v in img.items():
            rows.append(basis[k])
            cols.append(j)
            vals.append(v)
    AN = coo_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex).tocsr()
    PB = np.zeros((dim, dim), dtype=complex)
    for j, img in enumerate(colsP):
        for k, v in img.items():
            PB[basis[k], j] += v
    b = np.zeros(dim, dtype=complex)
    for m, v in rhs.c.items():
        b[basis[m]] = v
    # block structure of ad(N)
    pattern = abs(AN) + abs(AN.T)
    nblocks, label = connected_components(pattern, directed=False)
    members = defaultdict(list)
    for idx, lab in enumerate(label):
        members[lab].append(idx)
    inv_blocks = []
    ANd = AN.toarray()
    for lab in sorted(members):
        idx = members[lab]
        M = ANd[np.ix_(idx, idx)]
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] <= 1e-13 * max(1.0, sv[0]):
            raise ResonanceError(f"ad(N) singular on block containing {queue[idx[0]]}")
        inv_blocks.append((idx, np.linalg.inv(M)))

    def adN_inv(v):
        out = np.zeros_like(v)
        for idx, Minv in inv_blocks:
            out[idx] = Minv @ v[idx]
        return out

    A = np.column_stack([adN_inv(PB[:, j]) for j in range(dim)]) if dim else np.zeros((0, 0))
    A3 = np.linalg.matrix_power(A, 3) if dim else A
    cube = float(np.max(np.abs(A3))) if dim else 0.0
    x = adN_inv(b)
    term = x
    for _ in range(2):
        term = -(A @ term)
        x = x + term
    gap = float("nan")
    if dense_check and dim:
        xd = np.linalg.solve(ANd + PB, b)
        gap = float(np.max(np.abs(xd - x)) / max(1e-300, np.max(np.abs(xd))))
    F = TruncatedHamiltonian(N.n, {queue[j]: x[j] for j in range(dim) if x[j] != 0})
    # residual with the bracket routines, independent of the matrices
    res = poisson(N, F) + project(project(project(poisson(P_hi, F), "range", partition), "freq<=", K=K), "deg<=", j=2) - rhs
    rn = majorant_norm(res, s, r)
    bn = majorant_norm(P_rg, s, r)
    return HomologicalSolution(F, dim, nblocks, rn, bn, gap, cube, {"dense_dim": dim})


def lie_transform(F: TruncatedHamiltonian, H: TruncatedHamiltonian, s: float, r: float, tol: float = 1e-14, cap: int = 40):
    """e^{ad F} H = sum_j ad_F^j H / j! with ad_F G = {F, G}, stopped when a term is below tol ||H||."""
    ref = majorant_norm(H, s, r)
    out = H.copy()
    term = H
    for j in range(1, cap + 1):
        term = poisson(F, term) * (1.0 / j)
        out = out + term
        if majorant_norm(term, s, r) < tol * ref:
            return out, j
    raise LieSeriesError(f"Lie series did not converge within {cap} orders")


@dataclass
class KamStepReport:
    K: int
    s: float
    r: float
    p_rg_before: float
    p_rg_after: float
    p_rg_after_lowfreq: float
    f_norm: float
    lie_orders: int
    residual: float
    dense_gap: float
    nilpotent_cube: float
    basis_size: int
    wall_time: float


def kam_step(H: TruncatedHamiltonian, K: int, s: float, r: float, partition, dense_check: bool = True):
    t0 = time.perf_counter()
    N, P_rg, P_hi = split(H, partition)
    sol = solve_homological(N, H - N, K, partition, s, r, dense_check)
    Hp, orders = lie_transform(sol.F, H, s, r)
    Hp = Hp.prune(0.0)
    _, P_rg2, _ = split(Hp, partition)
    rep = KamStepReport(
        K,
        s,
        r,
        majorant_norm(P_rg, s, r),
        majorant_norm(P_rg2, s, r),
        majorant_norm(project(P_rg2, "freq<=", K=K), s, r),
        majorant_norm(sol.F, s, r),
        orders,
        sol.residual,
        sol.dense_gap,
        sol.nilpotent_cube,
        sol.basis_size,
        time.perf_counter() - t0,
    )
    return Hp, rep


def schedule(m: int, s0: float, r0: float, K0: int):
    """(s_m, r_m, K_m) with s, r shrinking by (1 - 2^(-j-3)) per step and K_m = 4^m K0."""
    s, r = s0, r0
    for j in range(m):
        s *= 1 - 2.0 ** (-j - 3)
        r *= 1 - 2.0 ** (-j - 3)
    return s, r, 4**m * K0


def decay_exponent(norms) -> float:
    """Least-squares slope of log p_(m+1) against log p_m."""
    p = np.log(np.asarray(norms, dtype=float))
    if len(p) < 2:
        return float("nan")
    x, y = p[:-1], p[1:]
    if len(x) == 1:
        return float(y[0] / x[0])
    A = np.vstack([x, np.ones_like(x)]).T
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def kam_iterate(H0: TruncatedHamiltonian, steps: int, K0: int, partition, s0: float = 0.5, r0: float = 0.3, dense_check: bool = True):
    """Apply kam_step with the geometric (s, r, K) schedule; returns (H_final, reports, norms)."""
    H = H0
    reports = []
    norms = []
    for m in range(steps):
        s, r, K = schedule(m, s0, r0, K0)
        if m == 0:
            norms.append(majorant_norm(split(H, partition)[1], s, r))
        if norms[-1] == 0:
            reports.append(KamStepReport(K, s, r, 0.0, 0.0, 0.0, 0.0, 0, 0.0, 0.0, 0.0, 0, 0.0))
            norms.append(0.0)
            continue
        H, rep = kam_step(H, K, s, r, partition, dense_check)
        s1, r1, _ = schedule(m + 1, s0, r0, K0)
        norms.append(majorant_norm(split(H, partition)[1], s1, r1))
        reports.append(rep)
    return H, reports, norms


def scaling_exponent(inst: ToyInstance, K: int, ts=(1e-3, 5e-4, 2.5e-4, 1.25e-4), s: float = 0.5, r: float = 0.3) -> float:
    """Leading power in t of ||Pi_<=K P_rg,+|| when only P_rg is scaled by t.

    Small t keeps the bias from higher powers of t (proportional to t) near 1e-7.
    """
    _, P_rg, P_hi = split(inst.H, inst.partition)
    N = split(inst.H, inst.partition)[0]
    vals = []
    for t in ts:
        H = N + P_rg * t + P_hi
        _, rep = kam_step(H, K, s, r, inst.partition, dense_check=False)
        vals.append(rep.p_rg_after_lowfreq)
    lt = np.log(np.asarray(ts))
    lv = np.log(np.asarray(vals))
    A = np.vstack([lt, np.ones_like(lt)]).T
    return float(np.linalg.lstsq(A, lv, rcond=None)[0][0])


def decay_csv(reports, norms) -> str:
    lines = ["step,K,s,r,p_rg_before,p_rg_after,f_norm,lie_orders,residual,basis_size"]
    for m, rep in enumerate(reports):
        lines.append(
            ",".join(
                [str(m), str(rep.K)]
                + [f"{v:.17g}" for v in (rep.s, rep.r, norms[m], norms[m + 1], rep.f_norm)]
                + [str(rep.lie_orders), f"{rep.residual:.17g}", str(rep.basis_size)]
            )
        )
    return "\n".join(lines) + "\n"
