"""Y-edges, the final graph on (root, eigenvalue) pairs, the final partition and the final coordinates."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .blocks import combinatorialize, fitting, matrix_of_block, vertex_order
from .halfpoly import omega1
from .hamiltonian import Monomial, SiteCharges, SitePartition, TruncatedHamiltonian, multiply
from .lattice import EdgeLabel, add, linear_maps, neg, sqnorm, sub


class InternalConsistencyError(RuntimeError):
    """A closure computation found an edge that the construction should already contain."""


class CoverError(ValueError):
    """The blocks D_t fail to partition the normal sites."""


@dataclass
class YEdge:
    ell: tuple
    color: str
    witnesses: list = field(default_factory=list)  # (theta id, theta' id)


@dataclass(frozen=True, order=True)
class FinalIndex:
    root: tuple
    theta: int


def omega1_matrix(X, q: int, n: int) -> np.ndarray:
    """omega^(1) evaluated at the rows of X, shape (len(X), n)."""
    om = [p.compile() for p in omega1(q, n)]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.stack([f(X) for f in om], axis=1)


def y_edges(catalog, q: int = None, n: int = None, tol: float = 1e-8, band: float = 1e-4):
    """Labels ell whose omega^(1).ell is a difference (black) or minus a sum (red) of two branches.

    ell is read by least squares on the omega^(1) basis over all catalog samples,
    rounded, and then accepted only if the identity holds at every sample and at
    the scaled sample. Returns (edges, diagnostics).
    """
    q = catalog.q if q is None else q
    n = catalog.n if n is None else n
    X = catalog.xi_samples
    if len(X) < n + 2:
        raise ValueError(f"need at least n+2 = {n + 2} samples, got {len(X)}")
    W = omega1_matrix(X, q, n)
    W_scaled = omega1_matrix(catalog.scale_factor * X[:1], q, n)[0]
    br = catalog.branches
    found = {}
    diagnostics = []
    for a in br:
        for b in br:
            for color in ("black", "red"):
                if color == "black":
                    delta = b.values - a.values
                    delta_s = b.scaled - a.scaled
                else:
                    if b.bid < a.bid:
                        continue
                    delta = -(a.values + b.values)
                    delta_s = -(a.scaled + b.scaled)
                scale = max(1e-300, float(np.max(np.abs(a.values)) + np.max(np.abs(b.values))))
                if np.max(np.abs(delta.imag)) > tol * max(scale, 1e-12):
                    continue  # imaginary parts must cancel
                est, *_ = np.linalg.lstsq(W, delta.real, rcond=None)
                ell = tuple(int(v) for v in np.rint(est))
                resid = np.max(np.abs(W @ np.array(ell) - delta.real))
                resid_s = abs(W_scaled @ np.array(ell) - delta_s.real)
                if resid > tol * max(scale, 1e-12) or resid_s > tol * catalog.scale_factor**q * max(scale, 1e-12):
                    if np.max(np.abs(est - np.rint(est))) > band and np.max(np.abs(W @ est - delta.real)) <= tol * max(scale, 1e-12):
                        diagnostics.append({"kind": "non-integer", "pair": (a.bid, b.bid), "estimate": est.tolist()})
                    continue
                if not any(ell):
                    continue
                try:
                    lab = EdgeLabel(ell)
                except ValueError:
                    continue
                if lab.color != color:
                    continue
                key = (ell, color)
                found.setdefault(key, YEdge(ell, color)).witnesses.append((a.bid, b.bid))
    edges = sorted(found.values(), key=lambda e: (e.color, e.ell))
    return edges, diagnostics


@dataclass
class SiteInfo:
    root: tuple
    sigma: int
    theta: int
    block: int
    position: int


def site_table(blocks, catalog) -> dict:
    """Fitting marks of every normal site: its block root, colour, and eigenvalue branch by position."""
    table = {}
    for bi, b in enumerate(blocks):
        order = vertex_order(b)
        for pos, v in enumerate(order):
            table[v] = SiteInfo(b.root, b.sigma[v], catalog.labels[bi][pos], bi, pos)
    return table


@dataclass
class FinalGraph:
    vertices: list  # (root, theta)
    edges: dict  # (u, v) -> (ell, color); black stored in both orientations with opposite labels
    components: list  # list of vertex lists
    diagnostics: list


def build_final_graph(blocks, catalog, yedges, S) -> FinalGraph:
    """Graph on Fitting pairs (r, theta) with Y-edges kept when root equations and witnesses match."""
    sites = site_table(blocks, catalog)
    thetas = defaultdict(set)
    for info in sites.values():
        thetas[info.root].add(info.theta)
    vertices = sorted((r, t) for r, ts in thetas.items() for t in ts)
    roots = set(thetas)
    edges = {}
    diagnostics = []
    for ye in yedges:
        _, pi, pi2 = linear_maps(ye.ell, S)
        wit = set(ye.witnesses)
        for r in sorted(roots):
            if ye.color == "black":
                r2 = add(r, pi)
                if r2 not in roots or pi2 + sqnorm(r) - sqnorm(r2) != 0:
                    continue
                pairs = [(a, b) for a, b in wit if a in thetas[r] and b in thetas[r2]]
                for a, b in pairs:
                    u, v = (r, a), (r2, b)
                    if r2 == r:
                        diagnostics.append({"kind": "same-root", "vertices": [u, v], "ell": ye.ell})
                        continue
                    edges[(u, v)] = (ye.ell, "black")
                    edges[(v, u)] = (neg(ye.ell), "black")
            else:
                r2 = sub(neg(pi), r)
                if r2 not in roots or pi2 + sqnorm(r) + sqnorm(r2) != 0:
                    continue
                for a, b in wit:
                    for x, y in ((a, b), (b, a)):
                        if x in thetas[r] and y in thetas[r2]:
                            u, v = (r, x), (r2, y)
                            if r2 == r and x != y:
                                diagnostics.append({"kind": "same-root", "vertices": [u, v], "ell": ye.ell})
                                continue
                            edges[(u, v)] = (ye.ell, "red")
                            edges[(v, u)] = (ye.ell, "red")
    adj = defaultdict(list)
    for (u, v) in edges:
        adj[u].append(v)
    seen = set()
    comps = []
    for v in vertices:
        if v in seen:
            continue
        comp = []
        queue = deque([v])
        seen.add(v)
        while queue:
            x = queue.popleft()
            comp.append(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        comps.append(sorted(comp))
    for comp in comps:
        rs = [r for r, _ in comp]
        if len(set(rs)) != len(rs):
            diagnostics.append({"kind": "same-root-connected", "component": comp})
    return FinalGraph(vertices, edges, comps, diagnostics)


def propagate_labels(comp, root, edges):
    """Labels ell_v and signs eps_v with j.ell_v + r_v = eps_v r_t along a spanning tree from the root."""
    lab = {root: (tuple([0] * len(next(iter(edges.values()))[0])) if edges else None, 1)}
    adj = defaultdict(list)
    members = set(comp)
    for (u, v), (ell, color) in edges.items():
        if u in members:
            adj[u].append((v, ell, color))
    queue = deque([root])
    while queue:
        u = queue.popleft()
        lu, eu = lab[u]
        for v, ell, color in adj[u]:
            if v in lab:
                continue
            if color == "black":
                lab[v] = (sub(lu, ell), eu)
            else:
                lab[v] = (sub(ell, lu), -eu)
            queue.append(v)
    return lab


@dataclass
class Partition:
    """Final blocks D_t with their labels ell_k, colours s(k) and bookkeeping."""

    S: tuple
    q: int
    sites: dict  # k -> SiteInfo
    T: list  # FinalIndex, sorted
    T_f: set
    D: dict  # FinalIndex -> sorted list of sites
    vertex_of: dict  # FinalIndex -> list of (r, theta) with (ell, eps)
    ell: dict  # k -> ell_k
    s: dict  # k -> +1/-1
    t_of: dict  # k -> FinalIndex
    boundary: set  # FinalIndex touching a boundary block
    diagnostics: list

    @property
    def T_g(self) -> list:
        return [t for t in self.T if t not in self.T_f]

    def site_partition(self) -> SitePartition:
        return SitePartition(dict(self.t_of), dict(self.s))

    def charges(self, coords: str = "final") -> SiteCharges:
        """Mass/momentum/energy charges of z_k in Fitting ('fitting') or final ('final') coordinates."""
        mass, mom, en = {}, {}, {}
        for k, info in self.sites.items():
            if coords == "fitting":
                sg, r = info.sigma, info.root
            else:
                sg, r = self.s[k], self.t_of[k].root
            mass[k] = sg
            mom[k] = tuple(sg * c for c in r)
            en[k] = sg * sqnorm(r)
        return SiteCharges(mass, mom, en)


def finalize_partition(fg: FinalGraph, blocks, catalog, S, q: int = None, d: int = None) -> Partition:
    q = catalog.q if q is None else q
    d = len(S[0]) if d is None else d
    n = len(S)
    sites = site_table(blocks, catalog)
    by_pair = defaultdict(list)
    for k, info in sites.items():
        by_pair[(info.root, info.theta)].append(k)
    red_roots = {b.root for b in blocks if b.has_red}
    boundary_roots = {b.root for b in blocks if b.boundary_flag}
    T, T_f, D, vertex_of, ell, s, t_of, boundary = [], set(), {}, {}, {}, {}, {}, set()
    diagnostics = list(fg.diagnostics)
    for comp in fg.components:
        root = min(comp)
        t = FinalIndex(root[0], root[1])
        lab = propagate_labels(comp, root, fg.edges)
        zero = (0,) * n
        lab[root] = (zero, 1)
        if len(lab) != len(comp):
            raise InternalConsistencyError(f"component of {t} not connected by its own edges")
        members = set(comp)
        red = any(c == "red" for (u, v), (_, c) in fg.edges.items() if u in members)
        if red or any(r in red_roots for r, _ in comp):
            T_f.add(t)
        if any(r in boundary_roots for r, _ in comp):
            boundary.add(t)
        # every vertex must be joined to the root by a direct edge with the composed label
        for v in comp:
            if v == root:
                continue
            lv, ev = lab[v]
            want = ((neg(lv), "black") if ev == 1 else (lv, "red"))
            if fg.edges.get((root, v)) != want:
                raise InternalConsistencyError(f"missing direct edge {root} -> {v} with label {want}")
        T.append(t)
        D[t] = sorted(k for v in comp for k in by_pair[v])
        vertex_of[t] = [(v, lab[v]) for v in comp]
        for v in comp:
            lv, ev = lab[v]
            for k in by_pair[v]:
                ell[k] = lv
                s[k] = sites[k].sigma * ev
                t_of[k] = t
    T.sort()
    # cover and size checks
    seen = defaultdict(int)
    for t in T:
        for k in D[t]:
            seen[k] += 1
    bad = [k for k in sites if seen[k] != 1]
    if bad:
        raise CoverError(f"site {bad[0]} covered {seen[bad[0]]} times")
    for t in T:
        if t in boundary:
            continue
        lim = 2 * d + 1 if t in T_f else d + 1
        if len(D[t]) > lim:
            diagnostics.append({"kind": "block-size", "t": (t.root, t.theta), "size": len(D[t]), "limit": lim})
        if t not in T_f and any(s[k] != 1 for k in D[t]):
            diagnostics.append({"kind": "good-block-colour", "t": (t.root, t.theta)})
    return Partition(tuple(S), q, sites, T, T_f, D, vertex_of, ell, s, t_of, boundary, diagnostics)


def check_alcf(part: Partition, catalog, tol: float = 1e-10) -> list:
    """Failures of the two defining identities of ell_k (integer and at every catalog sample)."""
    S = part.S
    W = omega1_matrix(catalog.xi_samples, part.q, len(S))
    vals = {b.bid: b.values for b in catalog.branches}
    fails = []
    for k, info in part.sites.items():
        t = part.t_of[k]
        lk = part.ell[k]
        eta, pi, _ = linear_maps(lk, S)
        eps = eta + 1
        if add(pi, info.root) != tuple(eps * c for c in t.root):
            fails.append(("momentum", k))
        lhs = W @ np.array(lk, dtype=float) + vals[info.theta]
        rhs = eps * vals[t.theta]
        scale = max(1.0, float(np.max(np.abs(rhs))))
        if np.max(np.abs(lhs - rhs)) > tol * scale:
            fails.append(("eigenvalue", k))
    return fails


def translation_covariance(part: Partition, blocks) -> list:
    """For good blocks sharing a shape, D_t2 = D_t1 + (r_t2 - r_t1); returns violations."""
    fam = defaultdict(list)
    for t in part.T_g:
        if t in part.boundary:
            continue
        shape = (t.theta, tuple(sorted(sub(k, t.root) for k in part.D[t])))
        fam[shape].append(t)
    bad = []
    for shape, ts in fam.items():
        t1 = ts[0]
        for t2 in ts[1:]:
            shift = sub(t2.root, t1.root)
            if sorted(add(k, shift) for k in part.D[t1]) != part.D[t2]:
                bad.append((t1, t2))
    return bad


# phase shift

def phase_shift_monomial(m: Monomial, part: Partition, coeff=1.0) -> TruncatedHamiltonian:
    """Substitute z_k = e^{-i sigma(k) ell_k.x} z'_k and y = y' + sum sigma(k) ell_k |z'_k|^2."""
    n = len(m.nu)
    nu = list(m.nu)
    for sign, pairs in ((1, m.alpha), (-1, m.beta)):
        for k, p in pairs:
            if k in part.ell:
                sg = part.sites[k].sigma
                for i, a in enumerate(part.ell[k]):
                    nu[i] -= sign * p * sg * a
    out = TruncatedHamiltonian(n, {Monomial(tuple(nu), (0,) * n, m.alpha, m.beta): coeff})
    for j, power in enumerate(m.i):
        if not power:
            continue
        ej = tuple(1 if i == j else 0 for i in range(n))
        factor = {Monomial((0,) * n, ej, (), ()): 1}
        for k, lk in part.ell.items():
            if lk[j]:
                zk = ((k, 1),)
                factor[Monomial((0,) * n, (0,) * n, zk, zk)] = part.sites[k].sigma * lk[j]
        fac = TruncatedHamiltonian(n, factor)
        for _ in range(power):
            out = multiply(out, fac)
    return out


def phase_shift(H: TruncatedHamiltonian, part: Partition) -> TruncatedHamiltonian:
    out = TruncatedHamiltonian(H.n, {}, H.K, H.max_degree)
    for m, v in H.c.items():
        out = out + phase_shift_monomial(m, part, v)
    return out


def shifted_frequency(m: Monomial, part: Partition) -> tuple:
    """Fourier index after the phase shift (the y-substitution never changes it)."""
    nu = list(m.nu)
    for sign, pairs in ((1, m.alpha), (-1, m.beta)):
        for k, p in pairs:
            if k in part.ell:
                sg = part.sites[k].sigma
                for i, a in enumerate(part.ell[k]):
                    nu[i] -= sign * p * sg * a
    return tuple(nu)


# normal form assembly

@dataclass
class NormalFormData:
    """Normal form at one parameter value, in final coordinates.

    Attributes
    ----------
    omega : ndarray
        Tangential frequencies |j_i|^2 + omega^(1)_i(xi).
    Omega : dict
        FinalIndex -> d_t x d_t matrix (|r_t|^2 + theta_t) I + nilpotent part, in the order of ``partition.D[t]``.
    nilpotent : dict
        FinalIndex -> nilpotent part (only stored for bad blocks).
    theta : dict
        FinalIndex -> theta_t(xi) (complex).
    """

    xi: tuple
    partition: Partition
    omega: np.ndarray
    Omega: dict
    nilpotent: dict
    theta: dict

    @property
    def S(self):
        return self.partition.S

    def d_t(self, t) -> int:
        return len(self.partition.D[t])

    def normal_form(self, sites=None) -> TruncatedHamiltonian:
        """omega.y + sum_t Q_t as a Hamiltonian, restricted to the given sites (default all)."""
        part = self.partition
        n = len(self.omega)
        zero = (0,) * n
        H = TruncatedHamiltonian(n)
        for j in range(n):
            e = tuple(1 if i == j else 0 for i in range(n))
            H.c[Monomial(zero, e, (), ())] = complex(self.omega[j])
        keep = None if sites is None else set(sites)
        for t, Om in self.Omega.items():
            Dt = part.D[t]
            if keep is not None and not set(Dt) <= keep:
                continue
            for a, h in enumerate(Dt):
                for b, k in enumerate(Dt):
                    v = Om[a, b]
                    if v == 0:
                        continue
                    m = lagrangian_pair(h, k, part.s, n)
                    H.c[m] = H.c.get(m, 0) + complex(v) * part.s[h]
        return H.prune()


def lagrangian_pair(h, k, s, n: int) -> Monomial:
    """Monomial conj(w_h) w_k with w_k = z_k if s(k) = +1 else zbar_k."""
    alpha, beta = defaultdict(int), defaultdict(int)
    (beta if s[h] == 1 else alpha)[h] += 1
    (alpha if s[k] == 1 else beta)[k] += 1
    n0 = (0,) * n
    return Monomial(n0, n0, tuple(sorted(alpha.items())), tuple(sorted(beta.items())))


def assemble_normal_forms(part: Partition, catalog, blocks, X, nil_tol: float = 1e-8) -> list:
    """Normal forms at every row of X, sharing one batched eigenvalue continuation."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vals = catalog.values_at(X)
    return [assemble_normal_form(part, catalog, blocks, x, nil_tol, vals=v) for x, v in zip(X, vals)]


def assemble_normal_form(part: Partition, catalog, blocks, xi, nil_tol: float = 1e-8, vals=None) -> NormalFormData:
    S = part.S
    n = len(S)
    q = part.q
    xi = tuple(float(v) for v in xi)
    om1 = omega1_matrix([xi], q, n)[0]
    omega = np.array([sqnorm(j) for j in S], dtype=float) + om1
    if vals is None:
        vals = catalog.values_at([xi])[0]
    Omega, nil, theta = {}, {}, {}
    fits = {}
    for t in part.T:
        th = vals[t.theta]
        theta[t] = th
        dt = len(part.D[t])
        scalar = sqnorm(t.root) + th
        if t not in part.T_f:
            Omega[t] = np.real_if_close(scalar) * np.eye(dt)
            continue
        # nilpotent parts of each Fitting pair, transported with the sign eps_v
        mats = []
        for (r, bid), (_, eps) in part.vertex_of[t]:
            ks = [k for k in part.D[t] if part.sites[k].root == r and part.sites[k].theta == bid]
            bi = part.sites[ks[0]].block
            if bi not in fits:
                cb = combinatorialize(blocks[bi])
                fits[bi] = fitting(matrix_of_block(cb, q, n), xi)
            fr = fits[bi]
            target = vals[bid]
            start = 0
            block = None
            for mean, mult in fr.eigen_clusters:
                if abs(mean - target) <= 1e-6 * max(1.0, abs(target)) and mult == len(ks):
                    Uinv = np.linalg.inv(fr.U)
                    Nn = (Uinv @ fr.nilpotent @ fr.U)[start : start + mult, start : start + mult]
                    block = eps * Nn
                    break
                start += mult
            if block is None:
                raise ValueError(f"no Fitting cluster for branch {bid} in block {bi} at xi={xi}")
            mats.append(block)
        dim = sum(m.shape[0] for m in mats)
        Nt = np.zeros((dim, dim), dtype=complex)
        o = 0
        for m in mats:
            Nt[o : o + len(m), o : o + len(m)] = m
            o += len(m)
        if np.linalg.norm(np.linalg.matrix_power(Nt, dim)) > nil_tol * max(1.0, np.linalg.norm(Nt)) ** dim:
            raise ValueError(f"nilpotent part of {t} is not nilpotent")
        nil[t] = np.real_if_close(Nt)
        Omega[t] = np.real_if_close(scalar * np.eye(dim) + Nt)
    return NormalFormData(xi, part, omega, Omega, nil, theta)


def normal_form_to_json(nf: NormalFormData) -> dict:
    part = nf.partition
    fams = []
    for t in part.T:
        entry = {
            "root": list(t.root),
            "theta": t.theta,
            "bad": t in part.T_f,
            "sites": [list(k) for k in part.D[t]],
            "s": [part.s[k] for k in part.D[t]],
            "ell": [list(part.ell[k]) for k in part.D[t]],
        }
        if t in nf.nilpotent:
            N = np.asarray(nf.nilpotent[t], dtype=complex)
            entry["nilpotent_re"] = N.real.tolist()
            entry["nilpotent_im"] = N.imag.tolist()
        fams.append(entry)
    return {"xi": list(nf.xi), "omega": nf.omega.tolist(), "blocks": fams}


# kernel basis and conserved quantities

def kernel_monomials(part: Partition, catalog, K: int, sites, tol: float = 1e-9) -> list:
    """Degree <= 2 conserving monomials in Fitting coordinates annihilated by ad(N^s) identically in xi.

    The divisor of e^{i nu.x} y^i z^alpha zbar^beta is
    omega.nu + sum (alpha_k - beta_k) sigma(k) (|r(k)|^2 + theta(k)); its integer
    part must vanish exactly and its polynomial part at every catalog sample.
    """
    from .melnikov import frequencies

    S = part.S
    n = len(S)
    ch = part.charges("fitting")
    by_charge = defaultdict(list)
    for nu in frequencies(n, K):
        eta, pi, _ = linear_maps(nu, S)
        by_charge[(eta, pi)].append(nu)
    W = omega1_matrix(catalog.xi_samples, part.q, n)
    vals = {b.bid: b.values for b in catalog.branches}
    scale = max(1.0, max(float(np.max(np.abs(v))) for v in vals.values()))
    sites = sorted(sites)
    zero = (0,) * n
    out = []

    def consider(alpha, beta, ydeg):
        mass = sum(ch.mass[k] for k in alpha) - sum(ch.mass[k] for k in beta)
        mom = [0] * len(S[0])
        for sign, ks in ((1, alpha), (-1, beta)):
            for k in ks:
                for c in range(len(mom)):
                    mom[c] += sign * ch.momentum[k][c]
        for nu in by_charge.get((-mass, tuple(-c for c in mom)), []):
            ip = sum(v * sqnorm(j) for v, j in zip(nu, S))
            poly = W @ np.array(nu, dtype=float)
            for sign, ks in ((1, alpha), (-1, beta)):
                for k in ks:
                    info = part.sites[k]
                    ip += sign * info.sigma * sqnorm(info.root)
                    poly = poly + sign * info.sigma * vals[info.theta]
            if ip != 0 or np.max(np.abs(poly)) > tol * scale:
                continue
            a, b = defaultdict(int), defaultdict(int)
            for k in alpha:
                a[k] += 1
            for k in beta:
                b[k] += 1
            if ydeg:
                for j in range(n):
                    e = tuple(int(i == j) for i in range(n))
                    out.append(Monomial(nu, e, (), ()))
            else:
                out.append(Monomial(nu, zero, tuple(sorted(a.items())), tuple(sorted(b.items()))))

    consider((), (), 0)
    consider((), (), 1)
    for k in sites:
        consider((k,), (), 0)
        consider((), (k,), 0)
    for i, h in enumerate(sites):
        for k in sites[i:]:
            consider((h, k), (), 0)
            consider((), (h, k), 0)
        for k in sites:
            consider((h,), (k,), 0)
    return sorted(set(out), key=repr)


def conserved_in_final(part: Partition, sites=None):
    """(L, M components, K) of the Fitting coordinates pushed through the phase shift."""
    from .hamiltonian import SiteCharges, conserved_quantities

    ch = part.charges("fitting")
    keep = set(part.sites) if sites is None else set(sites)
    ch = SiteCharges(
        {k: v for k, v in ch.mass.items() if k in keep},
        {k: v for k, v in ch.momentum.items() if k in keep},
        {k: v for k, v in ch.energy.items() if k in keep},
    )
    L, Ms, Kq = conserved_quantities(part.S, ch)
    return phase_shift(L, part), [phase_shift(M, part) for M in Ms], phase_shift(Kq, part)
