"""Block matrices of combinatorial blocks, their Fitting decomposition and eigenvalue catalog."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .halfpoly import HalfPoly, dot, edge_coeff, omega1


class NearDiscriminantError(ValueError):
    """Eigenvalue clusters too close to separate reliably at this xi."""


class RegionError(ValueError):
    """Branch identification across samples was inconsistent."""


@dataclass(frozen=True)
class CombinatorialBlock:
    sigma: tuple  # per vertex id, root first
    L: tuple  # per vertex id
    black: tuple  # (i, j, ell) oriented, both orientations present
    red: tuple  # (i, j, ell) with i <= j

    @property
    def dim(self) -> int:
        return len(self.sigma)

    @property
    def has_red(self) -> bool:
        return bool(self.red)


def vertex_order(block) -> list:
    """Root first, then the remaining vertices sorted by their phase vector."""
    rest = sorted((v for v in block.vertices if v != block.root), key=lambda v: block.L[v])
    return [block.root] + rest


def combinatorialize(block) -> CombinatorialBlock:
    order = vertex_order(block)
    idx = {v: i for i, v in enumerate(order)}
    black = tuple(sorted((idx[h], idx[k], tuple(ell)) for h, k, ell in block.black_edges))
    red = tuple(
        sorted((min(idx[h], idx[k]), max(idx[h], idx[k]), tuple(ell)) for h, k, ell in block.red_edges)
    )
    return CombinatorialBlock(
        tuple(block.sigma[v] for v in order), tuple(tuple(block.L[v]) for v in order), black, red
    )


@dataclass
class BlockMatrixC:
    cb: CombinatorialBlock
    q: int
    entries: list  # dim x dim HalfPoly

    @property
    def dim(self) -> int:
        return len(self.entries)

    def is_symmetric(self) -> bool:
        return all(
            self.entries[i][j] == self.entries[j][i] for i in range(self.dim) for j in range(i)
        )

    def evaluate(self, xi) -> np.ndarray:
        return np.array([[p.evaluate(xi) for p in row] for row in self.entries])

    def compiled(self):
        fs = [[p.compile() for p in row] for row in self.entries]

        def f(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            out = np.empty((X.shape[0], self.dim, self.dim))
            for i, row in enumerate(fs):
                for j, g in enumerate(row):
                    out[:, i, j] = g(X)
            return out

        return f


def matrix_of_block(cb: CombinatorialBlock, q: int, n: int = None) -> BlockMatrixC:
    n = n if n is not None else len(cb.L[0])
    om = omega1(q, n)
    a = cb.dim
    entries = [[HalfPoly(n) for _ in range(a)] for _ in range(a)]
    for k in range(a):
        entries[k][k] = dot(om, cb.L[k]) * cb.sigma[k] if any(cb.L[k]) else HalfPoly(n)
    for h, k, ell in cb.black:
        entries[h][k] = entries[h][k] + edge_coeff(ell, q) * cb.sigma[k]
    for h, k, ell in cb.red:
        c = edge_coeff(ell, q)
        entries[h][k] = entries[h][k] + c * cb.sigma[k]
        if h != k:
            entries[k][h] = entries[k][h] + c * cb.sigma[h]
    return BlockMatrixC(cb, q, entries)


@dataclass
class FittingResult:
    xi_sample: tuple
    eigen_clusters: list  # (value, multiplicity)
    U: np.ndarray
    semisimple: np.ndarray
    nilpotent: np.ndarray
    tol: float
    residuals: dict = field(default_factory=dict)


def _null_basis(A, m):
    _, _, vh = np.linalg.svd(A)
    return vh[-m:].conj().T


def cluster_eigenvalues(vals, tol):
    """Greedy single-linkage clustering of eigenvalues; returns list of (mean, indices)."""
    vals = list(vals)
    order = sorted(range(len(vals)), key=lambda i: (round(vals[i].real, 12), vals[i].imag))
    clusters = []
    for i in order:
        for c in clusters:
            if any(abs(vals[i] - vals[j]) <= tol for j in c):
                c.append(i)
                break
        else:
            clusters.append([i])
    return [(complex(np.mean([vals[j] for j in c])), c) for c in clusters]


def fitting(C, xi, tol: float = 1e-8, name: str = "block") -> FittingResult:
    """Jordan/Fitting split of the numeric block matrix at one sample.

    ``C`` may be a BlockMatrixC or an already numeric square matrix. ``tol`` is
    relative to the matrix scale.
    """
    if isinstance(C, BlockMatrixC):
        M = C.evaluate(xi)
    else:
        M = np.asarray(C)
    dim = M.shape[0]
    scale = max(1.0, float(np.linalg.norm(M, 2))) if dim else 1.0
    symmetric = np.isrealobj(M) and np.allclose(M, M.T, atol=0, rtol=0)
    if symmetric:
        w, V = np.linalg.eigh(M)
        clusters = cluster_eigenvalues(w.astype(complex), tol * scale)
    else:
        w = np.linalg.eigvals(M)
        clusters = cluster_eigenvalues(w, tol * scale)
    means = [c[0] for c in clusters]
    for i in range(len(means)):
        for j in range(i):
            if abs(means[i] - means[j]) < 10 * tol * scale:
                raise NearDiscriminantError(f"{name}: clusters {means[j]} and {means[i]} too close at xi={tuple(xi)}")
    cols, diag = [], []
    for mean, idx in clusters:
        m = len(idx)
        if symmetric:
            cols.append(V[:, idx])
        else:
            P = np.linalg.matrix_power(M - mean * np.eye(dim), m)
            cols.append(_null_basis(P, m))
        diag.extend([mean] * m)
    U = np.hstack(cols) if cols else np.zeros((0, 0))
    D = np.diag(diag)
    if symmetric:
        S = U @ D.real @ U.T
        N = np.zeros_like(M)
        Uinv = U.T
    else:
        Uinv = np.linalg.inv(U)
        S = U @ D @ Uinv
        N = M - S
        if np.all(np.abs(np.imag(S)) <= 1e-14 * scale) and np.isrealobj(M):
            S = S.real
            N = N.real
    # block-diagonal target from the conjugated matrix
    B = Uinv @ M @ U
    mask = np.zeros_like(B, dtype=bool)
    start = 0
    for _, idx in clusters:
        m = len(idx)
        mask[start : start + m, start : start + m] = True
        start += m
    res = {
        "block_offdiag": float(np.linalg.norm(np.where(mask, 0, B))) / scale,
        "reconstruction": float(np.linalg.norm(S + N - M)) / scale,
        "commutator": float(np.linalg.norm(S @ N - N @ S)) / scale**2,
        "nilpotency": float(np.linalg.norm(np.linalg.matrix_power(N, dim))) / scale**dim if dim else 0.0,
    }
    return FittingResult(
        tuple(xi), [(c[0], len(c[1])) for c in clusters], U, S, N, tol, res
    )


def sample_xi(rng, n: int, count: int, eps: float) -> np.ndarray:
    """Uniform samples of the working box eps^2 [1/2, 3/2]^n."""
    return eps**2 * rng.uniform(0.5, 1.5, size=(count, n))


def sort_eigs(w) -> np.ndarray:
    """Order eigenvalues by real part, then imaginary part; real parts are rounded so conjugate pairs sort stably."""
    w = np.asarray(w, dtype=complex)
    if not len(w):
        return w
    scale = max(1e-300, float(np.max(np.abs(w))))
    key = np.round(w.real / scale, 9)
    return w[np.lexsort((w.imag, key))]


def _sorted_eigs(M):
    return sort_eigs(np.linalg.eigvals(M))


def track_eigenvalues(f, xi0, xi1, steps: int = 64, tol: float = 1e-8):
    """Follow eigenvalues of f(xi) along the segment xi0 -> xi1 by nearest matching.

    Returns the eigenvalues at xi1 in the order of those at xi0.
    """
    xi0 = np.asarray(xi0, float)
    xi1 = np.asarray(xi1, float)
    cur = _sorted_eigs(f(xi0))
    for s in range(1, steps + 1):
        nxt = np.linalg.eigvals(f(xi0 + (xi1 - xi0) * s / steps))
        used = set()
        new = np.empty_like(cur)
        for i, v in enumerate(cur):
            j = min((j for j in range(len(nxt)) if j not in used), key=lambda j: abs(nxt[j] - v))
            used.add(j)
            new[i] = nxt[j]
        cur = new
    return cur


@dataclass
class Branch:
    bid: int
    values: np.ndarray  # complex values at the catalog samples
    real: bool
    sources: list  # (block index, position in its eigen-ordering)
    scaled: complex = 0j  # value at the scaled copy of the first sample


def block_branches(Cm: BlockMatrixC, samples, tol=1e-8):
    """Eigenvalue branches of one block: an array (samples x dim) consistently ordered."""
    g = Cm.compiled()
    f = lambda x: g(np.asarray(x, float)[None, :])[0]
    xi0 = samples[0]
    base = _sorted_eigs(f(xi0))
    rows = [base]
    for x in samples[1:]:
        rows.append(track_eigenvalues(f, xi0, x, tol=tol))
    return np.array(rows)


@dataclass
class Catalog:
    """Deduplicated eigenvalue branches over a list of combinatorial blocks.

    Attributes
    ----------
    cbs : list of CombinatorialBlock
        The blocks, in the order given by the caller.
    branches : list of Branch
        Distinct branches; ``labels[i][p]`` is the branch id of eigen-position ``p`` of block ``i``.
    xi_samples : ndarray
        The samples the branch values refer to (the scaled copy is not included).
    """

    cbs: list
    q: int
    branches: list
    labels: list
    xi_samples: np.ndarray
    scale_factor: float

    def __iter__(self):
        # allows ``branches, labels = catalog``
        return iter((self.branches, self.labels))

    @property
    def n(self) -> int:
        return self.xi_samples.shape[1]

    def values_at(self, X) -> np.ndarray:
        """Branch values at new samples, shape (len(X), len(branches)), by continuation from the first sample."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], len(self.branches)), dtype=complex)
        done = {}
        for b in self.branches:
            bi, pos = b.sources[0]
            cb = self.cbs[bi]
            if cb not in done:
                done[cb] = continue_eigenvalues(matrix_of_block(cb, self.q, self.n), self.xi_samples[0], X)
            out[:, b.bid] = done[cb][:, pos]
        return out


def continue_eigenvalues(Cm: BlockMatrixC, xi0, X, steps: int = 48) -> np.ndarray:
    """Eigenvalues at each row of X, ordered as the sorted eigenvalues at xi0 (batched path tracking)."""
    g = Cm.compiled()
    xi0 = np.asarray(xi0, float)
    base = _sorted_eigs(g(xi0[None, :])[0])
    out = np.empty((len(X), Cm.dim), dtype=complex)
    ts = np.linspace(0.0, 1.0, steps + 1)[1:]
    for row, x in enumerate(X):
        path = xi0[None, :] + ts[:, None] * (np.asarray(x) - xi0)[None, :]
        eig = np.linalg.eigvals(g(path)) if Cm.dim else np.zeros((steps, 0))
        cur = base.copy()
        for nxt in eig:
            used = np.zeros(len(nxt), dtype=bool)
            new = np.empty_like(cur)
            for i, v in enumerate(cur):
                d = np.where(used, np.inf, np.abs(nxt - v))
                j = int(np.argmin(d))
                used[j] = True
                new[i] = nxt[j]
            cur = new
        out[row] = cur
    return out


def eigenvalue_catalog(
    cbs, q: int, xi_samples, tol: float = 1e-8, scale_factor: float = 4.0, dedup_tol: float = 1e-6
) -> Catalog:
    """Deduplicated list of eigenvalue branches over all blocks.

    A scaled copy of the first sample is appended internally; every branch must
    obey homogeneity of degree q between the two.
    """
    xi_samples = [tuple(map(float, x)) for x in xi_samples]
    if len(xi_samples) < 3:
        raise ValueError("need at least 3 samples in one region")
    n = len(xi_samples[0])
    pts = xi_samples + [tuple(scale_factor * c for c in xi_samples[0])]
    branches = []
    labels = []  # per block: list of branch ids in eigen-ordering
    cache = {}
    for bi, cb in enumerate(cbs):
        if cb not in cache:
            cache[cb] = block_branches(matrix_of_block(cb, q, n), pts, tol)
        vals = cache[cb]
        ids = []
        for pos in range(cb.dim):
            col = vals[:, pos]
            mag = max(1.0, float(np.max(np.abs(col))))
            base, scaled = col[0], col[-1]
            if abs(scaled - scale_factor**q * base) > 1e-6 * max(mag, abs(scaled)):
                raise RegionError(f"block {bi}: branch {pos} breaks degree-{q} homogeneity")
            col = col[:-1]
            ref = max(1e-300, float(np.max(np.abs(col))))
            match = None
            for b in branches:
                # repeated eigenvalues of non-semisimple blocks are only accurate to ~sqrt(eps)
                if np.all(np.abs(b.values - col) <= dedup_tol * max(ref, 1e-12) + 1e-14):
                    match = b
                    break
            if match is None:
                real = bool(np.all(np.abs(col.imag) <= dedup_tol * max(ref, 1e-12)))
                match = Branch(len(branches), col, real, [], scaled)
                branches.append(match)
            match.sources.append((bi, pos))
            ids.append(match.bid)
        labels.append(ids)
    return Catalog(list(cbs), q, branches, labels, np.array(xi_samples), scale_factor)


def catalog_to_json(cat: Catalog) -> list:
    return [
        {
            "id": b.bid,
            "real": b.real,
            "values": [[float(v.real), float(v.imag)] for v in b.values],
            "source_block": b.sources[0][0],
        }
        for b in cat.branches
    ]


def ad_block(cb: CombinatorialBlock, root_norm2: int, nu, q: int, xi, S) -> np.ndarray:
    """C(xi) shifted by |r|^2 + sum nu_i |j_i|^2 + omega1(xi).nu."""
    n = len(S)
    Cm = matrix_of_block(cb, q, n)
    om = omega1(q, n)
    shift = root_norm2 + sum(v * sum(c * c for c in j) for v, j in zip(nu, S))
    shift += sum(v * p.evaluate(xi) for v, p in zip(nu, om) if v)
    M = Cm.evaluate(xi) if Cm.dim else np.zeros((0, 0))
    return M + shift * np.eye(Cm.dim)
