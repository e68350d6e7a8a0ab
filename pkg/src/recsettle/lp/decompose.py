"""Block-angular structure detection and Dantzig-Wolfe decomposition.

Columns carry an integer block label (``-1`` marks master columns that belong
to no block).  After presolve, a row whose columns all share one label
``b >= 0`` is a block row; every other row links blocks.  Blocks without
linking rows are solved independently.  When linking rows exist, a
Dantzig-Wolfe master holds them together with one convexity row per linked
block; subproblems are priced with the master duals (Farkas duals while the
master is still infeasible), warm-started from their previous basis.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from recsettle.errors import SolverError
from recsettle.lp.simplex import (
    AT_HI, AT_LO, BASIC, FREE, INFEASIBLE, OPTIMAL, UNBOUNDED, Basis, SimplexOptions, SimplexSolver,
)


@dataclass
class StructuredResult:
    status: int
    x: np.ndarray
    iterations: int
    rounds: int = 0
    blocks: int = 0
    linking_rows: int = 0
    ray: np.ndarray | None = None


@dataclass
class BlockCache:
    """Per-block state kept between solves of structurally identical problems."""

    basis: Basis | None = None
    last_cost: np.ndarray | None = None
    last: object = None


class WarmStart:
    """Opaque warm-start token: block bases, column pools, last master basis."""

    def __init__(self):
        self.blocks: dict[str, BlockCache] = {}
        self.pool: list[tuple[str, bool, np.ndarray]] = []
        self.master_basis: Basis | None = None
        self.master_signature: str | None = None
        self.monolithic: dict[str, Basis] = {}


def _digest(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


class _Block:
    def __init__(self, key, cols, A_b, rlo, rhi, lo, hi, cost, L_b, options, cache: BlockCache):
        self.key = key
        self.cols = cols
        self.cost = cost
        self.L = L_b                # csc (linking rows x block cols) or None
        self.solver = SimplexSolver(A_b, rlo, rhi, lo, hi, cost, options)
        self.cache = cache
        self.iterations = 0

    def price(self, cost):
        c = self.cache
        if c.last is not None and c.last_cost is not None and np.array_equal(cost, c.last_cost):
            return c.last
        self.solver.set_cost(cost)
        res = self.solver.solve(c.basis)
        self.iterations += res.iterations
        if res.status != INFEASIBLE:
            c.basis = res.basis
        c.last_cost = np.array(cost, copy=True)
        c.last = res
        return res


def block_partition(A: sp.csr_matrix, block: np.ndarray):
    """Classify rows: returns (row_block, linking_mask); row_block is -1 for linking rows."""
    m = A.shape[0]
    rows = np.repeat(np.arange(m), np.diff(A.indptr))
    lab = block[A.indices]
    big = np.iinfo(np.int64).max
    rmin = np.full(m, big, dtype=np.int64)
    rmax = np.full(m, -big, dtype=np.int64)
    np.minimum.at(rmin, rows, lab)
    np.maximum.at(rmax, rows, lab)
    single = (rmin == rmax) & (rmin >= 0)
    row_block = np.where(single, rmin, -1)
    return row_block, ~single


def solve_structured(A, rlo, rhi, lo, hi, cost, block, options: SimplexOptions,
                     warm: WarmStart | None = None, max_rounds: int = 2000) -> StructuredResult:
    """Solve a reduced LP by exploiting its block structure."""
    A = sp.csr_matrix(A)
    m, n = A.shape
    warm = warm if warm is not None else WarmStart()
    row_block, linking = block_partition(A, block)
    link_rows = np.flatnonzero(linking)
    nl = link_rows.size

    master_cols = np.flatnonzero(block < 0)
    labels = np.unique(block[block >= 0])
    col_order = np.argsort(block, kind="stable")
    col_bounds = np.searchsorted(block[col_order], labels, side="left"), \
        np.searchsorted(block[col_order], labels, side="right")
    blk_rows_sorted = np.argsort(row_block, kind="stable")
    rb_sorted = row_block[blk_rows_sorted]

    A_csc = A.tocsc()
    L = A[link_rows].tocsc() if nl else None

    blocks: list[_Block] = []
    for q, b in enumerate(labels):
        cols = col_order[col_bounds[0][q]:col_bounds[1][q]]
        r0, r1 = np.searchsorted(rb_sorted, b, "left"), np.searchsorted(rb_sorted, b, "right")
        rows = blk_rows_sorted[r0:r1]
        A_b = A_csc[:, cols][rows, :] if rows.size else sp.csc_matrix((0, cols.size))
        L_b = L[:, cols] if nl else None
        if L_b is not None and L_b.nnz == 0:
            L_b = None
        A_b = sp.csc_matrix(A_b)
        key = _digest(np.asarray([b]), cols, rows, A_b.indptr, A_b.indices, A_b.data,
                      rlo[rows], rhi[rows], lo[cols], hi[cols])
        cache = warm.blocks.setdefault(key, BlockCache())
        blocks.append(_Block(key, cols, A_b, rlo[rows], rhi[rows], lo[cols], hi[cols],
                             cost[cols], L_b, options, cache))

    x = np.zeros(n)
    iterations = 0
    linked = [blk for blk in blocks if blk.L is not None]
    unlinked = [blk for blk in blocks if blk.L is None]

    # blocks that do not touch linking rows are solved on their own
    for blk in unlinked:
        res = blk.price(blk.cost)
        if res.status == INFEASIBLE:
            return StructuredResult(INFEASIBLE, x, iterations + blk.iterations, blocks=len(blocks), linking_rows=nl)
        if res.status == UNBOUNDED:
            ray = np.zeros(n)
            ray[blk.cols] = res.ray
            return StructuredResult(UNBOUNDED, x, iterations + blk.iterations, blocks=len(blocks),
                                    linking_rows=nl, ray=ray)
        x[blk.cols] = res.x
    iterations += sum(blk.iterations for blk in unlinked)

    # master columns that sit in no row at all
    if nl == 0:
        for j in master_cols:
            xj, unb = _best_bound(lo[j], hi[j], cost[j])
            if unb:
                ray = np.zeros(n)
                ray[j] = -np.sign(cost[j])
                return StructuredResult(UNBOUNDED, x, iterations, blocks=len(blocks), ray=ray)
            x[j] = xj
        return StructuredResult(OPTIMAL, x, iterations, blocks=len(blocks), linking_rows=0)

    dw = _DantzigWolfe(linked, L, rlo[link_rows], rhi[link_rows], master_cols, lo, hi, cost,
                       options, warm, max_rounds)
    status, xm, ray = dw.run()
    iterations += dw.iterations + sum(blk.iterations for blk in linked)
    if status == OPTIMAL:
        for blk, xb in zip(linked, dw.block_values()):
            x[blk.cols] = xb
        x[master_cols] = xm
    full_ray = None
    if status == UNBOUNDED and ray is not None:
        full_ray = np.zeros(n)
        full_ray[master_cols] = ray[: master_cols.size]
    return StructuredResult(status, x, iterations, rounds=dw.rounds, blocks=len(blocks),
                            linking_rows=nl, ray=full_ray)


def _best_bound(lo, hi, c):
    if c > 0:
        return lo, not np.isfinite(lo)
    if c < 0:
        return hi, not np.isfinite(hi)
    if np.isfinite(lo):
        return lo, False
    if np.isfinite(hi):
        return hi, False
    return 0.0, False


class _DantzigWolfe:
    def __init__(self, blocks, L, l_lo, l_hi, master_cols, lo, hi, cost, options, warm, max_rounds):
        self.blocks = blocks
        self.L = L
        self.l_lo, self.l_hi = l_lo, l_hi
        self.nl = l_lo.size
        self.nb = len(blocks)
        self.mcols = master_cols
        self.m_lo, self.m_hi, self.m_cost = lo[master_cols], hi[master_cols], cost[master_cols]
        self.Lm = L[:, master_cols] if master_cols.size else sp.csc_matrix((self.nl, 0))
        self.options = options
        self.warm = warm
        self.max_rounds = max_rounds
        self.iterations = 0
        self.rounds = 0
        # column pool: (block index, is_ray, vector, cost, linking-row image)
        self.pool_block: list[int] = []
        self.pool_ray: list[bool] = []
        self.pool_vec: list[np.ndarray] = []
        self.pool_cost: list[float] = []
        self.pool_img: list[np.ndarray] = []
        self.lam: np.ndarray | None = None

    # -- column pool --------------------------------------------------------
    def _add(self, q, vec, is_ray):
        blk = self.blocks[q]
        img = blk.L @ vec
        self.pool_block.append(q)
        self.pool_ray.append(is_ray)
        self.pool_vec.append(np.array(vec, copy=True))
        self.pool_cost.append(float(blk.cost @ vec))
        self.pool_img.append(img)
        self.warm.pool.append((blk.key, is_ray, self.pool_vec[-1]))

    def _master(self):
        nm = self.mcols.size
        k = len(self.pool_vec)
        nl, nb = self.nl, self.nb
        img = np.column_stack(self.pool_img) if k else np.zeros((nl, 0))
        top = sp.hstack([self.Lm, sp.csc_matrix(img)], format="csc")
        conv_rows = np.array([q for q, r in zip(self.pool_block, self.pool_ray) if not r], dtype=np.int64)
        conv_cols = np.array([nm + j for j, r in enumerate(self.pool_ray) if not r], dtype=np.int64)
        bottom = sp.csc_matrix((np.ones(conv_rows.size), (conv_rows, conv_cols)), shape=(nb, nm + k))
        M = sp.vstack([top, bottom], format="csc")
        lo = np.concatenate([self.m_lo, np.zeros(k)])
        hi = np.concatenate([self.m_hi, np.full(k, np.inf)])
        c = np.concatenate([self.m_cost, np.asarray(self.pool_cost)])
        rlo = np.concatenate([self.l_lo, np.ones(nb)])
        rhi = np.concatenate([self.l_hi, np.ones(nb)])
        return SimplexSolver(M, rlo, rhi, lo, hi, c, self.options)

    def _crash(self, solver: SimplexSolver) -> Basis:
        """Linking logicals plus the first proposal of every block in the basis."""
        nm, nl = self.mcols.size, self.nl
        n, m = solver.n, solver.m
        first = {}
        for j, (q, r) in enumerate(zip(self.pool_block, self.pool_ray)):
            if not r and q not in first:
                first[q] = nm + j
        basis = np.concatenate([n + np.arange(nl), [first[q] for q in range(self.nb)]]).astype(np.int64)
        vstat = np.empty(n + m, dtype=np.int64)
        lo, hi = solver.lo[:n], solver.hi[:n]
        vstat[:n] = np.where(np.isfinite(lo), AT_LO, np.where(np.isfinite(hi), AT_HI, FREE))
        vstat[n:] = AT_LO
        vstat[basis] = BASIC
        return Basis(basis, vstat)

    @staticmethod
    def _extend(basis: Basis, n_old: int, n_new: int, solver: SimplexSolver) -> Basis:
        add = n_new - n_old
        b = basis.basis.copy()
        b[b >= n_old] += add
        lo = solver.lo[n_old:n_new]
        hi = solver.hi[n_old:n_new]
        new_stat = np.where(np.isfinite(lo), AT_LO, np.where(np.isfinite(hi), AT_HI, FREE))
        vstat = np.concatenate([basis.vstat[:n_old], new_stat, basis.vstat[n_old:]])
        return Basis(b, vstat)

    # -- main loop ----------------------------------------------------------
    def run(self):
        opt = self.options
        # seed the pool: columns from earlier solves of identical blocks, then
        # one proposal for every block still lacking a point
        index = {blk.key: q for q, blk in enumerate(self.blocks)}
        old_pool, self.warm.pool = self.warm.pool, []
        has_point = np.zeros(self.nb, dtype=bool)
        for key, is_ray, vec in old_pool:
            q = index.get(key)
            if q is not None:
                self._add_cached(q, vec, is_ray)
                self.warm.pool.append((key, is_ray, vec))
                has_point[q] |= not is_ray
        for q, blk in enumerate(self.blocks):
            if not has_point[q]:
                res = blk.price(blk.cost)
                if res.status == INFEASIBLE:
                    return INFEASIBLE, None, None
                self._add(q, res.x, False)
                if res.status == UNBOUNDED:
                    self._add(q, res.ray, True)

        basis = None
        n_prev = None
        sig = self._signature()
        while True:
            self.rounds += 1
            if self.rounds > self.max_rounds:
                raise SolverError("decomposition did not converge within the round limit")
            solver = self._master()
            n_now = solver.n
            if basis is None:
                wb = self.warm.master_basis
                if wb is not None and self.warm.master_signature == sig and wb.vstat.size == n_now + solver.m:
                    basis = wb
                else:
                    basis = self._crash(solver)
            elif n_prev != n_now:
                basis = self._extend(basis, n_prev, n_now, solver)
            res = solver.solve(basis)
            self.iterations += res.iterations
            basis = res.basis
            n_prev = n_now
            if res.status == UNBOUNDED:
                return UNBOUNDED, None, res.ray
            y = res.duals
            pi, mu = y[: self.nl], y[self.nl:]
            phase1 = res.status == INFEASIBLE
            added = 0
            for q, blk in enumerate(self.blocks):
                reduced = (0.0 if phase1 else 1.0) * blk.cost - blk.L.T @ pi
                bres = blk.price(reduced)
                if bres.status == INFEASIBLE:
                    return INFEASIBLE, None, None
                if bres.status == UNBOUNDED:
                    self._add(q, bres.ray, True)
                    added += 1
                    continue
                rc = float(reduced @ bres.x) - mu[q]
                if rc < -opt.optimality_tol * (1.0 + abs(mu[q])):
                    self._add(q, bres.x, False)
                    added += 1
            if added == 0:
                if phase1:
                    return INFEASIBLE, None, None
                self.lam = res.x
                self.warm.master_basis = basis
                self.warm.master_signature = self._signature()
                return OPTIMAL, res.x[: self.mcols.size], None

    def _add_cached(self, q, vec, is_ray):
        blk = self.blocks[q]
        self.pool_block.append(q)
        self.pool_ray.append(is_ray)
        self.pool_vec.append(vec)
        self.pool_cost.append(float(blk.cost @ vec))
        self.pool_img.append(blk.L @ vec)

    def _signature(self) -> str:
        keys = "|".join(self.blocks[q].key + ("r" if r else "p") for q, r in zip(self.pool_block, self.pool_ray))
        return _digest(np.frombuffer(keys.encode(), dtype=np.uint8), np.asarray([self.nl, self.nb, self.mcols.size]))

    def block_values(self) -> list[np.ndarray]:
        """Primal block vectors: convex combination of points plus ray multiples."""
        nm = self.mcols.size
        out = [np.zeros(blk.cols.size) for blk in self.blocks]
        for j, (q, vec) in enumerate(zip(self.pool_block, self.pool_vec)):
            w = self.lam[nm + j]
            if w != 0.0:
                out[q] += w * vec
        return out
