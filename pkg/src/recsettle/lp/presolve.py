"""Presolve: cheap, exactly reversible reductions applied before the simplex.

Reductions, iterated to a fixed point:

* fixed columns (``lo == hi``) are substituted out;
* empty rows are checked and dropped;
* singleton rows become variable bounds;
* doubleton equality rows ``a_j x_j + a_k x_k = b`` eliminate ``x_j``;
* an equality row holding a column singleton ``x_j`` absorbs that column and
  becomes a ranged row on the remaining variables;
* rows whose activity range already lies inside their bounds are dropped.

Every elimination is recorded so :meth:`Presolved.expand` can rebuild the full
primal vector from the reduced one.  Column block labels are respected: an
elimination never merges columns of two different blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from recsettle.lp.model import ModelArrays

_FIX_TOL = 1e-12
_DROP_TOL = 1e-12


@dataclass
class Presolved:
    infeasible: bool
    reason: str
    A: sp.csr_matrix            # reduced matrix (kept rows x kept cols)
    row_lo: np.ndarray
    row_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    cost: np.ndarray
    block: np.ndarray
    offset: float               # model offset plus cost contributed by eliminated columns
    keep_rows: np.ndarray
    keep_cols: np.ndarray
    n_original: int = 0
    _ops: list = field(default_factory=list)

    def expand(self, x_reduced: np.ndarray) -> np.ndarray:
        """Full primal vector from a solution of the reduced problem."""
        x = np.zeros(self.n_original)
        x[self.keep_cols] = x_reduced
        for op in reversed(self._ops):
            kind = op[0]
            if kind == "fix":
                _, cols, vals = op
                x[cols] = vals
            elif kind == "subst":
                _, j, k, alpha, beta = op
                x[j] = alpha * x[k] + beta
            else:  # "absorb": x_j = (b - row . x) / a_j
                _, j, rows, b, aj = op
                x[j] = (b - rows @ x) / aj
        return x


def presolve(arr: ModelArrays, feas_tol: float = 1e-9, max_passes: int = 50) -> Presolved:
    """Reduce ``arr``; ``feas_tol`` decides when crossing bounds prove infeasibility."""
    A = arr.A.tocsr().astype(float)
    A.sort_indices()
    m, n = A.shape
    lo, hi = arr.lo.astype(float).copy(), arr.hi.astype(float).copy()
    rlo, rhi = arr.row_lo.astype(float).copy(), arr.row_hi.astype(float).copy()
    cost = arr.cost.astype(float).copy()
    block = arr.block.astype(np.int64)
    row_alive = np.ones(m, dtype=bool)
    col_alive = np.ones(n, dtype=bool)
    offset = float(arr.offset)
    ops: list = []

    def fail(reason):
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return Presolved(True, reason, sp.csr_matrix((0, 0)), z, z, z, z, z, zi, offset, zi, zi, n, ops)

    def substitute(T: sp.spmatrix, t0: np.ndarray):
        """Apply ``x = T z + t0`` to matrix, row bounds, and objective."""
        nonlocal A, cost, offset
        shift = A @ t0
        rlo[:] -= shift
        rhi[:] -= shift
        offset += float(cost @ t0)
        cost = T.T @ cost
        A = (A @ T).tocsr()
        A.eliminate_zeros()
        A.sort_indices()

    for _ in range(max_passes):
        changed = False

        # -- fixed columns ---------------------------------------------------
        with np.errstate(invalid="ignore"):
            fixed = col_alive & np.isfinite(lo) & (hi - lo <= _FIX_TOL * np.maximum(1.0, np.abs(lo)))
        if np.any(fixed):
            cols = np.flatnonzero(fixed)
            vals = lo[cols].copy()
            keep = np.ones(n)
            keep[cols] = 0.0
            t0 = np.zeros(n)
            t0[cols] = vals
            substitute(sp.diags(keep, format="csr"), t0)
            ops.append(("fix", cols, vals))
            col_alive[cols] = False
            changed = True

        A_live = _restrict(A, row_alive, col_alive)
        row_nnz = np.diff(A_live.indptr)

        # -- empty rows --------------------------------------------------------
        empty = row_alive & (row_nnz == 0)
        if np.any(empty):
            viol = np.maximum(rlo[empty], -rhi[empty])
            if np.any(viol > feas_tol * np.maximum(1.0, np.abs(np.where(np.isfinite(rlo[empty]), rlo[empty], 0.0)))):
                bad = np.flatnonzero(empty)[np.argmax(viol)]
                return fail(f"row {bad} cannot be satisfied once its variables are fixed")
            row_alive &= ~empty
            changed = True

        # -- singleton rows -> bounds ----------------------------------------
        single = row_alive & (row_nnz == 1)
        if np.any(single):
            r_idx = np.flatnonzero(single)
            c_idx = A_live.indices[A_live.indptr[r_idx]]
            a = A_live.data[A_live.indptr[r_idx]]
            with np.errstate(divide="ignore", invalid="ignore"):
                b1, b2 = rlo[r_idx] / a, rhi[r_idx] / a
            new_lo = _nan_to(np.where(a > 0, b1, b2), -np.inf)
            new_hi = _nan_to(np.where(a > 0, b2, b1), np.inf)
            np.maximum.at(lo, c_idx, new_lo)
            np.minimum.at(hi, c_idx, new_hi)
            row_alive[r_idx] = False
            changed = True
            err = _check_crossing(lo, hi, col_alive, feas_tol)
            if err is not None:
                return fail(err)
            continue

        # -- doubleton equality rows -> substitution -------------------------
        eq = row_alive & (row_nnz == 2) & (rlo == rhi)
        if np.any(eq):
            r_idx = np.flatnonzero(eq)
            p = A_live.indptr[r_idx]
            c1, c2 = A_live.indices[p], A_live.indices[p + 1]
            v1, v2 = A_live.data[p], A_live.data[p + 1]
            b1, b2 = block[c1], block[c2]
            ok = (b1 == b2) | (b1 < 0) | (b2 < 0)
            # eliminate the master column when blocks differ, else the larger coefficient
            elim_first = np.where(b1 != b2, b1 < 0, np.abs(v1) >= np.abs(v2))
            j = np.where(elim_first, c1, c2)
            k = np.where(elim_first, c2, c1)
            aj = np.where(elim_first, v1, v2)
            ak = np.where(elim_first, v2, v1)
            r_idx, j, k, aj, ak = r_idx[ok], j[ok], k[ok], aj[ok], ak[ok]
            # one elimination per column and no chains within a pass
            _, first = np.unique(j, return_index=True)
            first = np.sort(first)
            r_idx, j, k, aj, ak = r_idx[first], j[first], k[first], aj[first], ak[first]
            is_j = np.zeros(n, dtype=bool)
            is_j[j] = True
            sel = ~is_j[k]
            r_idx, j, k, aj, ak = r_idx[sel], j[sel], k[sel], aj[sel], ak[sel]
            if r_idx.size:
                alpha = -ak / aj
                beta = rlo[r_idx] / aj
                diag = np.ones(n)
                diag[j] = 0.0
                T = sp.diags(diag, format="csr") + sp.csr_matrix((alpha, (j, k)), shape=(n, n))
                t0 = np.zeros(n)
                t0[j] = beta
                # bounds of x_j become bounds of x_k
                with np.errstate(invalid="ignore"):
                    e1 = (lo[j] - beta) / alpha
                    e2 = (hi[j] - beta) / alpha
                np.maximum.at(lo, k, _nan_to(np.where(alpha > 0, e1, e2), -np.inf))
                np.minimum.at(hi, k, _nan_to(np.where(alpha > 0, e2, e1), np.inf))
                substitute(T.tocsr(), t0)
                ops.append(("subst", j, k, alpha, beta))
                row_alive[r_idx] = False
                col_alive[j] = False
                err = _check_crossing(lo, hi, col_alive, feas_tol)
                if err is not None:
                    return fail(err)
                continue

        # -- equality rows absorbing a column singleton ----------------------
        A_live_csc = A_live.tocsc()
        col_nnz = np.diff(A_live_csc.indptr)
        cand = col_alive & (col_nnz == 1)
        if np.any(cand):
            c_idx = np.flatnonzero(cand)
            r_of = A_live_csc.indices[A_live_csc.indptr[c_idx]]
            a_of = A_live_csc.data[A_live_csc.indptr[c_idx]]
            good = (rlo[r_of] == rhi[r_of]) & (row_nnz[r_of] >= 2)
            c_idx, r_of, a_of = c_idx[good], r_of[good], a_of[good]
            _, first = np.unique(r_of, return_index=True)
            first = np.sort(first)
            c_idx, r_of, a_of = c_idx[first], r_of[first], a_of[first]
            if c_idx.size:
                b = rlo[r_of].copy()
                cj = cost[c_idx]
                # row without the absorbed column
                drop = sp.csr_matrix((np.ones(c_idx.size), (np.arange(c_idx.size), c_idx)),
                                     shape=(c_idx.size, n))
                rows = (A[r_of] - drop.multiply(A[r_of])).tocsr()
                rows.eliminate_zeros()
                cost = cost - rows.T @ (cj / a_of)
                offset += float(np.sum(cj * b / a_of))
                cost[c_idx] = 0.0
                lo_j, hi_j = lo[c_idx], hi[c_idx]
                with np.errstate(invalid="ignore"):
                    e1 = b - a_of * hi_j
                    e2 = b - a_of * lo_j
                rlo[r_of] = _nan_to(np.where(a_of > 0, e1, e2), -np.inf)
                rhi[r_of] = _nan_to(np.where(a_of > 0, e2, e1), np.inf)
                keep = np.ones(n)
                keep[c_idx] = 0.0
                A = (A @ sp.diags(keep, format="csr")).tocsr()
                A.eliminate_zeros()
                A.sort_indices()
                ops.append(("absorb", c_idx, rows, b, a_of))
                col_alive[c_idx] = False
                changed = True
                A_live = _restrict(A, row_alive, col_alive)

        # -- redundant rows --------------------------------------------------
        amin, amax = _activity_bounds(A_live, lo, hi)
        alive_idx = np.flatnonzero(row_alive)
        scale = 1.0 + np.abs(np.where(np.isfinite(rlo), rlo, 0.0)) + np.abs(np.where(np.isfinite(rhi), rhi, 0.0))
        bad = row_alive & ((amax < rlo - feas_tol * scale) | (amin > rhi + feas_tol * scale))
        if np.any(bad):
            return fail(f"row {np.flatnonzero(bad)[0]} cannot be satisfied within variable bounds")
        redundant = row_alive & (amin >= rlo - _DROP_TOL * scale) & (amax <= rhi + _DROP_TOL * scale)
        if np.any(redundant[alive_idx]):
            row_alive &= ~redundant
            changed = True

        if not changed:
            break

    keep_rows = np.flatnonzero(row_alive)
    keep_cols = np.flatnonzero(col_alive)
    Ar = A[keep_rows][:, keep_cols].tocsr()
    Ar.eliminate_zeros()
    Ar.sort_indices()
    hi_k = hi[keep_cols]
    lo_k = lo[keep_cols]
    hi_k = np.maximum(hi_k, lo_k)  # snap crossings inside tolerance
    return Presolved(
        infeasible=False, reason="", A=Ar, row_lo=rlo[keep_rows], row_hi=rhi[keep_rows],
        lo=lo_k, hi=hi_k, cost=cost[keep_cols], block=block[keep_cols], offset=offset,
        keep_rows=keep_rows, keep_cols=keep_cols, n_original=n, _ops=ops,
    )


def _restrict(A: sp.csr_matrix, row_alive, col_alive) -> sp.csr_matrix:
    """Copy of ``A`` with dead rows and columns zeroed (shape unchanged)."""
    coo_rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    mask = row_alive[coo_rows] & col_alive[A.indices]
    out = sp.csr_matrix((A.data[mask], (coo_rows[mask], A.indices[mask])), shape=A.shape)
    out.sort_indices()
    return out


def _nan_to(x, value):
    return np.where(np.isnan(x), value, x)


def _activity_bounds(A: sp.csr_matrix, lo, hi):
    cols = A.indices
    a = A.data
    lo_c, hi_c = lo[cols], hi[cols]
    pmin = np.where(a > 0, lo_c, hi_c)
    pmax = np.where(a > 0, hi_c, lo_c)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    ninf_min = np.bincount(rows, weights=~np.isfinite(pmin), minlength=A.shape[0])
    ninf_max = np.bincount(rows, weights=~np.isfinite(pmax), minlength=A.shape[0])
    fmin = np.bincount(rows, weights=np.where(np.isfinite(pmin), a * pmin, 0.0), minlength=A.shape[0])
    fmax = np.bincount(rows, weights=np.where(np.isfinite(pmax), a * pmax, 0.0), minlength=A.shape[0])
    amin = np.where(ninf_min > 0, -np.inf, fmin)
    amax = np.where(ninf_max > 0, np.inf, fmax)
    return amin, amax


def _check_crossing(lo, hi, col_alive, feas_tol):
    gap = lo - hi
    scale = np.maximum(1.0, np.abs(np.where(np.isfinite(hi), hi, 0.0)))
    bad = col_alive & (gap > feas_tol * scale)
    if np.any(bad):
        return f"bounds of variable {np.flatnonzero(bad)[0]} cross after presolve"
    return None
