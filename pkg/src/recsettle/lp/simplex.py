"""Bounded-variable revised primal simplex.

Computational form: structural columns ``x`` (n) plus one logical per row
``s = A x`` (m), so the constraint system is ``[A, -I] (x, s) = 0`` and every
variable, logical or structural, carries its own ``[lo, hi]`` box.  Phase 1
minimises the sum of bound violations of basic variables (composite pricing,
no artificial big-M column); phase 2 minimises the true cost.

Pricing is Dantzig (largest reduced cost) and switches to Bland's rule after a
run of consecutive degenerate pivots; ties always go to the lowest variable
index.  The basis inverse is kept explicitly and updated in product form; the
Python driver rebuilds it from scratch every ``refactor_every`` pivots and
whenever the kernel reports an unstable pivot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from recsettle.errors import SolverError

BASIC, AT_LO, AT_HI, FREE = 0, 1, 2, 3

OPTIMAL, INFEASIBLE, UNBOUNDED, REFACTOR, ITER_LIMIT, UNSTABLE = range(6)

# indices into the kernel's persistent integer state vector
_ITERS, _DEGEN_RUN, _BLAND, _ENTER, _DIR, _PHASE = range(6)


@dataclass
class SimplexOptions:
    feasibility_tol: float = 1e-7
    optimality_tol: float = 1e-7
    harris_tol: float = 1e-9
    pivot_tol: float = 1e-9
    breakdown_tol: float = 1e-10
    refactor_every: int = 100
    bland_after: int = 1000
    max_iterations: int = 1_000_000


@dataclass
class Basis:
    """Warm-start information: basic positions and the status of every column."""

    basis: np.ndarray
    vstat: np.ndarray

    def copy(self) -> "Basis":
        return Basis(self.basis.copy(), self.vstat.copy())


@dataclass
class KernelResult:
    status: int
    x: np.ndarray
    activity: np.ndarray
    duals: np.ndarray
    basis: Basis
    iterations: int
    ray: np.ndarray | None = None
    objective: float = float("nan")
    extra: dict = field(default_factory=dict)


@numba.njit(cache=True)
def _kernel(m, n, Ap, Ai, Ax, cost, lo, hi, basis, vstat, x, Binv, y, w, cB,
            state, max_pivots, max_iter, feas_tol, opt_tol, harris_tol, piv_tol,
            bland_after):
    total = n + m
    inf = np.inf
    pivots = 0
    while True:
        if state[_ITERS] >= max_iter:
            return ITER_LIMIT
        if pivots >= max_pivots:
            return REFACTOR

        # phase selection and basic costs
        infeas = 0.0
        for p in range(m):
            j = basis[p]
            v = x[j]
            if v < lo[j] - feas_tol:
                cB[p] = -1.0
                infeas += lo[j] - v
            elif v > hi[j] + feas_tol:
                cB[p] = 1.0
                infeas += v - hi[j]
            else:
                cB[p] = 0.0
        phase = 1 if infeas > 0.0 else 2
        if phase == 2:
            for p in range(m):
                cB[p] = cost[basis[p]]
        state[_PHASE] = phase

        # duals y = cB^T B^-1
        for k in range(m):
            y[k] = 0.0
        for p in range(m):
            c = cB[p]
            if c != 0.0:
                for k in range(m):
                    y[k] += c * Binv[p, k]

        # pricing
        bland = state[_BLAND] == 1
        q = -1
        dirq = 0
        best = 0.0
        for j in range(total):
            s = vstat[j]
            if s == BASIC or lo[j] == hi[j]:
                continue
            if j < n:
                d = cost[j] if phase == 2 else 0.0
                for k in range(Ap[j], Ap[j + 1]):
                    d -= Ax[k] * y[Ai[k]]
            else:
                d = y[j - n]
            if (s == AT_LO or s == FREE) and d < -opt_tol:
                mag = -d
                dr = 1
            elif (s == AT_HI or s == FREE) and d > opt_tol:
                mag = d
                dr = -1
            else:
                continue
            if bland:
                q = j
                dirq = dr
                break
            if mag > best:
                best = mag
                q = j
                dirq = dr
        if q < 0:
            return INFEASIBLE if phase == 1 else OPTIMAL

        # FTRAN: w = B^-1 a_q
        for p in range(m):
            w[p] = 0.0
        if q < n:
            for k in range(Ap[q], Ap[q + 1]):
                i = Ai[k]
                a = Ax[k]
                for p in range(m):
                    w[p] += Binv[p, i] * a
        else:
            i = q - n
            for p in range(m):
                w[p] = -Binv[p, i]

        tq = hi[q] - lo[q]

        # ratio test, pass 1: Harris bound with relaxed tolerances
        tmax = inf
        tmin_exact = inf
        for p in range(m):
            delta = -dirq * w[p]
            if abs(delta) < piv_tol:
                continue
            j = basis[p]
            v = x[j]
            lb = lo[j]
            ub = hi[j]
            if phase == 1:
                if v < lb - feas_tol:
                    ub = lb
                    lb = -inf
                elif v > ub + feas_tol:
                    lb = ub
                    ub = inf
            if delta < 0.0:
                if lb == -inf:
                    continue
                r = (v - lb + harris_tol) / -delta
                re = (v - lb) / -delta
            else:
                if ub == inf:
                    continue
                r = (ub - v + harris_tol) / delta
                re = (ub - v) / delta
            if r < tmax:
                tmax = r
            if re < tmin_exact:
                tmin_exact = re

        if tq <= tmax and tq < inf:
            # bound flip of the entering variable, no basis change
            t = tq
            for p in range(m):
                if w[p] != 0.0:
                    x[basis[p]] -= dirq * w[p] * t
            if vstat[q] == AT_LO:
                vstat[q] = AT_HI
                x[q] = hi[q]
            else:
                vstat[q] = AT_LO
                x[q] = lo[q]
            state[_ITERS] += 1
            state[_DEGEN_RUN] = 0
            state[_BLAND] = 0
            continue

        if tmax == inf:
            if phase == 1:
                return UNSTABLE
            state[_ENTER] = q
            state[_DIR] = dirq
            return UNBOUNDED

        # pass 2: choose the leaving row
        r_sel = -1
        t_sel = inf
        best_abs = 0.0
        target = 0.0
        for p in range(m):
            delta = -dirq * w[p]
            if abs(delta) < piv_tol:
                continue
            j = basis[p]
            v = x[j]
            lb = lo[j]
            ub = hi[j]
            if phase == 1:
                if v < lb - feas_tol:
                    ub = lb
                    lb = -inf
                elif v > ub + feas_tol:
                    lb = ub
                    ub = inf
            if delta < 0.0:
                if lb == -inf:
                    continue
                re = (v - lb) / -delta
                bound = lb
            else:
                if ub == inf:
                    continue
                re = (ub - v) / delta
                bound = ub
            if bland:
                if re <= tmin_exact + 1e-12 and (r_sel < 0 or j < basis[r_sel]):
                    r_sel = p
                    t_sel = re
                    target = bound
            elif re <= tmax:
                a = abs(delta)
                if a > best_abs or (a == best_abs and j < basis[r_sel]):
                    best_abs = a
                    r_sel = p
                    t_sel = re
                    target = bound
        if r_sel < 0:
            return UNSTABLE
        t = t_sel if t_sel > 0.0 else 0.0

        # stability check: recompute the pivot from row r of B^-1
        alpha = 0.0
        if q < n:
            for k in range(Ap[q], Ap[q + 1]):
                alpha += Binv[r_sel, Ai[k]] * Ax[k]
        else:
            alpha = -Binv[r_sel, q - n]
        if abs(alpha - w[r_sel]) > 1e-8 * (1.0 + abs(w[r_sel])):
            return UNSTABLE

        # primal update
        leave = basis[r_sel]
        for p in range(m):
            if w[p] != 0.0:
                x[basis[p]] -= dirq * w[p] * t
        x[q] += dirq * t
        x[leave] = target
        if target == lo[leave]:
            vstat[leave] = AT_LO
        else:
            vstat[leave] = AT_HI
        vstat[q] = BASIC
        basis[r_sel] = q

        # product-form update of the explicit inverse
        piv = w[r_sel]
        for k in range(m):
            Binv[r_sel, k] /= piv
        for p in range(m):
            wp = w[p]
            if p != r_sel and wp != 0.0:
                for k in range(m):
                    Binv[p, k] -= wp * Binv[r_sel, k]

        pivots += 1
        state[_ITERS] += 1
        if t <= 1e-12:
            state[_DEGEN_RUN] += 1
            if state[_DEGEN_RUN] >= bland_after:
                state[_BLAND] = 1
        else:
            state[_DEGEN_RUN] = 0
            state[_BLAND] = 0


class SimplexSolver:
    """Solves ``min c.x  s.t.  row_lo <= A x <= row_hi,  lo <= x <= hi``.

    ``A`` is any scipy sparse matrix; it is converted to CSC once.  The same
    instance can be re-solved after :meth:`set_cost` with a warm start.
    """

    def __init__(self, A, row_lo, row_hi, lo, hi, cost, options: SimplexOptions | None = None):
        self.options = options or SimplexOptions()
        A = sp.csc_matrix(A, dtype=float)
        A.sort_indices()
        self.m, self.n = A.shape
        self.A = A
        self._Ap = A.indptr.astype(np.int64)
        self._Ai = A.indices.astype(np.int64)
        self._Ax = A.data.astype(np.float64)
        self.lo = np.concatenate([np.asarray(lo, float), np.asarray(row_lo, float)])
        self.hi = np.concatenate([np.asarray(hi, float), np.asarray(row_hi, float)])
        if np.any(self.lo > self.hi):
            raise SolverError("inconsistent bounds passed to the simplex")
        self.cost = np.zeros(self.n + self.m)
        self.cost[: self.n] = np.asarray(cost, float)

    def set_cost(self, cost):
        self.cost[: self.n] = np.asarray(cost, float)

    # -- basis helpers -------------------------------------------------------
    def _cold_basis(self) -> Basis:
        n, m = self.n, self.m
        basis = np.arange(n, n + m, dtype=np.int64)
        vstat = np.empty(n + m, dtype=np.int64)
        lo, hi = self.lo[:n], self.hi[:n]
        vstat[:n] = np.where(np.isfinite(lo), AT_LO, np.where(np.isfinite(hi), AT_HI, FREE))
        vstat[n:] = BASIC
        return Basis(basis, vstat)

    def _nonbasic_values(self, vstat) -> np.ndarray:
        x = np.zeros(self.n + self.m)
        atlo = vstat == AT_LO
        athi = vstat == AT_HI
        x[atlo] = self.lo[atlo]
        x[athi] = self.hi[athi]
        return x

    def _check_basis(self, b: Basis) -> bool:
        n, m = self.n, self.m
        if b.basis.shape != (m,) or b.vstat.shape != (n + m,):
            return False
        if np.unique(b.basis).size != m or np.any(b.basis < 0) or np.any(b.basis >= n + m):
            return False
        if np.count_nonzero(b.vstat == BASIC) != m or np.any(b.vstat[b.basis] != BASIC):
            return False
        nb = b.vstat != BASIC
        bad = ((b.vstat == AT_LO) & ~np.isfinite(self.lo)) | ((b.vstat == AT_HI) & ~np.isfinite(self.hi))
        bad |= (b.vstat == FREE) & (np.isfinite(self.lo) | np.isfinite(self.hi))
        return not np.any(bad & nb)

    def _invert(self, basis: np.ndarray) -> np.ndarray | None:
        """Explicit inverse of the basis matrix, exploiting its logical columns.

        Basic logicals are negative unit columns, so only the square block of
        structural basic columns on the rows without a basic logical has to be
        inverted densely; the remaining blocks follow in closed form.
        """
        m, n = self.m, self.n
        if m == 0:
            return np.zeros((0, 0))
        structural = basis < n
        ps = np.flatnonzero(structural)
        pl = np.flatnonzero(~structural)
        lrows = basis[pl] - n
        covered = np.zeros(m, dtype=bool)
        covered[lrows] = True
        nrows = np.flatnonzero(~covered)
        Binv = np.zeros((m, m))
        Binv[pl, lrows] = -1.0
        if ps.size:
            As = self.A[:, basis[ps]].tocsr()
            core = As[nrows].toarray()
            try:
                lu = scipy.linalg.lu_factor(core, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return None
            if np.any(np.abs(np.diag(lu[0])) <= self.options.breakdown_tol):
                return None
            M = scipy.linalg.lu_solve(lu, np.eye(ps.size), check_finite=False)
            Binv[np.ix_(ps, nrows)] = M
            if pl.size:
                Binv[np.ix_(pl, nrows)] = As[lrows] @ M
            # cheap accuracy probe on one deterministic right-hand side
            r = np.linspace(1.0, 2.0, ps.size)
            resid = np.abs(core @ (M @ r) - r).max()
            if not np.isfinite(resid) or resid > 1e-6 * (1.0 + np.abs(core).max()):
                return None
        return np.ascontiguousarray(Binv)

    def _basic_values(self, x, basis, vstat, Binv):
        n = self.n
        xs = np.where(vstat[:n] != BASIC, x[:n], 0.0)
        rhs = self.A @ xs
        nbl = np.flatnonzero(vstat[n:] != BASIC)
        rhs[nbl] -= x[n + nbl]
        x[basis] = -(Binv @ rhs)

    # -- main entry ----------------------------------------------------------
    def solve(self, warm: Basis | None = None) -> KernelResult:
        opt = self.options
        m, n = self.m, self.n
        b = warm.copy() if warm is not None and self._check_basis(warm) else self._cold_basis()
        Binv = self._invert(b.basis)
        if Binv is None:
            if warm is None:
                raise SolverError("logical basis could not be inverted")
            b = self._cold_basis()
            Binv = self._invert(b.basis)
        x = self._nonbasic_values(b.vstat)
        self._basic_values(x, b.basis, b.vstat, Binv)

        y = np.zeros(m)
        w = np.zeros(m)
        cB = np.zeros(m)
        state = np.zeros(6, dtype=np.int64)
        unstable_in_a_row = 0
        while True:
            code = _kernel(m, n, self._Ap, self._Ai, self._Ax, self.cost, self.lo, self.hi,
                           b.basis, b.vstat, x, Binv, y, w, cB, state,
                           opt.refactor_every, opt.max_iterations, opt.feasibility_tol,
                           opt.optimality_tol, opt.harris_tol, opt.pivot_tol, opt.bland_after)
            if code in (REFACTOR, UNSTABLE):
                if code == UNSTABLE:
                    unstable_in_a_row += 1
                    if unstable_in_a_row > 2:
                        raise SolverError("numerical breakdown: pivot unstable after refactorization")
                else:
                    unstable_in_a_row = 0
                Binv = self._invert(b.basis)
                if Binv is None:
                    raise SolverError("numerical breakdown: basis became singular")
                nb = b.vstat != BASIC
                x[nb] = self._nonbasic_values(b.vstat)[nb]
                self._basic_values(x, b.basis, b.vstat, Binv)
                continue
            if code in (OPTIMAL, INFEASIBLE):
                # confirm on a fresh factorization so drift cannot fake optimality
                fresh = self._invert(b.basis)
                if fresh is None:
                    raise SolverError("numerical breakdown: final basis singular")
                x_chk = x.copy()
                self._basic_values(x_chk, b.basis, b.vstat, fresh)
                if np.abs(x_chk - x).max(initial=0.0) > opt.feasibility_tol * 0.1:
                    Binv, x = fresh, x_chk
                    continue
            break
        if code == ITER_LIMIT:
            raise SolverError(f"iteration limit {opt.max_iterations} reached")
        ray = None
        if code == UNBOUNDED:
            q, dirq = int(state[_ENTER]), int(state[_DIR])
            ray = np.zeros(n + m)
            ray[q] = dirq
            ray[b.basis] = -dirq * w
        act = self.A @ x[:n]
        return KernelResult(
            status={OPTIMAL: OPTIMAL, INFEASIBLE: INFEASIBLE, UNBOUNDED: UNBOUNDED}[code],
            x=x[:n].copy(), activity=act, duals=y.copy(), basis=b,
            iterations=int(state[_ITERS]), ray=None if ray is None else ray[:n],
            objective=float(self.cost[:n] @ x[:n]),
        )
