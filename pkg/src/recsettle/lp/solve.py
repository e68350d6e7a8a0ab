"""Public solve entry point: presolve, structured simplex, postsolve."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from recsettle.errors import ModelError, SolverError
from recsettle.lp.decompose import WarmStart, solve_structured
from recsettle.lp.model import LpModel
from recsettle.lp.presolve import presolve
from recsettle.lp.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, SimplexOptions

_DENSE_LIMIT = 20_000


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class SolveOptions:
    """Solver controls.

    Attributes:
        decomposition: ``"auto"`` exploits the column block labels of the
            model; ``"never"`` solves the reduced problem as one block.
        backend: ``"embedded"`` (default) or ``"scipy-highs"`` for
            cross-checking against an external solver.
        presolve: apply the reversible presolve reductions.
        simplex: tolerances and pivoting controls of the simplex.
        max_rounds: cap on decomposition master rounds.
    """

    decomposition: str = "auto"
    backend: str = "embedded"
    presolve: bool = True
    simplex: SimplexOptions = field(default_factory=SimplexOptions)
    max_rounds: int = 2000


@dataclass
class SolveStatistics:
    rows: int
    columns: int
    nonzeros: int
    iterations: int = 0
    build_seconds: float = 0.0
    solve_seconds: float = 0.0
    presolved_rows: int = 0
    presolved_columns: int = 0
    blocks: int = 0
    linking_rows: int = 0
    rounds: int = 0
    max_bound_violation: float = 0.0
    max_row_violation: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class LpSolution:
    status: Status
    objective: float
    values: np.ndarray
    statistics: SolveStatistics
    warm_start: WarmStart | None = None
    _model: LpModel | None = None

    def __getitem__(self, handle):
        return self.values[handle]

    def value(self, handle) -> float:
        return float(self.values[handle])

    def by_name(self) -> dict[str, float]:
        if self._model is None:
            return {}
        return {self._model.variable_name(j): float(v) for j, v in enumerate(self.values)}


def solve(model: LpModel, options: SolveOptions | None = None,
          warm_start: WarmStart | None = None) -> LpSolution:
    """Solve ``model`` to optimality.

    Infeasible and unbounded models are reported through ``status``; only a
    numerical breakdown raises :class:`~recsettle.errors.SolverError`.

    Args:
        model: the LP to solve (not modified).
        options: solver controls, defaults to :class:`SolveOptions`.
        warm_start: token from an earlier :class:`LpSolution` of a model with
            identical block structure; reused bases and columns only affect speed.
    """
    options = options or SolveOptions()
    arr = model.arrays()
    stats = SolveStatistics(rows=model.num_constraints, columns=model.num_variables,
                            nonzeros=model.num_nonzeros, build_seconds=model.build_seconds)
    t0 = time.perf_counter()
    if options.backend == "scipy-highs":
        sol = _solve_highs(arr, stats)
    elif options.backend == "embedded":
        sol = _solve_embedded(arr, options, stats, warm_start)
    else:
        raise ModelError(f"unknown backend {options.backend!r}")
    stats.solve_seconds = time.perf_counter() - t0
    sol._model = model
    if sol.status == Status.OPTIMAL:
        x = sol.values
        stats.max_bound_violation = float(max(np.max(arr.lo - x, initial=0.0), np.max(x - arr.hi, initial=0.0)))
        act = arr.A @ x
        stats.max_row_violation = float(max(np.max(arr.row_lo - act, initial=0.0),
                                            np.max(act - arr.row_hi, initial=0.0)))
    return sol


def _solve_embedded(arr, options: SolveOptions, stats: SolveStatistics, warm) -> LpSolution:
    n = arr.lo.size
    warm = warm if warm is not None else WarmStart()
    if options.presolve:
        pre = presolve(arr, feas_tol=options.simplex.feasibility_tol * 1e-2)
        if pre.infeasible:
            return LpSolution(Status.INFEASIBLE, float("nan"), np.full(n, np.nan), stats, warm)
    else:
        pre = _identity_presolve(arr)
    stats.presolved_rows, stats.presolved_columns = pre.A.shape
    block = pre.block
    if options.decomposition == "never":
        block = np.zeros_like(block)
        if pre.A.shape[0] > _DENSE_LIMIT:
            raise SolverError(f"{pre.A.shape[0]} rows exceed the single-basis limit; enable decomposition")
    elif options.decomposition != "auto":
        raise ModelError(f"unknown decomposition mode {options.decomposition!r}")
    res = solve_structured(pre.A, pre.row_lo, pre.row_hi, pre.lo, pre.hi, pre.cost, block,
                           options.simplex, warm, options.max_rounds)
    stats.iterations = res.iterations
    stats.blocks = res.blocks
    stats.linking_rows = res.linking_rows
    stats.rounds = res.rounds
    if res.status == INFEASIBLE:
        return LpSolution(Status.INFEASIBLE, float("nan"), np.full(n, np.nan), stats, warm)
    if res.status == UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, float("-inf"), np.full(n, np.nan), stats, warm)
    assert res.status == OPTIMAL
    x = pre.expand(res.x)
    objective = float(arr.cost @ x) + arr.offset
    return LpSolution(Status.OPTIMAL, objective, x, stats, warm)


def _identity_presolve(arr):
    from recsettle.lp.presolve import Presolved

    n = arr.lo.size
    return Presolved(False, "", arr.A.tocsr(), arr.row_lo, arr.row_hi, arr.lo, arr.hi, arr.cost,
                     arr.block, arr.offset, np.arange(arr.A.shape[0]), np.arange(n), n, [])


def _solve_highs(arr, stats: SolveStatistics) -> LpSolution:
    """Cross-check path through scipy's HiGHS interface (never used by acceptance)."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    n = arr.lo.size
    cons = [LinearConstraint(arr.A, arr.row_lo, arr.row_hi)] if arr.A.shape[0] else []
    res = milp(arr.cost, constraints=cons, bounds=Bounds(arr.lo, arr.hi))
    if res.status == 0:
        x = np.asarray(res.x)
        return LpSolution(Status.OPTIMAL, float(arr.cost @ x) + arr.offset, x, stats)
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, float("nan"), np.full(n, np.nan), stats)
    if res.status == 3:
        return LpSolution(Status.UNBOUNDED, float("-inf"), np.full(n, np.nan), stats)
    raise SolverError(f"external solver failed: {res.message}")
