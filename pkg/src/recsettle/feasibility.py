"""Largest uniform self-sufficiency floor that keeps the settlement feasible."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from recsettle.errors import InfeasibleSettlement
from recsettle.lp import SolveOptions, WarmStart
from recsettle.metering import MeterSeries
from recsettle.settlement import SettlementResult, _align_contracts, settle


@dataclass
class FeasibilityResult:
    """Outcome of the bisection.

    Attributes:
        s_star: largest floor found feasible (within ``tolerance``).
        probes: number of settlement solves performed.
        result: settlement at ``s_star``.
        baseline: settlement without floors.
        tolerance: bisection resolution.
    """

    s_star: float
    probes: int
    result: SettlementResult
    baseline: SettlementResult
    tolerance: float

    @property
    def ssr(self) -> np.ndarray:
        return self.result.ssr


def with_uniform_floor(series: MeterSeries, contracts, s: float) -> list:
    return [dataclasses.replace(c, ssr_floor=float(s)) for c in _align_contracts(series, contracts)]


def max_uniform_ssr(series: MeterSeries, contracts, K, tolerance: float = 1e-4,
                    max_deviation: float | None = None, options: SolveOptions | None = None) -> FeasibilityResult:
    """Bisection on ``[0, 1]`` for the largest floor shared by every member.

    Feasibility is monotone in the floor (it is a lower bound), so the
    returned ``s_star`` is feasible and ``s_star + tolerance`` is not, unless
    ``s_star == 1``.  Probes share one warm-start token: only the
    self-sufficiency rows change between them.
    """
    warm = WarmStart()
    probes = 0

    def probe(s):
        nonlocal probes
        probes += 1
        try:
            return settle(series, with_uniform_floor(series, contracts, s), K, method="monolithic",
                          max_deviation=max_deviation, options=options, warm_start=warm, diagnose=False)
        except InfeasibleSettlement:
            return None

    baseline = probe(0.0)
    if baseline is None:
        raise InfeasibleSettlement("settlement infeasible even without self-sufficiency floors")
    best, best_s = baseline, 0.0
    top = probe(1.0)
    if top is not None:
        return FeasibilityResult(1.0, probes, top, baseline, tolerance)
    # the unconstrained minimum rate is always feasible: start above it
    lo = float(np.min(baseline.ssr))
    lo = min(max(lo - 1e-9, 0.0), 1.0)
    if lo > 0:
        r = probe(lo)
        if r is not None:
            best, best_s = r, lo
        else:
            lo = 0.0
    hi = 1.0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        r = probe(mid)
        if r is None:
            hi = mid
        else:
            lo, best, best_s = mid, r, mid
    return FeasibilityResult(best_s, probes, best, baseline, tolerance)
