"""Brute-force reference settlement for tiny instances.

Keys of the members who can use an allocation (positive net consumption)
are enumerated on a grid of spacing ``step`` inside their tolerance window;
for every grid point the remaining flows follow closed-form rules:

* members without consumption keep their initial key where the key budget
  allows, otherwise their keys are lowered by water-filling so the largest
  downward deviation is as small as possible;
* ``v = min(a, Cn)`` and local sales are assigned greedily to the producers
  with the best local-sale margin.

These rules are the optimal inner choices when local prices never make
buying locally dearer than the retailer nor selling locally cheaper than the
feed-in price; that price regime is checked before use.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from recsettle.errors import OracleRefusal
from recsettle.metering import MeterSeries
from recsettle.settlement import ContractTable, has_ssr_floors

MAX_PERIODS = 2
MAX_HOLDERS = 3
MAX_POINTS = 2_000_000


@dataclass
class OracleResult:
    """Best grid point found.

    Attributes:
        objective: total objective (€) including constant terms.
        keys: best keys, shape ``(T, I)``.
        lipschitz_bound: ``L`` such that the optimum lies within ``L * step``
            of ``objective``.
        points: number of key vectors evaluated.
    """

    objective: float
    keys: np.ndarray
    lipschitz_bound: float
    points: int
    step: float

    @property
    def gap_bound(self) -> float:
        return self.lipschitz_bound * self.step


def grid_search_settle(series: MeterSeries, contracts, K, step: float = 0.01,
                       max_deviation: float | None = None) -> OracleResult:
    """Exhaustive key search on a grid.

    Raises:
        OracleRefusal: more than two periods, more than three key holders in a
            period, self-sufficiency floors, an unsupported price regime, or a
            step that does not divide one.
    """
    K = np.asarray(K, dtype=float)
    T, I = series.T, series.I
    if T > MAX_PERIODS:
        raise OracleRefusal(f"oracle handles at most {MAX_PERIODS} periods, got {T}")
    n_steps = round(1.0 / step) if step > 0 else 0
    if step <= 0 or abs(n_steps * step - 1.0) > 1e-9:
        raise OracleRefusal(f"step {step} must divide 1")
    if has_ssr_floors(series, contracts):
        raise OracleRefusal("oracle does not model self-sufficiency floors")
    ct = ContractTable.build(series, contracts)
    if np.any(ct.local_buy > ct.buy) or np.any(ct.local_sell < ct.sell):
        raise OracleRefusal("oracle needs local_buy <= buy and local_sell >= sell for every member")
    X = ct.tolerance if max_deviation is None else np.full((T, I), float(max_deviation))

    Cn, Pn = series.net_consumption, series.net_production
    total = float((ct.buy * Cn).sum() - (ct.sell * Pn).sum())
    keys = K.copy()
    lipschitz = 0.0
    points = 0
    dev_price = float(ct.deviation.sum())
    margin_v = ct.buy - ct.local_buy            # saving per verified kWh
    margin_y = ct.local_sell - ct.sell          # gain per locally sold kWh
    for t in range(T):
        S = float(Pn[t].sum())
        if S <= 0:
            continue
        holders = np.flatnonzero(Cn[t] > 0)
        if holders.size > MAX_HOLDERS:
            raise OracleRefusal(f"period {t} has {holders.size} key holders (max {MAX_HOLDERS})")
        others = np.flatnonzero(Cn[t] <= 0)
        lo = np.maximum(0.0, K[t] - X[t])
        hi = np.minimum(1.0, K[t] + X[t])
        grids = [_axis(lo[i], hi[i], step, n_steps) for i in holders]
        count = int(np.prod([g.size for g in grids])) if grids else 1
        if count > MAX_POINTS:
            raise OracleRefusal(f"{count} grid points in period {t} exceed the guard {MAX_POINTS}")
        if grids:
            mesh = np.array(list(itertools.product(*grids)), dtype=float).reshape(-1, holders.size)
        else:
            mesh = np.zeros((1, 0))
        budget = 1.0 - mesh.sum(axis=1) - lo[others].sum()
        mesh = mesh[budget >= -1e-12]
        if mesh.shape[0] == 0:
            raise OracleRefusal(f"no grid point satisfies the key budget in period {t}")
        points += mesh.shape[0]
        value, arg, other_keys = _evaluate(mesh, holders, others, K[t], lo, S, Cn[t], Pn[t],
                                           margin_v, margin_y, dev_price)
        total += value
        keys[t, holders] = mesh[arg]
        keys[t, others] = other_keys
        lipschitz += holders.size * S * (np.max(margin_v, initial=0.0) + np.max(margin_y, initial=0.0)
                                         + 2.0 * dev_price)
    return OracleResult(float(total), keys, float(lipschitz), points, step)


def _axis(lo, hi, step, n_steps) -> np.ndarray:
    inner = np.arange(n_steps + 1) * step
    inner = inner[(inner > lo + 1e-12) & (inner < hi - 1e-12)]
    return np.unique(np.r_[lo, inner, hi])


def _evaluate(mesh, holders, others, K, lo, S, Cn, Pn, margin_v, margin_y, dev_price):
    """Objective (without constant terms) for every row of ``mesh``; returns best value and index."""
    a_h = mesh * S
    v = np.minimum(a_h, Cn[holders])
    V = v.sum(axis=1)
    # greedy local sales: best margin first, lowest index on ties
    producers = np.flatnonzero(Pn > 0)
    order = producers[np.lexsort((producers, -margin_y[producers]))]
    sales_gain = np.zeros_like(V)
    remaining = V.copy()
    for j in order:
        take = np.minimum(remaining, Pn[j])
        sales_gain += margin_y[j] * take
        remaining -= take
    value = -(v * margin_v[holders]).sum(axis=1) - sales_gain

    # deviations of holders and of the others after water-filling
    A = K * S
    d_pos = np.max(np.maximum(a_h - A[holders], 0.0), axis=1, initial=0.0)
    d_neg_h = np.max(np.maximum(A[holders] - a_h, 0.0), axis=1, initial=0.0)
    budget = 1.0 - mesh.sum(axis=1)
    cut = _water_level(K[others], lo[others], budget)
    d_neg = np.maximum(d_neg_h, cut * S)
    value = value + dev_price * (d_pos + d_neg)
    arg = int(np.argmin(value))
    other_keys = np.maximum(K[others] - cut[arg], lo[others])
    return float(value[arg]), arg, other_keys


def _water_level(K, lo, budget):
    """Smallest ``d >= 0`` with ``sum(max(K - d, lo)) <= budget`` for each budget."""
    budget = np.asarray(budget, dtype=float)
    if K.size == 0:
        return np.zeros_like(budget)
    excess = np.sum(K) - budget
    room = K - lo                    # how far each key can drop
    # piecewise-linear decreasing function of d; evaluate at breakpoints
    brk = np.unique(np.r_[0.0, room])
    reduction = np.array([np.minimum(room, d).sum() for d in brk])
    out = np.zeros_like(budget)
    need = excess > 1e-15
    for q in np.flatnonzero(need):
        e = excess[q]
        j = np.searchsorted(reduction, e)
        if j >= brk.size:
            out[q] = brk[-1]
            continue
        if j == 0:
            out[q] = 0.0
            continue
        # linear between brk[j-1] and brk[j]
        slope = (reduction[j] - reduction[j - 1]) / (brk[j] - brk[j - 1])
        out[q] = brk[j - 1] + (e - reduction[j - 1]) / slope
    return out
