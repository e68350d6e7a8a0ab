"""Optimal repartition keys: LP construction, solution and settlement extraction.

For every period with local production the model allocates the injected
energy through keys ``k``; ``a = k * sum(Pn)`` is the allocated production,
``v <= min(a, Cn)`` the part the operator verifies, and ``y <= Pn`` the local
sales that balance it.  The per-period maximum positive and negative key
deviations carry a small penalty that makes the optimum stay close to the
initial keys.  Self-sufficiency floors couple the periods.

Each active period becomes one block of the LP (its columns carry the period
as block label); self-sufficiency rows are the only rows spanning periods.
"""

from __future__ import annotations

import math
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from recsettle.errors import (
    ConfigError, ContractError, InfeasibleSettlement, SchemaError, SolverError,
)
from recsettle.lp import INF, LpModel, SolveOptions, Status, WarmStart, solve
from recsettle.metering import MeterSeries

DEFAULT_MAX_DEVIATION_PRICE = 1e-4   # €/kWh
ELASTIC_PENALTY = 1e6                # €/unit of missing self-sufficiency
CHECK_TOL = 1e-7
METHODS = ("auto", "decomposed", "monolithic")


@dataclass(frozen=True)
class MemberContract:
    """Prices (€/kWh), self-sufficiency floor and key tolerance of one member.

    Attributes:
        buy: retail purchase price.
        sell: retail feed-in price.
        local_buy: price paid for locally allocated energy.
        local_sell: price received for local sales.
        deviation: penalty per kWh of key deviation; must stay small.
        ssr_floor: minimum self-sufficiency rate in [0, 1].
        tolerance: maximum key deviation, a scalar or one value per period.
    """

    buy: float
    sell: float
    local_buy: float
    local_sell: float
    deviation: float = 1e-4
    ssr_floor: float = 0.0
    tolerance: float | tuple = 1.0
    max_deviation_price: float = DEFAULT_MAX_DEVIATION_PRICE

    def __post_init__(self):
        for name in ("buy", "sell", "local_buy", "local_sell", "deviation"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"price {name} must be a finite non-negative number, got {v!r}")
        if self.deviation > self.max_deviation_price:
            raise ConfigError(f"deviation price {self.deviation} €/kWh exceeds the limit "
                              f"{self.max_deviation_price} €/kWh")
        if not 0.0 <= float(self.ssr_floor) <= 1.0:
            raise ConfigError(f"ssr_floor must lie in [0, 1], got {self.ssr_floor!r}")
        tol = np.asarray(self.tolerance, dtype=float)
        if tol.ndim > 1 or not np.all(np.isfinite(tol)) or np.any(tol < 0) or np.any(tol > 1):
            raise ConfigError("tolerance must be a value or per-period vector in [0, 1]")
        if tol.ndim == 1:
            object.__setattr__(self, "tolerance", tuple(float(x) for x in tol))

    @classmethod
    def from_mwh(cls, buy, sell, local_buy, local_sell, deviation=0.1, **kw) -> "MemberContract":
        """Build a contract from €/MWh prices (the usual tariff unit)."""
        return cls(buy=buy / 1000.0, sell=sell / 1000.0, local_buy=local_buy / 1000.0,
                   local_sell=local_sell / 1000.0, deviation=deviation / 1000.0, **kw)

    def tolerance_vector(self, T: int) -> np.ndarray:
        tol = np.asarray(self.tolerance, dtype=float)
        if tol.ndim == 0:
            return np.full(T, float(tol))
        if tol.size != T:
            raise SchemaError(f"per-period tolerance has {tol.size} values for {T} periods")
        return tol


@dataclass
class ContractTable:
    """Contracts aligned to the member order as arrays of shape ``(I,)``."""

    buy: np.ndarray
    sell: np.ndarray
    local_buy: np.ndarray
    local_sell: np.ndarray
    deviation: np.ndarray
    ssr_floor: np.ndarray
    tolerance: np.ndarray      # (T, I)

    @classmethod
    def build(cls, series: MeterSeries, contracts) -> "ContractTable":
        items = _align_contracts(series, contracts)
        return cls(
            buy=np.array([c.buy for c in items]), sell=np.array([c.sell for c in items]),
            local_buy=np.array([c.local_buy for c in items]),
            local_sell=np.array([c.local_sell for c in items]),
            deviation=np.array([c.deviation for c in items]),
            ssr_floor=np.array([float(c.ssr_floor) for c in items]),
            tolerance=np.column_stack([c.tolerance_vector(series.T) for c in items]),
        )


def _align_contracts(series: MeterSeries, contracts) -> list[MemberContract]:
    if isinstance(contracts, MemberContract):
        return [contracts] * series.I
    if isinstance(contracts, Mapping):
        missing = [m for m in series.members if m not in contracts]
        if missing:
            raise ConfigError(f"no contract (prices) for members {missing}")
        extra = sorted(set(contracts) - set(series.members))
        if extra:
            raise ConfigError(f"contracts given for unknown members {extra}")
        return [contracts[m] for m in series.members]
    if isinstance(contracts, Sequence):
        if len(contracts) != series.I:
            raise ConfigError(f"{len(contracts)} contracts for {series.I} members")
        return list(contracts)
    raise ContractError("contracts must be a MemberContract, a mapping or a sequence")


@dataclass
class SettlementLP:
    """Settlement model plus the handles of its variables.

    Handle arrays have shape ``(Ta, I)`` over the active periods ``active``;
    ``ssr`` is ``(I,)`` with ``-1`` where the member has no such variable.
    """

    model: LpModel
    active: np.ndarray
    k: np.ndarray
    a: np.ndarray
    v: np.ndarray
    y: np.ndarray
    dev_pos: np.ndarray
    dev_neg: np.ndarray
    ssr: np.ndarray
    slack: np.ndarray
    initial_allocation: np.ndarray


@dataclass
class SettlementResult:
    """Optimal settlement, every array has shape ``(T, I)`` unless noted."""

    members: tuple[str, ...]
    keys: np.ndarray
    initial_keys: np.ndarray
    allocated: np.ndarray
    verified: np.ndarray
    local_sales: np.ndarray
    grid_sales: np.ndarray
    deviation_max_pos: np.ndarray    # (T,)
    deviation_max_neg: np.ndarray    # (T,)
    ssr: np.ndarray                  # (I,)
    objective: float
    objective_offset: float
    initial_allocation: np.ndarray
    deviation_cost: float
    method: str
    statistics: object = None
    warm_start: WarmStart | None = field(default=None, repr=False)


# -- formulas ---------------------------------------------------------------------

def initial_allocation(series: MeterSeries, K) -> np.ndarray:
    """Initial allocated production ``A[t, i] = K[t, i] * sum_j Pn[t, j]``."""
    K = _key_values(series, K)
    return K * series.net_production.sum(axis=1, keepdims=True)


def compute_ssr(series: MeterSeries, v) -> np.ndarray:
    """Self-sufficiency rate per member; members that never consume get 1."""
    v = np.asarray(v, dtype=float)
    if v.shape != series.consumption.shape:
        raise ContractError(f"v has shape {v.shape}, expected {series.consumption.shape}")
    C, P = series.consumption, series.production
    covered = np.minimum(P + v, C).sum(axis=0)
    total = C.sum(axis=0)
    return np.divide(covered, total, out=np.ones_like(total), where=total > 0)


def linearized_ssr_numerator(series: MeterSeries, v, t: int, i: int) -> float:
    """``min(P, C) + v`` for one cell, equal to ``min(P + v, C)`` whenever ``v <= Cn``."""
    vv = float(np.asarray(v, dtype=float)[t, i])
    if vv > series.net_consumption[t, i] or vv < 0:
        raise ContractError(f"v[{t}][{i}] = {vv} outside [0, Cn = {series.net_consumption[t, i]}]")
    return min(float(series.production[t, i]), float(series.consumption[t, i])) + vv


def _key_values(series: MeterSeries, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape != series.consumption.shape:
        raise SchemaError(f"keys have shape {K.shape}, expected {series.consumption.shape}")
    return K


# -- model construction -------------------------------------------------------------

def build_lp(series: MeterSeries, contracts, K, *, include_ssr: bool = True,
             elastic_penalty: float | None = None, max_deviation: float | None = None) -> SettlementLP:
    """Build the settlement LP.

    Args:
        series: netted meter data.
        contracts: one :class:`MemberContract` per member (mapping by name,
            sequence in member order, or a single shared contract).
        K: initial keys, shape ``(T, I)``.
        include_ssr: add the self-sufficiency variables and rows; without
            them the periods are fully independent.
        elastic_penalty: when set, self-sufficiency floors become soft with
            this price per missing unit (infeasibility diagnostics).
        max_deviation: overrides every contract's key tolerance.
    """
    t_start = time.perf_counter()
    K = _key_values(series, K)
    ct = ContractTable.build(series, contracts)
    X = ct.tolerance if max_deviation is None else np.full_like(ct.tolerance, float(max_deviation))
    if np.any(X < 0) or np.any(X > 1):
        raise ConfigError("max deviation must lie in [0, 1]")
    T, I = series.T, series.I
    Cn, Pn = series.net_consumption, series.net_production
    S_all = Pn.sum(axis=1)
    active = np.flatnonzero(S_all > 0)
    Ta = active.size
    S = S_all[active]
    A0 = initial_allocation(series, K)

    model = LpModel("settlement")
    model.objective_offset = float((ct.buy * Cn).sum() - (ct.sell * Pn).sum())
    N = Ta * I
    blk = np.repeat(np.arange(Ta), I)
    Ka, Xa, Cna, Pna, Aa = K[active], X[active], Cn[active], Pn[active], A0[active]

    k = model.add_variables(N, 0.0, 1.0, 0.0, blk, prefix="k").reshape(Ta, I)
    a = model.add_variables(N, 0.0, INF, 0.0, blk, prefix="a").reshape(Ta, I)
    v = model.add_variables(N, 0.0, INF, np.tile(ct.local_buy - ct.buy, Ta), blk, prefix="v").reshape(Ta, I)
    y = model.add_variables(N, 0.0, INF, np.tile(ct.sell - ct.local_sell, Ta), blk, prefix="y").reshape(Ta, I)
    dev_cost = float(ct.deviation.sum())
    dp = model.add_variables(Ta, 0.0, INF, dev_cost, np.arange(Ta), prefix="a_plus")
    dm = model.add_variables(Ta, 0.0, INF, dev_cost, np.arange(Ta), prefix="a_minus")

    def pairs(c1, v1, c2, v2, relation, rhs, prefix):
        n = c1.size
        idx = np.column_stack([c1.ravel(), c2.ravel()]).ravel()
        val = np.column_stack([np.broadcast_to(v1, c1.shape).ravel(),
                               np.broadcast_to(v2, c2.shape).ravel()]).ravel()
        model.add_constraints(np.arange(0, 2 * n + 1, 2), idx, val, relation, np.ravel(rhs), prefix)

    def singles(c, coef, relation, rhs, prefix):
        n = c.size
        model.add_constraints(np.arange(n + 1), c.ravel(), np.broadcast_to(coef, c.shape).ravel(),
                              relation, np.ravel(rhs), prefix)

    if Ta:
        # allocation follows the key: a = k * total net production
        pairs(a, 1.0, k, -S[:, None], "==", np.zeros(N), "alloc")
        # local purchases balance local sales
        idx = np.concatenate([v, y], axis=1).ravel()
        val = np.tile(np.r_[np.ones(I), -np.ones(I)], Ta)
        model.add_constraints(np.arange(0, 2 * I * Ta + 1, 2 * I), idx, val, "==", np.zeros(Ta), "balance")
        singles(y, 1.0, "<=", Pna, "sales_cap")
        dpb = np.broadcast_to(dp[:, None], (Ta, I))
        dmb = np.broadcast_to(dm[:, None], (Ta, I))
        pairs(a, 1.0, dpb, -1.0, "<=", Aa, "dev_pos")
        pairs(a, -1.0, dmb, -1.0, "<=", -Aa, "dev_neg")
        pairs(v, 1.0, a, -1.0, "<=", np.zeros(N), "verify_alloc")
        singles(v, 1.0, "<=", Cna, "verify_cons")
        model.add_constraints(np.arange(0, N + 1, I), k.ravel(), np.ones(N), "<=", np.ones(Ta), "key_sum")
        singles(k, 1.0, "<=", Ka + Xa, "tol_up")
        singles(k, -1.0, "<=", Xa - Ka, "tol_down")

    ssr = np.full(I, -1, dtype=np.int64)
    slack = np.full(I, -1, dtype=np.int64)
    if include_ssr:
        Ctot = series.consumption.sum(axis=0)
        base = np.minimum(series.production, series.consumption).sum(axis=0)
        for i in range(I):
            if not Ctot[i] > 0:
                continue      # ratio defined as one; the floor holds trivially
            floor = float(ct.ssr_floor[i])
            name = series.members[i]
            if elastic_penalty is None:
                ssr[i] = model.add_variable(f"ssr[{name}]", lo=floor, hi=INF, cost=0.0)
            else:
                ssr[i] = model.add_variable(f"ssr[{name}]", lo=0.0, hi=INF, cost=0.0)
                if floor > 0:
                    slack[i] = model.add_variable(f"ssr_slack[{name}]", lo=0.0, hi=INF,
                                                  cost=float(elastic_penalty))
                    model.add_constraint({ssr[i]: 1.0, slack[i]: 1.0}, ">=", floor, f"ssr_floor[{name}]")
            cols = np.r_[ssr[i], v[:, i]]
            vals = np.r_[Ctot[i], -np.ones(Ta)]
            model.add_constraint((cols, vals), "==", float(base[i]), f"ssr_def[{name}]")

    model.build_seconds = time.perf_counter() - t_start
    return SettlementLP(model, active, k, a, v, y, dp, dm, ssr, slack, A0)


# -- solving --------------------------------------------------------------------------

def has_ssr_floors(series: MeterSeries, contracts) -> bool:
    ct = ContractTable.build(series, contracts)
    consumes = series.consumption.sum(axis=0) > 0
    return bool(np.any((ct.ssr_floor > 0) & consumes))


def settle(series: MeterSeries, contracts, K, *, method: str = "auto", max_deviation: float | None = None,
           options: SolveOptions | None = None, warm_start: WarmStart | None = None,
           diagnose: bool = True) -> SettlementResult:
    """Compute the cost-optimal settlement.

    Args:
        method: ``"decomposed"`` solves periods independently and requires
            every self-sufficiency floor to be zero; ``"monolithic"`` solves
            one model holding all periods and the self-sufficiency rows;
            ``"auto"`` picks decomposed exactly when no floor is active.
        max_deviation: overrides the contracts' key tolerance.
        warm_start: token of an earlier settlement of the same instance.
        diagnose: on infeasibility run the elastic diagnostic to name members.

    Raises:
        InfeasibleSettlement: the self-sufficiency floors cannot all be met.
        SolverError: numerical failure or a settlement violating its invariants.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    floors = has_ssr_floors(series, contracts)
    if method == "auto":
        method = "monolithic" if floors else "decomposed"
    if method == "decomposed" and floors:
        raise ConfigError("the decomposed method needs all self-sufficiency floors at zero")
    lp = build_lp(series, contracts, K, include_ssr=(method == "monolithic"), max_deviation=max_deviation)
    sol = solve(lp.model, options, warm_start)
    if sol.status == Status.INFEASIBLE:
        binding = diagnose_infeasibility(series, contracts, K, max_deviation=max_deviation,
                                         options=options) if diagnose else {}
        names = ", ".join(f"{m} (short {d:.4g})" for m, d in binding.items()) or "unknown"
        err = InfeasibleSettlement(f"self-sufficiency floors cannot be met; binding members: {names}", binding)
        err.warm_start = sol.warm_start
        raise err
    if sol.status != Status.OPTIMAL:
        raise SolverError(f"settlement model is {sol.status.value}")
    result = _extract(series, contracts, K, lp, sol, method)
    problems = check_result(series, contracts, result, max_deviation=max_deviation)
    if problems:
        raise SolverError("settlement violates its invariants: " + "; ".join(problems[:5]))
    return result


def diagnose_infeasibility(series, contracts, K, *, max_deviation=None, options=None) -> dict[str, float]:
    """Members whose floors must be relaxed, with the missing self-sufficiency."""
    lp = build_lp(series, contracts, K, include_ssr=True, elastic_penalty=ELASTIC_PENALTY,
                  max_deviation=max_deviation)
    sol = solve(lp.model, options)
    if sol.status != Status.OPTIMAL:
        return {}
    out = {}
    for i, h in enumerate(lp.slack):
        if h >= 0 and sol.values[h] > 1e-9:
            out[series.members[i]] = float(sol.values[h])
    return out


def _extract(series, contracts, K, lp: SettlementLP, sol, method) -> SettlementResult:
    T, I = series.T, series.I
    x = sol.values
    K = _key_values(series, K)
    keys = K.copy()
    alloc = np.zeros((T, I))
    ver = np.zeros((T, I))
    sales = np.zeros((T, I))
    dp = np.zeros(T)
    dm = np.zeros(T)
    act = lp.active
    if act.size:
        keys[act] = np.clip(x[lp.k], 0.0, 1.0)
        alloc[act] = np.maximum(x[lp.a], 0.0)
        ver[act] = np.clip(x[lp.v], 0.0, series.net_consumption[act])
        sales[act] = np.clip(x[lp.y], 0.0, series.net_production[act])
        dp[act] = np.maximum(x[lp.dev_pos], 0.0)
        dm[act] = np.maximum(x[lp.dev_neg], 0.0)
    ct = ContractTable.build(series, contracts)
    return SettlementResult(
        members=series.members, keys=keys + 0.0, initial_keys=K.copy(), allocated=alloc + 0.0,
        verified=ver + 0.0, local_sales=sales + 0.0,
        grid_sales=np.maximum(series.net_production - sales, 0.0) + 0.0, deviation_max_pos=dp + 0.0,
        deviation_max_neg=dm + 0.0, ssr=compute_ssr(series, ver), objective=float(sol.objective),
        objective_offset=float(lp.model.objective_offset), initial_allocation=lp.initial_allocation,
        deviation_cost=float(ct.deviation.sum() * (dp + dm).sum()), method=method,
        statistics=sol.statistics, warm_start=sol.warm_start,
    )


def check_result(series: MeterSeries, contracts, result: SettlementResult, tol: float = CHECK_TOL,
                 max_deviation: float | None = None) -> list[str]:
    """Return human-readable violations of the settlement invariants (empty when valid)."""
    ct = ContractTable.build(series, contracts)
    X = ct.tolerance if max_deviation is None else np.full_like(ct.tolerance, float(max_deviation))
    k, K = result.keys, result.initial_keys
    S = series.net_production.sum(axis=1, keepdims=True)
    out = []

    def worst(name, excess):
        e = float(np.max(excess, initial=0.0))
        if e > tol:
            out.append(f"{name} violated by {e:.3g}")

    worst("key sum <= 1", k.sum(axis=1) - 1.0)
    worst("|k - K| <= X", np.abs(k - K) - X)
    worst("a = k * sum(Pn)", np.abs(result.allocated - k * S))
    worst("v <= a", result.verified - result.allocated)
    worst("v <= Cn", result.verified - series.net_consumption)
    worst("v >= 0", -result.verified)
    worst("sum v = sum y", np.abs(result.verified.sum(axis=1) - result.local_sales.sum(axis=1)))
    worst("y <= Pn", result.local_sales - series.net_production)
    worst("y >= 0", -result.local_sales)
    consumes = series.consumption.sum(axis=0) > 0
    worst("ssr >= floor", np.where(consumes, ct.ssr_floor - result.ssr, 0.0))
    return out
