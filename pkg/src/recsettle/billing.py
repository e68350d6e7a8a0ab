"""Per-member, per-period electricity bills with and without the community.

A member's bill in one period is

    grid purchase   buy        * (Cn - v)
  + local purchase  local_buy  * v
  - local sales     local_sell * y
  - grid sales      sell       * (Pn - y)

Amounts stay in binary floating point; rounding (half-even, 4 decimals)
happens only when a report is written.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from recsettle.errors import ContractError
from recsettle.metering import MeterSeries, format_timestamp
from recsettle.settlement import ContractTable, SettlementResult

FLOW_TOL = 1e-7
MONEY_QUANTUM = Decimal("0.0001")


@dataclass(frozen=True)
class BillLine:
    """Bill of one member in one period (€)."""

    member: str
    period: int
    grid_purchase: float
    local_purchase: float
    local_sale: float
    grid_sale: float

    @property
    def net(self) -> float:
        return self.grid_purchase + self.local_purchase - self.local_sale - self.grid_sale


@dataclass(frozen=True, eq=False)
class Bills:
    """All bill components as ``(T, I)`` arrays."""

    members: tuple[str, ...]
    grid_purchase: np.ndarray
    local_purchase: np.ndarray
    local_sale: np.ndarray
    grid_sale: np.ndarray

    @property
    def net(self) -> np.ndarray:
        return self.grid_purchase + self.local_purchase - self.local_sale - self.grid_sale

    def line(self, t: int, i: int) -> BillLine:
        return BillLine(self.members[i], t, float(self.grid_purchase[t, i]), float(self.local_purchase[t, i]),
                        float(self.local_sale[t, i]), float(self.grid_sale[t, i]))

    def lines(self):
        T, I = self.net.shape
        for t in range(T):
            for i in range(I):
                yield self.line(t, i)

    def member_totals(self) -> np.ndarray:
        return self.net.sum(axis=0)


def _compose(series: MeterSeries, contracts, v, y) -> Bills:
    ct = ContractTable.build(series, contracts)
    Cn, Pn = series.net_consumption, series.net_production
    return Bills(
        members=series.members,
        grid_purchase=ct.buy * (Cn - v),
        local_purchase=ct.local_buy * v,
        local_sale=ct.local_sell * y,
        grid_sale=ct.sell * (Pn - y),
    )


def bill(series: MeterSeries, contracts, result: SettlementResult) -> Bills:
    """Bills under the settlement.

    Raises:
        ContractError: verified allocation above net consumption, or local
            sales above net production (a corrupt result).
    """
    v, y = np.asarray(result.verified, float), np.asarray(result.local_sales, float)
    if v.shape != series.consumption.shape or y.shape != v.shape:
        raise ContractError("settlement shape does not match the meter series")
    over_v = v - series.net_consumption
    over_y = y - series.net_production
    if np.max(over_v) > FLOW_TOL or np.min(v) < -FLOW_TOL:
        t, i = np.unravel_index(np.argmax(np.maximum(over_v, -v)), v.shape)
        raise ContractError(f"verified allocation {v[t, i]} outside [0, Cn={series.net_consumption[t, i]}] "
                            f"for {series.members[i]} in period {t}")
    if np.max(over_y) > FLOW_TOL or np.min(y) < -FLOW_TOL:
        t, i = np.unravel_index(np.argmax(np.maximum(over_y, -y)), y.shape)
        raise ContractError(f"local sales {y[t, i]} outside [0, Pn={series.net_production[t, i]}] "
                            f"for {series.members[i]} in period {t}")
    return _compose(series, contracts, v, y)


def baseline_bill(series: MeterSeries, contracts) -> Bills:
    """Bills without the community: everything traded with the retailer."""
    z = np.zeros_like(series.net_consumption)
    return _compose(series, contracts, z, z)


@dataclass(frozen=True)
class SavingsRow:
    member: str
    community_total: float
    baseline_total: float

    @property
    def delta(self) -> float:
        return self.community_total - self.baseline_total

    @property
    def delta_pct(self) -> float:
        """Relative change versus the baseline in percent (0 when both are zero)."""
        if self.baseline_total == 0:
            return 0.0 if self.community_total == 0 else float("nan")
        return 100.0 * self.delta / abs(self.baseline_total)


def savings_report(bills: Bills, baseline: Bills) -> list[SavingsRow]:
    if bills.members != baseline.members or bills.net.shape != baseline.net.shape:
        raise ContractError("bills and baseline cover different members or periods")
    rec, base = bills.member_totals(), baseline.member_totals()
    return [SavingsRow(m, float(r), float(b)) for m, r, b in zip(bills.members, rec, base)]


def money(value: float) -> str:
    """Round half-even to 4 decimals for reports (never ``-0.0000``)."""
    q = Decimal(repr(float(value))).quantize(MONEY_QUANTUM, rounding=ROUND_HALF_EVEN)
    if q == 0:
        q = abs(q)
    return format(q, "f")


def bills_csv(series: MeterSeries, bills: Bills, target=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "member", "grid_purchase", "local_purchase", "local_sale", "grid_sale", "net"])
    stamps = series.grid.timestamps()
    for line in bills.lines():
        w.writerow([format_timestamp(stamps[line.period]), line.member, money(line.grid_purchase),
                    money(line.local_purchase), money(line.local_sale), money(line.grid_sale), money(line.net)])
    text = buf.getvalue()
    if target is not None:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


def savings_summary(rows: list[SavingsRow]) -> dict:
    members = {r.member: {"community_total": money(r.community_total), "baseline_total": money(r.baseline_total),
                          "delta_pct": None if np.isnan(r.delta_pct) else round(r.delta_pct, 4)}
               for r in rows}
    rec = sum(r.community_total for r in rows)
    base = sum(r.baseline_total for r in rows)
    total = SavingsRow("total", rec, base)
    return {"members": members, "community_total": money(rec), "baseline_total": money(base),
            "delta_pct": None if np.isnan(total.delta_pct) else round(total.delta_pct, 4)}
