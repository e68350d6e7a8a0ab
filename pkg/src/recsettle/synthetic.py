"""Reproducible synthetic community data for benchmarks and demonstrations.

Households follow a two-peak daily load shape with multiplicative noise;
prosumers add rooftop PV following a clipped sine between 06:00 and 18:00
scaled by a random daily clearness factor.  Nothing here is calibrated to a
real dataset; the generator only has to produce realistic *structure*
(daylight-only production, heterogeneous members).
"""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np

from recsettle.errors import ConfigError
from recsettle.metering import DEFAULT_CADENCE, MeterSeries, PeriodGrid
from recsettle.settlement import MemberContract

DEFAULT_START = datetime(2024, 3, 1, tzinfo=timezone.utc)

# Prices of the reference test case, €/MWh.
REFERENCE_PRICES_MWH = dict(buy=220.0, sell=60.0, local_buy=100.0, local_sell=98.0, deviation=0.1)


def reference_contract(**kw) -> MemberContract:
    return MemberContract.from_mwh(**REFERENCE_PRICES_MWH, **kw)


def synthetic_community(T: int, I: int, seed: int = 0, pv_share: float = 0.4,
                        pv_scale: float = 1.0, cadence: int = DEFAULT_CADENCE,
                        start: datetime = DEFAULT_START) -> MeterSeries:
    """Generate ``T`` periods of raw consumption and production for ``I`` members.

    Args:
        T: number of metering periods.
        I: number of members.
        seed: RNG seed; identical arguments give identical series.
        pv_share: fraction of members owning PV.
        pv_scale: multiplies every PV capacity (shifts the community
            between production surplus and deficit).
        cadence: period length in seconds.
        start: timestamp of the first period.
    """
    if T < 1 or I < 1:
        raise ConfigError("synthetic community needs T >= 1 and I >= 1")
    if not 0.0 <= pv_share <= 1.0:
        raise ConfigError("pv_share must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    hours = (start.hour + start.minute / 60.0 + np.arange(T) * cadence / 3600.0) % 24.0
    day = ((start.hour * 3600 + np.arange(T) * cadence) // 86400).astype(int)
    dt_h = cadence / 3600.0

    # load: kW profile per member, converted to kWh per period
    shape = (0.35 + 0.45 * np.exp(-0.5 * ((hours - 7.5) / 1.5) ** 2)
             + 0.8 * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2))
    level = rng.lognormal(mean=np.log(0.8), sigma=0.35, size=I)
    noise = rng.gamma(shape=8.0, scale=1.0 / 8.0, size=(T, I))
    C = shape[:, None] * level[None, :] * noise * dt_h

    # PV: clipped sine over daylight hours times daily clearness
    n_pv = int(round(pv_share * I))
    owners = np.zeros(I, dtype=bool)
    owners[rng.permutation(I)[:n_pv]] = True
    capacity = np.where(owners, rng.uniform(2.0, 8.0, size=I), 0.0) * pv_scale
    sun = np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)
    clear = rng.beta(4.0, 2.0, size=day.max() + 1)[day]
    flicker = rng.uniform(0.85, 1.0, size=(T, I))
    P = (sun * clear)[:, None] * capacity[None, :] * flicker * dt_h

    members = [f"M{i + 1:03d}" for i in range(I)]
    return MeterSeries.from_raw(members, np.round(C, 6), np.round(P, 6),
                                PeriodGrid(start, cadence, T))
