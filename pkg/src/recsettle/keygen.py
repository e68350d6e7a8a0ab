"""Initial repartition keys ``K[t, i]`` derived from metering data."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from recsettle.errors import ConfigError, DegenerateInputError, SchemaError
from recsettle.metering import MeterSeries, _read_table

SUM_TOL = 1e-9


class KeyStrategy(enum.Enum):
    UNIFORM = "uniform"
    PROPORTIONAL_STATIC = "proportional-static"
    PROPORTIONAL_DYNAMIC = "proportional-dynamic"
    EXPLICIT = "explicit"

    @classmethod
    def parse(cls, name: str) -> "KeyStrategy":
        key = str(name).strip().lower().replace("_", "-")
        for s in cls:
            if s.value == key:
                return s
        raise ConfigError(f"unknown key strategy {name!r}; choose from {[s.value for s in cls]}")


@dataclass(frozen=True, eq=False)
class KeyMatrix:
    """Keys per period and member; rows sum to at most one."""

    members: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        validate_keys(v)
        if v.shape[1] != len(self.members):
            raise SchemaError(f"{v.shape[1]} key columns for {len(self.members)} members")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "members", tuple(self.members))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def validate_keys(K: np.ndarray) -> None:
    """Raise :class:`SchemaError` unless ``0 <= K <= 1`` and every row sums to at most one."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2:
        raise SchemaError("key matrix must be two-dimensional (periods x members)")
    if not np.all(np.isfinite(K)):
        raise SchemaError("keys must be finite")
    bad = np.argwhere((K < 0) | (K > 1))
    if bad.size:
        t, i = bad[0]
        raise SchemaError(f"key {K[t, i]!r} at period {t}, member {i} is outside [0, 1]")
    sums = K.sum(axis=1)
    over = np.flatnonzero(sums > 1 + SUM_TOL)
    if over.size:
        raise SchemaError(f"keys of period {over[0]} sum to {sums[over[0]]:.12g} > 1")


def uniform_keys(series: MeterSeries) -> KeyMatrix:
    """Equal keys for every member with positive net consumption in the period."""
    pos = series.net_consumption > 0
    n = pos.sum(axis=1, keepdims=True)
    K = np.where(pos, 1.0 / np.maximum(n, 1), 0.0)
    return KeyMatrix(series.members, K)


def proportional_static_keys(series: MeterSeries) -> KeyMatrix:
    """Keys proportional to each member's net consumption over the whole horizon.

    Raises:
        DegenerateInputError: nobody consumes anything over the horizon.
    """
    per_member = series.net_consumption.sum(axis=0)
    total = per_member.sum()
    if not total > 0:
        raise DegenerateInputError("total net consumption is zero; proportional keys are undefined")
    share = per_member / total
    return KeyMatrix(series.members, np.tile(share, (series.T, 1)))


def proportional_dynamic_keys(series: MeterSeries) -> KeyMatrix:
    """Keys proportional to net consumption within each period (zero rows when nobody consumes)."""
    Cn = series.net_consumption
    tot = Cn.sum(axis=1, keepdims=True)
    K = np.divide(Cn, tot, out=np.zeros_like(Cn), where=tot > 0)
    return KeyMatrix(series.members, K)


def load_explicit_keys(source, series: MeterSeries) -> KeyMatrix:
    """Read a ``timestamp,<member>...`` key file aligned with ``series``.

    Columns may come in any order but must name exactly the series members.
    """
    members, _, values = _read_table(source, series.grid, None, allow_negative=True)
    if set(members) != set(series.members):
        missing = sorted(set(series.members) - set(members))
        extra = sorted(set(members) - set(series.members))
        raise SchemaError(f"key file members differ from meter members (missing {missing}, unknown {extra})")
    order = [members.index(m) for m in series.members]
    return KeyMatrix(series.members, values[:, order])


def make_keys(series: MeterSeries, strategy, source=None) -> KeyMatrix:
    """Dispatch on a :class:`KeyStrategy` (or its name)."""
    strategy = KeyStrategy.parse(strategy.value if isinstance(strategy, KeyStrategy) else strategy)
    if strategy is KeyStrategy.UNIFORM:
        return uniform_keys(series)
    if strategy is KeyStrategy.PROPORTIONAL_STATIC:
        return proportional_static_keys(series)
    if strategy is KeyStrategy.PROPORTIONAL_DYNAMIC:
        return proportional_dynamic_keys(series)
    if source is None:
        raise ConfigError("explicit key strategy needs a key file")
    return load_explicit_keys(source, series)
