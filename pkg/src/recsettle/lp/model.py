"""Sparse bounded-variable linear program builder.

Variables and rows are addressed by integer handles (their insertion index).
Rows are stored as COO triples and only assembled into a sparse matrix when
the model is solved or exported.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from recsettle.errors import ModelError

INF = float("inf")


class Relation(enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="

    @classmethod
    def parse(cls, value) -> "Relation":
        if isinstance(value, cls):
            return value
        aliases = {"<=": cls.LE, "le": cls.LE, "==": cls.EQ, "=": cls.EQ,
                   "eq": cls.EQ, ">=": cls.GE, "ge": cls.GE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ModelError(f"unknown relation {value!r}") from None


_REL_CODE = {Relation.LE: 0, Relation.EQ: 1, Relation.GE: 2}


class _Buffer:
    """Append-only numeric column mixing scalar appends and bulk extends."""

    def __init__(self, dtype):
        self._dtype = dtype
        self._chunks: list[np.ndarray] = []
        self._pending: list = []
        self.size = 0

    def append(self, value):
        self._pending.append(value)
        self.size += 1

    def extend(self, values):
        values = np.array(values, dtype=self._dtype).ravel()
        self._flush()
        self._chunks.append(values)
        self.size += values.size

    def _flush(self):
        if self._pending:
            self._chunks.append(np.asarray(self._pending, dtype=self._dtype))
            self._pending = []

    def array(self) -> np.ndarray:
        self._flush()
        if not self._chunks:
            return np.zeros(0, dtype=self._dtype)
        if len(self._chunks) > 1:
            self._chunks = [np.concatenate(self._chunks)]
        return self._chunks[0]

    def set(self, index, value):
        arr = self.array()
        arr[index] = value


@dataclass(frozen=True)
class ModelArrays:
    """Assembled view of an :class:`LpModel` (row activities ``row_lo <= A x <= row_hi``)."""

    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    cost: np.ndarray
    block: np.ndarray
    offset: float


class LpModel:
    """Minimisation LP with individually bounded variables and sparse rows."""

    def __init__(self, name: str = "lp"):
        self.name = name
        self.objective_offset = 0.0
        self.build_seconds = 0.0
        self._lo = _Buffer(np.float64)
        self._hi = _Buffer(np.float64)
        self._cost = _Buffer(np.float64)
        self._block = _Buffer(np.int64)
        self._var_names: dict[int, str] = {}
        self._var_prefixes: list[tuple[int, int, str]] = []
        self._row_names: dict[int, str] = {}
        self._row_prefixes: list[tuple[int, int, str]] = []
        self._rel = _Buffer(np.int8)
        self._rhs = _Buffer(np.float64)
        self._coo_row = _Buffer(np.int64)
        self._coo_col = _Buffer(np.int64)
        self._coo_val = _Buffer(np.float64)
        self._cache: ModelArrays | None = None

    # -- sizes -------------------------------------------------------------
    @property
    def num_variables(self) -> int:
        return self._lo.size

    @property
    def num_constraints(self) -> int:
        return self._rhs.size

    @property
    def num_nonzeros(self) -> int:
        return self._coo_val.size

    # -- variables ---------------------------------------------------------
    def add_variable(self, name: str | None = None, lo: float = 0.0, hi: float = INF,
                     cost: float = 0.0, block: int = -1) -> int:
        lo, hi, cost = float(lo), float(hi), float(cost)
        _check_bounds(np.array([lo]), np.array([hi]), np.array([cost]))
        handle = self.num_variables
        self._lo.append(lo)
        self._hi.append(hi)
        self._cost.append(cost)
        self._block.append(int(block))
        if name is not None:
            self._var_names[handle] = name
        self._cache = None
        return handle

    def add_variables(self, count: int, lo=0.0, hi=INF, cost=0.0, block=-1,
                      prefix: str | None = None) -> np.ndarray:
        """Add ``count`` variables at once; scalar arguments broadcast."""
        count = int(count)
        if count < 0:
            raise ModelError("variable count must be non-negative")
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (count,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (count,))
        cost = np.broadcast_to(np.asarray(cost, dtype=float), (count,))
        block = np.broadcast_to(np.asarray(block, dtype=np.int64), (count,))
        _check_bounds(lo, hi, cost)
        start = self.num_variables
        self._lo.extend(lo)
        self._hi.extend(hi)
        self._cost.extend(cost)
        self._block.extend(block)
        if prefix is not None and count:
            self._var_prefixes.append((start, count, prefix))
        self._cache = None
        return np.arange(start, start + count, dtype=np.int64)

    def set_bounds(self, handle: int, lo: float, hi: float) -> None:
        self._require_var(np.array([handle]))
        _check_bounds(np.array([float(lo)]), np.array([float(hi)]), np.zeros(1))
        self._lo.set(handle, lo)
        self._hi.set(handle, hi)
        self._cache = None

    def set_cost(self, handle: int, cost: float) -> None:
        self._require_var(np.array([handle]))
        _check_bounds(np.zeros(1), np.zeros(1), np.array([float(cost)]))
        self._cost.set(handle, cost)
        self._cache = None

    def variable_name(self, handle: int) -> str:
        if handle in self._var_names:
            return self._var_names[handle]
        for start, count, prefix in self._var_prefixes:
            if start <= handle < start + count:
                return f"{prefix}[{handle - start}]"
        return f"x{handle}"

    # -- constraints -------------------------------------------------------
    def add_constraint(self, row, relation, rhs: float, name: str | None = None) -> int:
        """Add one row. ``row`` is a mapping handle -> coefficient or a pair of sequences."""
        if isinstance(row, Mapping):
            cols = np.fromiter((int(k) for k in row.keys()), dtype=np.int64, count=len(row))
            vals = np.fromiter((float(v) for v in row.values()), dtype=float, count=len(row))
        else:
            cols, vals = row
            cols = np.asarray(cols, dtype=np.int64).ravel()
            vals = np.asarray(vals, dtype=float).ravel()
        if cols.size == 0:
            raise ModelError("constraint row is empty")
        if cols.size != vals.size:
            raise ModelError("row indices and coefficients differ in length")
        if np.unique(cols).size != cols.size:
            raise ModelError("a variable appears more than once in the same row")
        self._require_var(cols)
        if not np.all(np.isfinite(vals)):
            raise ModelError("constraint coefficients must be finite")
        rel = Relation.parse(relation)
        rhs = float(rhs)
        if not np.isfinite(rhs):
            raise ModelError("constraint right-hand side must be finite")
        handle = self.num_constraints
        self._rel.append(_REL_CODE[rel])
        self._rhs.append(rhs)
        self._coo_row.extend(np.full(cols.size, handle, dtype=np.int64))
        self._coo_col.extend(cols)
        self._coo_val.extend(vals)
        if name is not None:
            self._row_names[handle] = name
        self._cache = None
        return handle

    def add_constraints(self, indptr, indices, coefs, relation, rhs,
                        prefix: str | None = None) -> np.ndarray:
        """Add many rows given in CSR form; ``relation`` may be one value or one per row."""
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        coefs = np.asarray(coefs, dtype=float)
        nrows = indptr.size - 1
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (nrows,))
        if nrows < 0 or indptr[0] != 0 or indptr[-1] != indices.size or indices.size != coefs.size:
            raise ModelError("malformed CSR row block")
        lengths = np.diff(indptr)
        if np.any(lengths <= 0):
            raise ModelError("constraint row is empty")
        self._require_var(indices)
        if not np.all(np.isfinite(coefs)) or not np.all(np.isfinite(rhs)):
            raise ModelError("constraint coefficients and right-hand sides must be finite")
        local_rows = np.repeat(np.arange(nrows, dtype=np.int64), lengths)
        order = np.lexsort((indices, local_rows))
        srt_r, srt_c = local_rows[order], indices[order]
        if np.any((srt_r[1:] == srt_r[:-1]) & (srt_c[1:] == srt_c[:-1])):
            raise ModelError("a variable appears more than once in the same row")
        if isinstance(relation, (str, Relation)):
            codes = np.full(nrows, _REL_CODE[Relation.parse(relation)], dtype=np.int8)
        else:
            codes = np.array([_REL_CODE[Relation.parse(r)] for r in relation], dtype=np.int8)
            if codes.size != nrows:
                raise ModelError("one relation per row expected")
        start = self.num_constraints
        self._rel.extend(codes)
        self._rhs.extend(rhs)
        self._coo_row.extend(local_rows + start)
        self._coo_col.extend(indices)
        self._coo_val.extend(coefs)
        if prefix is not None and nrows:
            self._row_prefixes.append((start, nrows, prefix))
        self._cache = None
        return np.arange(start, start + nrows, dtype=np.int64)

    def constraint_name(self, handle: int) -> str:
        if handle in self._row_names:
            return self._row_names[handle]
        for start, count, prefix in self._row_prefixes:
            if start <= handle < start + count:
                return f"{prefix}[{handle - start}]"
        return f"r{handle}"

    # -- assembly ----------------------------------------------------------
    def arrays(self) -> ModelArrays:
        if self._cache is not None:
            return self._cache
        m, n = self.num_constraints, self.num_variables
        A = sp.csr_matrix(
            (self._coo_val.array(), (self._coo_row.array(), self._coo_col.array())),
            shape=(m, n),
        )
        A.sort_indices()
        rel = self._rel.array()
        rhs = self._rhs.array()
        row_lo = np.where(rel == _REL_CODE[Relation.LE], -INF, rhs)
        row_hi = np.where(rel == _REL_CODE[Relation.GE], INF, rhs)
        self._cache = ModelArrays(
            A=A, row_lo=row_lo, row_hi=row_hi,
            lo=self._lo.array().copy(), hi=self._hi.array().copy(),
            cost=self._cost.array().copy(), block=self._block.array().copy(),
            offset=float(self.objective_offset),
        )
        return self._cache

    def relations(self) -> list[Relation]:
        inverse = {v: k for k, v in _REL_CODE.items()}
        return [inverse[int(c)] for c in self._rel.array()]

    def rhs(self) -> np.ndarray:
        return self._rhs.array().copy()

    def _require_var(self, handles: np.ndarray):
        if handles.size and (handles.min() < 0 or handles.max() >= self.num_variables):
            raise ModelError("constraint references an undeclared variable")


def _check_bounds(lo: np.ndarray, hi: np.ndarray, cost: np.ndarray):
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise ModelError("variable bounds must not be NaN")
    if np.any(lo == INF) or np.any(hi == -INF):
        raise ModelError("lower bound +inf or upper bound -inf")
    if np.any(lo > hi):
        raise ModelError("variable lower bound exceeds upper bound")
    if not np.all(np.isfinite(cost)):
        raise ModelError("objective coefficients must be finite")
