"""Fixed-format MPS export and import for external cross-validation.

Names are generated (``R0000001``, ``C0000001``) so every name fits the
8-character fixed fields.  Numbers are written with ``repr`` so a round trip
is exact; a value longer than its 12-character field spills over the
following blank columns, which every whitespace-tokenising MPS reader
(and :func:`read_mps`) accepts.

Ranged rows use the ``RANGES`` section; the objective constant is written as
the negated right-hand side of the objective row, the usual convention.
"""

from __future__ import annotations

import io

import numpy as np
import scipy.sparse as sp

from recsettle.errors import ModelError, ParseError
from recsettle.lp.model import INF, LpModel, ModelArrays

OBJ = "COST"


def _num(x: float) -> str:
    return repr(float(x))


def _row_name(i: int) -> str:
    return f"R{i + 1:07d}"


def _col_name(j: int) -> str:
    return f"C{j + 1:07d}"


def _line(code: str, name: str, f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    # columns: 2-3 code, 5-12 name, 15-22 name, 25-36 number, 40-47 name, 50-61 number
    out = f" {code:<2} {name:<8}"
    if f3:
        out += f"  {f3:<8}  {f4:<12}"
    if f5:
        out += f"   {f5:<8}  {f6}"
    return out.rstrip()


def write_mps(model: LpModel | ModelArrays, target=None, name: str = "RECSETTL") -> str:
    """Serialise a model to fixed MPS; returns the text and writes ``target`` when given."""
    arr = model.arrays() if isinstance(model, LpModel) else model
    A = sp.csc_matrix(arr.A)
    m, n = A.shape
    lines = [f"NAME          {name[:8]}", "ROWS", f" N  {OBJ}"]
    kinds = []
    for i in range(m):
        lo, hi = arr.row_lo[i], arr.row_hi[i]
        if lo == hi:
            kind = "E"
        elif np.isfinite(hi):
            kind = "L"
        elif np.isfinite(lo):
            kind = "G"
        else:
            raise ModelError(f"row {i} is free; fixed MPS export needs at least one finite side")
        kinds.append(kind)
        lines.append(f" {kind}  {_row_name(i)}")

    lines.append("COLUMNS")
    for j in range(n):
        entries = []
        if arr.cost[j] != 0:
            entries.append((OBJ, arr.cost[j]))
        for p in range(A.indptr[j], A.indptr[j + 1]):
            entries.append((_row_name(int(A.indices[p])), A.data[p]))
        if not entries:
            entries.append((OBJ, 0.0))
        for q in range(0, len(entries), 2):
            pair = entries[q:q + 2]
            f5, f6 = (pair[1][0], _num(pair[1][1])) if len(pair) == 2 else ("", "")
            lines.append(_line("", _col_name(j), pair[0][0], _num(pair[0][1]), f5, f6))

    lines.append("RHS")
    if arr.offset != 0:
        lines.append(_line("", "RHS", OBJ, _num(-arr.offset)))
    ranges = []
    for i, kind in enumerate(kinds):
        lo, hi = arr.row_lo[i], arr.row_hi[i]
        rhs = hi if kind in "EL" else lo
        if rhs != 0:
            lines.append(_line("", "RHS", _row_name(i), _num(rhs)))
        if kind == "L" and np.isfinite(lo):
            ranges.append((i, hi - lo))
    if ranges:
        lines.append("RANGES")
        for i, r in ranges:
            lines.append(_line("", "RNG", _row_name(i), _num(r)))

    lines.append("BOUNDS")
    for j in range(n):
        lo, hi, c = arr.lo[j], arr.hi[j], _col_name(j)
        if lo == hi:
            lines.append(_line("FX", "BND", c, _num(lo)))
            continue
        if lo == -INF and hi == INF:
            lines.append(_line("FR", "BND", c))
            continue
        if lo == -INF:
            lines.append(_line("MI", "BND", c))
        elif lo != 0:
            lines.append(_line("LO", "BND", c, _num(lo)))
        if hi != INF:
            lines.append(_line("UP", "BND", c, _num(hi)))
    lines.append("ENDATA")
    text = "\n".join(lines) + "\n"
    if target is not None:
        with open(target, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    return text


def read_mps(source) -> LpModel:
    """Parse MPS (fixed or free spacing, no names with blanks) into an :class:`LpModel`."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, encoding="ascii") as fh:
            text = fh.read()
    section = None
    obj = None
    rows: dict[str, int] = {}
    kinds: list[str] = []
    cols: dict[str, int] = {}
    entries: list[tuple[int, int, float]] = []
    cost: dict[int, float] = {}
    rhs: dict[int, float] = {}
    rng: dict[int, float] = {}
    bounds: dict[int, list[float]] = {}
    offset = 0.0

    def col(name):
        if name not in cols:
            cols[name] = len(cols)
        return cols[name]

    for no, raw in enumerate(io.StringIO(text), start=1):
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            section = raw.split()[0].upper()
            if section not in ("NAME", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"):
                raise ParseError(f"line {no}: unknown MPS section {section!r}")
            continue
        tok = raw.split()
        try:
            if section == "ROWS":
                kind, rname = tok[0].upper(), tok[1]
                if kind == "N":
                    if obj is None:
                        obj = rname
                    continue
                rows[rname] = len(rows)
                kinds.append(kind)
            elif section == "COLUMNS":
                if "MARKER" in tok[1:2] or "'MARKER'" in tok:
                    raise ParseError(f"line {no}: integer markers are not supported")
                j = col(tok[0])
                for rname, val in zip(tok[1::2], tok[2::2]):
                    if rname == obj:
                        cost[j] = float(val)
                    elif rname in rows:
                        entries.append((rows[rname], j, float(val)))
                    else:
                        raise ParseError(f"line {no}: unknown row {rname!r}")
            elif section in ("RHS", "RANGES"):
                pairs = tok[1:] if len(tok) % 2 == 1 else tok
                for rname, val in zip(pairs[0::2], pairs[1::2]):
                    if rname == obj and section == "RHS":
                        offset = -float(val)
                    elif rname in rows:
                        (rhs if section == "RHS" else rng)[rows[rname]] = float(val)
                    else:
                        raise ParseError(f"line {no}: unknown row {rname!r}")
            elif section == "BOUNDS":
                kind, cname = tok[0].upper(), tok[2]
                val = float(tok[3]) if len(tok) > 3 else 0.0
                b = bounds.setdefault(col(cname), [0.0, INF])
                if kind == "UP":
                    b[1] = val
                    if val < 0 and b[0] == 0:
                        b[0] = -INF
                elif kind == "LO":
                    b[0] = val
                elif kind == "FX":
                    b[0] = b[1] = val
                elif kind == "FR":
                    b[0], b[1] = -INF, INF
                elif kind == "MI":
                    b[0] = -INF
                elif kind == "PL":
                    b[1] = INF
                else:
                    raise ParseError(f"line {no}: unsupported bound type {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ParseError(f"line {no}: malformed {section} record: {raw.strip()!r}") from exc

    model = LpModel()
    for name, j in cols.items():
        lo, hi = bounds.get(j, [0.0, INF])
        model.add_variable(name, lo=lo, hi=hi, cost=cost.get(j, 0.0))
    row_entries: list[dict[int, float]] = [{} for _ in rows]
    for i, j, v in entries:
        row_entries[i][j] = v
    names = list(rows)
    for i, kind in enumerate(kinds):
        b = rhs.get(i, 0.0)
        r = rng.get(i)
        terms = row_entries[i] or {0: 0.0}
        if r is None:
            model.add_constraint(terms, {"L": "<=", "G": ">=", "E": "=="}[kind], b, name=names[i])
            continue
        lo, hi = {"L": (b - abs(r), b), "G": (b, b + abs(r)),
                  "E": (b, b + r) if r >= 0 else (b + r, b)}[kind]
        model.add_constraint(terms, ">=", lo, name=names[i])
        model.add_constraint(terms, "<=", hi, name=names[i] + "_R")
    model.objective_offset = offset
    return model
