"""Command-line interface: ``recsettle <subcommand> [options]``.

Exit codes: 0 success, 2 infeasible settlement (self-sufficiency floors
cannot be met), 1 any other error.  Errors go to standard error as
``ERROR:<category>: message``.

Options may also come from a JSON file given with ``--config``; keys are
option names (``max_deviation`` or ``max-deviation``), explicit flags win,
and relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from recsettle import __version__
from recsettle.billing import baseline_bill, bill, bills_csv, savings_report, savings_summary
from recsettle.errors import ConfigError, InfeasibleSettlement, RecSettleError
from recsettle.feasibility import max_uniform_ssr, with_uniform_floor
from recsettle.keygen import KeyStrategy, make_keys
from recsettle.lp.mps import write_mps
from recsettle.metering import MeterSeries, format_timestamp, ingest_dual, ingest_signed
from recsettle.oracle import grid_search_settle
from recsettle.settlement import METHODS, MemberContract, build_lp, settle
from recsettle.synthetic import reference_contract, synthetic_community

PRICE_FIELDS = ("buy", "sell", "local_buy", "local_sell")
OPTIONAL_PRICE_FIELDS = ("deviation", "ssr_floor", "tolerance")
PATH_OPTIONS = ("meters", "consumption", "production", "prices", "key_file")
DEFAULT_OUT = "out"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors, which would collide with 'infeasible'."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# -- formatting ---------------------------------------------------------------------

def fmt6(x: float) -> str:
    """Six fractional digits, never ``-0.000000``."""
    s = f"{float(x):.6f}"
    return "0.000000" if s == "-0.000000" else s


def matrix_csv(series: MeterSeries, values: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *series.members])
    for ts, row in zip(series.grid.timestamps(), np.asarray(values, dtype=float)):
        w.writerow([format_timestamp(ts), *(fmt6(v) for v in row)])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"recsettle": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _manifest(args, inputs: dict, outputs: list[str]) -> str:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config_data")}
    return _json({
        "command": args.command,
        "flags": flags,
        "inputs": {role: {"path": str(p), "sha256": _sha256(p)} for role, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
        "versions": _versions(),
    })


# -- inputs -------------------------------------------------------------------------

def load_series(args) -> tuple[MeterSeries, dict]:
    if args.signed:
        if not args.meters:
            raise ConfigError("--signed needs --meters FILE")
        return ingest_signed(args.meters, tz=args.tz), {"meters": args.meters}
    if args.meters and not (args.consumption or args.production):
        raise ConfigError("--meters is the signed single-channel input; add --signed, "
                          "or give --consumption and --production")
    if not (args.consumption and args.production):
        raise ConfigError("dual-channel input needs --consumption FILE and --production FILE")
    series = ingest_dual(args.consumption, args.production, tz=args.tz)
    return series, {"consumption": args.consumption, "production": args.production}


def load_prices(path, series: MeterSeries, ssr_floor=None) -> dict[str, MemberContract]:
    """Read the member -> prices JSON (€/MWh); ``"*"`` is an explicit default entry."""
    try:
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read price file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"price file {path} is not valid JSON: {exc}") from None
    if not isinstance(table, dict):
        raise ConfigError("price file must map member names to price objects")
    unknown = sorted(set(table) - set(series.members) - {"*"})
    if unknown:
        raise ConfigError(f"prices given for unknown members {unknown}")
    missing = [m for m in series.members if m not in table and "*" not in table]
    if missing:
        raise ConfigError(f"no prices for members {missing}")
    out = {}
    for m in series.members:
        entry = table.get(m, table.get("*"))
        if not isinstance(entry, dict):
            raise ConfigError(f"prices of {m} must be an object")
        extra = sorted(set(entry) - set(PRICE_FIELDS) - set(OPTIONAL_PRICE_FIELDS))
        lacking = [f for f in PRICE_FIELDS if f not in entry]
        if extra or lacking:
            raise ConfigError(f"prices of {m}: missing fields {lacking}, unknown fields {extra}")
        kw = {k: entry[k] for k in OPTIONAL_PRICE_FIELDS[1:] if k in entry}
        if ssr_floor is not None:
            kw["ssr_floor"] = ssr_floor
        out[m] = MemberContract.from_mwh(*(entry[f] for f in PRICE_FIELDS),
                                         deviation=entry.get("deviation", 0.1), **kw)
    return out


def load_keys(args, series: MeterSeries):
    strategy = KeyStrategy.parse(args.keys)
    if strategy is KeyStrategy.EXPLICIT and not args.key_file:
        raise ConfigError("--keys explicit needs --key-file FILE")
    return make_keys(series, strategy, args.key_file).values


def _prepare(args):
    series, inputs = load_series(args)
    if not args.prices:
        raise ConfigError("--prices FILE is required")
    contracts = load_prices(args.prices, series, args.ssr_floor)
    inputs["prices"] = args.prices
    K = load_keys(args, series)
    if args.key_file:
        inputs["key_file"] = args.key_file
    return series, contracts, K, inputs


def _stats(result) -> dict:
    s = result.statistics
    keep = ("rows", "columns", "nonzeros", "iterations", "presolved_rows", "presolved_columns",
            "blocks", "linking_rows", "rounds")
    return {k: getattr(s, k) for k in keep} if s is not None else {}


def _summary(series, result, bills=None, baseline=None) -> dict:
    out = {
        "method": result.method,
        "objective": result.objective,
        "objective_offset": result.objective_offset,
        "deviation_cost": result.deviation_cost,
        "ssr": {m: float(v) for m, v in zip(series.members, result.ssr)},
        "deviation_max_pos": [float(v) for v in result.deviation_max_pos],
        "deviation_max_neg": [float(v) for v in result.deviation_max_neg],
        "grid_sales": float(result.grid_sales.sum()),
        "statistics": _stats(result),
    }
    if bills is not None:
        out["savings"] = savings_summary(savings_report(bills, baseline))
    return out


def _report_timing(result, stream=sys.stdout):
    s = result.statistics
    if s is not None:
        print(f"build {s.build_seconds:.3f} s, solve {s.solve_seconds:.3f} s, "
              f"{s.iterations} iterations", file=stream)


# -- subcommands --------------------------------------------------------------------

def cmd_settle(args) -> int:
    series, contracts, K, inputs = _prepare(args)
    out = Path(args.out)
    if args.mps:
        lp = build_lp(series, contracts, K, max_deviation=args.max_deviation)
        Path(args.mps).parent.mkdir(parents=True, exist_ok=True)
        write_mps(lp.model, args.mps)
    try:
        result = settle(series, contracts, K, method=args.method, max_deviation=args.max_deviation)
    except InfeasibleSettlement as exc:
        _write(out, "infeasible.json", _json({"binding_members": exc.binding_members, "message": str(exc)}))
        _write(out, "manifest.json", _manifest(args, inputs, ["infeasible.json"]))
        raise
    bills = bill(series, contracts, result)
    baseline = baseline_bill(series, contracts)
    files = {
        "keys.csv": matrix_csv(series, result.keys),
        "allocated.csv": matrix_csv(series, result.allocated),
        "verified.csv": matrix_csv(series, result.verified),
        "local_sales.csv": matrix_csv(series, result.local_sales),
        "bills.csv": bills_csv(series, bills),
    }
    summary = _summary(series, result, bills, baseline)
    if args.oracle:
        orc = grid_search_settle(series, contracts, K, step=args.oracle_step, max_deviation=args.max_deviation)
        summary["oracle"] = {"objective": orc.objective, "step": orc.step, "points": orc.points,
                             "lipschitz_bound": orc.lipschitz_bound, "gap_bound": orc.gap_bound,
                             "gap": orc.objective - result.objective}
    files["summary.json"] = _json(summary)
    for name, text in files.items():
        _write(out, name, text)
    _write(out, "manifest.json", _manifest(args, inputs, list(files) + ["manifest.json"]))
    print(f"objective {result.objective:.6f} EUR ({result.method}); outputs in {out}")
    if args.oracle:
        o = summary["oracle"]
        print(f"oracle objective {o['objective']:.6f} EUR, gap {o['gap']:.3g} <= bound {o['gap_bound']:.3g}")
    _report_timing(result)
    return 0


def cmd_keys(args) -> int:
    series, inputs = load_series(args)
    K = load_keys(args, series)
    text = matrix_csv(series, K)
    if args.key_file:
        inputs["key_file"] = args.key_file
    if args.out:
        out = Path(args.out)
        _write(out, "keys.csv", text)
        _write(out, "manifest.json", _manifest(args, inputs, ["keys.csv", "manifest.json"]))
    else:
        sys.stdout.write(text)
    return 0


def cmd_bill(args) -> int:
    series, contracts, K, inputs = _prepare(args)
    result = settle(series, contracts, K, method=args.method, max_deviation=args.max_deviation)
    bills = bill(series, contracts, result)
    summary = savings_summary(savings_report(bills, baseline_bill(series, contracts)))
    out = Path(args.out)
    _write(out, "bills.csv", bills_csv(series, bills))
    _write(out, "savings.json", _json(summary))
    _write(out, "manifest.json", _manifest(args, inputs, ["bills.csv", "savings.json", "manifest.json"]))
    print(f"{'member':<12}{'community':>14}{'baseline':>14}{'delta %':>10}")
    for m, row in summary["members"].items():
        pct = "n/a" if row["delta_pct"] is None else f"{row['delta_pct']:.2f}"
        print(f"{m:<12}{row['community_total']:>14}{row['baseline_total']:>14}{pct:>10}")
    return 0


def cmd_feasibility(args) -> int:
    series, contracts, K, inputs = _prepare(args)
    res = max_uniform_ssr(series, contracts, K, tolerance=args.tolerance, max_deviation=args.max_deviation)
    print(f"s* = {res.s_star:.6f}")
    print(f"probes = {res.probes}")
    print("ssr at s*:")
    for m, v in zip(series.members, res.ssr):
        print(f"  {m} {fmt6(v)}")
    if args.out:
        out = Path(args.out)
        _write(out, "feasibility.json", _json({
            "s_star": res.s_star, "probes": res.probes, "tolerance": res.tolerance,
            "ssr": {m: float(v) for m, v in zip(series.members, res.ssr)},
            "ssr_unconstrained": {m: float(v) for m, v in zip(series.members, res.baseline.ssr)},
            "objective": res.result.objective, "objective_unconstrained": res.baseline.objective,
        }))
        _write(out, "manifest.json", _manifest(args, inputs, ["feasibility.json", "manifest.json"]))
    return 0


def parse_grid(text: str) -> list[float]:
    """``"0:1:0.1"`` (inclusive range) or ``"0,0.25,0.5"``."""
    text = (text or "").strip()
    if not text:
        raise ConfigError("sweep grid is empty")
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"sweep range {text!r} is empty")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + j * step, 12) for j in range(n)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep grid {text!r}") from None
    if not values:
        raise ConfigError("sweep grid is empty")
    return values


def cmd_sweep(args) -> int:
    series, contracts, K, inputs = _prepare(args)
    values = parse_grid(args.grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "value", "status", "objective", "min_ssr", "mean_ssr", "community_bill",
                "baseline_bill"])
    base_total = float(baseline_bill(series, contracts).net.sum())
    for value in values:
        if args.parameter == "max-deviation":
            c, X = contracts, value
        else:
            c, X = with_uniform_floor(series, contracts, value), args.max_deviation
        try:
            r = settle(series, c, K, method="auto", max_deviation=X, diagnose=False)
        except InfeasibleSettlement:
            w.writerow([args.parameter, repr(value), "infeasible", "", "", "", "", fmt6(base_total)])
            continue
        total = float(bill(series, c, r).net.sum())
        w.writerow([args.parameter, repr(value), "optimal", fmt6(r.objective), fmt6(r.ssr.min()),
                    fmt6(r.ssr.mean()), fmt6(total), fmt6(base_total)])
    text = buf.getvalue()
    if args.out:
        out = Path(args.out)
        _write(out, "sweep.csv", text)
        _write(out, "manifest.json", _manifest(args, inputs, ["sweep.csv", "manifest.json"]))
    sys.stdout.write(text)
    return 0


def parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for part in (text or "").split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            T, I = (int(p) for p in part.split("x"))
        except ValueError:
            raise ConfigError(f"size {part!r} is not of the form TxI") from None
        if T < 1 or I < 1:
            raise ConfigError(f"benchmark size {part!r} needs T >= 1 and I >= 1")
        sizes.append((T, I))
    if not sizes:
        raise ConfigError("no benchmark sizes given")
    return sizes


def cmd_bench(args) -> int:
    sizes = parse_sizes(args.sizes) if args.sizes else parse_sizes(f"{args.T}x{args.I}")
    header = f"{'T':>6} {'I':>5} {'rows':>10} {'cols':>10} {'nnz':>10} {'build s':>9} {'solve s':>9} {'iters':>8}"
    print(header)
    rows = []
    for T, I in sizes:
        series = synthetic_community(T, I, seed=args.seed)
        contract = reference_contract(ssr_floor=args.ssr_floor)
        K = make_keys(series, KeyStrategy.PROPORTIONAL_STATIC).values
        t0 = time.perf_counter()
        r = settle(series, contract, K, method=args.method, diagnose=False)
        wall = time.perf_counter() - t0
        s = r.statistics
        rows.append({"T": T, "I": I, "rows": s.rows, "cols": s.columns, "nnz": s.nonzeros,
                     "build_s": s.build_seconds, "solve_s": s.solve_seconds, "iterations": s.iterations,
                     "wall_s": wall, "method": r.method})
        print(f"{T:>6} {I:>5} {s.rows:>10} {s.columns:>10} {s.nonzeros:>10} {s.build_seconds:>9.2f} "
              f"{s.solve_seconds:>9.2f} {s.iterations:>8}")
    if args.out:
        _write(Path(args.out), "bench.json", _json({"rows": rows, "seed": args.seed, "versions": _versions()}))
    return 0


def cmd_oracle(args) -> int:
    series, contracts, K, inputs = _prepare(args)
    orc = grid_search_settle(series, contracts, K, step=args.oracle_step, max_deviation=args.max_deviation)
    r = settle(series, contracts, K, max_deviation=args.max_deviation)
    gap = orc.objective - r.objective
    print(f"lp objective     {r.objective:.9f} EUR")
    print(f"oracle objective {orc.objective:.9f} EUR ({orc.points} grid points, step {orc.step})")
    print(f"gap {gap:.3g}, bound L*step = {orc.gap_bound:.3g} (L = {orc.lipschitz_bound:.6g})")
    ok = gap >= -1e-6 and gap <= orc.gap_bound + 1e-9
    print("consistent" if ok else "INCONSISTENT")
    return 0 if ok else 1


# -- parser -------------------------------------------------------------------------

def _input_options(p):
    g = p.add_argument_group("inputs")
    g.add_argument("--meters", help="signed single-channel CSV (with --signed)")
    g.add_argument("--signed", action="store_true", help="meters file holds signed net values")
    g.add_argument("--consumption", help="consumption CSV (dual-channel input)")
    g.add_argument("--production", help="production CSV (dual-channel input)")
    g.add_argument("--tz", help="IANA zone of naive timestamps (default UTC)")
    g.add_argument("--keys", default="proportional-static",
                   help="initial key strategy: uniform, proportional-static, proportional-dynamic, explicit")
    g.add_argument("--key-file", help="explicit key CSV (with --keys explicit)")


def _model_options(p, prices=True):
    if prices:
        p.add_argument("--prices", help="JSON map member -> {buy, sell, local_buy, local_sell, deviation} in EUR/MWh")
    p.add_argument("--max-deviation", type=float, help="override every member's key tolerance")
    p.add_argument("--ssr-floor", type=float, help="uniform self-sufficiency floor for every member")
    p.add_argument("--method", choices=METHODS, default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recsettle", description="Optimal ex-post settlement of energy communities.")
    parser.add_argument("--version", action="version", version=f"recsettle {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("settle", help="optimise keys and write the settlement")
    _input_options(p)
    _model_options(p)
    p.add_argument("--out", default=DEFAULT_OUT, help="output directory")
    p.add_argument("--oracle", action="store_true", help="also run the brute-force oracle (tiny inputs only)")
    p.add_argument("--oracle-step", type=float, default=0.01)
    p.add_argument("--mps", help="also dump the LP in fixed MPS format to this file")
    p.set_defaults(func=cmd_settle)

    p = sub.add_parser("keys", help="compute initial keys")
    _input_options(p)
    p.add_argument("--out", help="output directory (default: print CSV)")
    p.set_defaults(func=cmd_keys)

    p = sub.add_parser("bill", help="settle and write bills with the no-community baseline")
    _input_options(p)
    _model_options(p)
    p.add_argument("--out", default=DEFAULT_OUT)
    p.set_defaults(func=cmd_bill)

    p = sub.add_parser("feasibility", help="largest uniform self-sufficiency floor")
    _input_options(p)
    _model_options(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("sweep", help="settle over a grid of one parameter")
    _input_options(p)
    _model_options(p)
    p.add_argument("--parameter", choices=("max-deviation", "ssr-floor"), default="max-deviation")
    p.add_argument("--grid", default=None, help="start:stop:step or comma list")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time model build and solve on synthetic data")
    p.add_argument("--T", type=int, default=1440, help="number of periods")
    p.add_argument("--I", type=int, default=10, help="number of members")
    p.add_argument("--sizes", help="several sizes, e.g. 1440x10,2880x100")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--method", choices=METHODS, default="auto")
    p.add_argument("--ssr-floor", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="compare the LP with the brute-force oracle")
    _input_options(p)
    _model_options(p)
    p.add_argument("--oracle-step", type=float, default=0.01)
    p.set_defaults(func=cmd_oracle)
    return parser


def _apply_config(parser, argv):
    """Load ``--config`` and install its entries as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return rest, None
    try:
        with open(known.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {known.config} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    base = Path(known.config).parent
    data = {k.replace("-", "_"): v for k, v in data.items()}
    for k in PATH_OPTIONS:
        if isinstance(data.get(k), str) and not os.path.isabs(data[k]):
            data[k] = str(base / data[k])
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subparsers.choices:
        return rest, data
    sp = subparsers.choices[command]
    known_dests = {a.dest for a in sp._actions}
    unknown = sorted(set(data) - known_dests)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    sp.set_defaults(**data)
    return rest, data


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        rest, config = _apply_config(parser, argv)
        args = parser.parse_args(rest)
        args.config_data = config
        return args.func(args)
    except InfeasibleSettlement as exc:
        print(f"ERROR:{exc.category}: {exc}", file=sys.stderr)
        return 2
    except RecSettleError as exc:
        print(f"ERROR:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR:io: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
