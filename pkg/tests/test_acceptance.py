"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed immediately (visible with ``-s``) and repeated in the
terminal summary by ``conftest.py``.  Run only this suite with::

    python3 -m pytest tests/test_acceptance.py -v

The performance criterion is marked ``slow``; deselect it with ``-m "not slow"``.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from recsettle.billing import baseline_bill, bill
from recsettle.errors import InfeasibleSettlement
from recsettle.feasibility import max_uniform_ssr, with_uniform_floor
from recsettle.keygen import proportional_dynamic_keys, proportional_static_keys
from recsettle.lp import Status, solve
from recsettle.metering import MeterSeries, ingest_signed
from recsettle.oracle import grid_search_settle
from recsettle.settlement import MemberContract, linearized_ssr_numerator, settle
from recsettle.synthetic import reference_contract, synthetic_community
from vertex_oracle import DenseLP, enumerate_vertices, random_small_lp

REPORT: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL for one criterion; ``info`` collects details for the line."""
    info: dict = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        line = f"ACCEPTANCE {number:>2} FAIL  {title} ({time.perf_counter() - t0:.2f} s): {exc!s:.200}"
        REPORT.append(line)
        print(line)
        raise
    details = ", ".join(f"{k}={v}" for k, v in info.items())
    line = f"ACCEPTANCE {number:>2} PASS  {title} ({time.perf_counter() - t0:.2f} s){': ' + details if details else ''}"
    REPORT.append(line)
    print(line)


def small_instance(rng, T, I):
    """Signed instance whose last member always injects."""
    x = np.round(rng.uniform(-1.0, 1.0, (T, I)), 3)
    x[:, -1] = -np.abs(x[:, -1]) - 0.05
    return MeterSeries.from_signed([f"m{i}" for i in range(I)], x)


def test_01_golden_table(table1_path):
    with criterion(1, "reference instance keys/flows within 0.01, < 1 s") as info:
        t0 = time.perf_counter()
        s = ingest_signed(table1_path)
        r = settle(s, reference_contract(tolerance=1.0, ssr_floor=0.0), proportional_static_keys(s).values)
        elapsed = time.perf_counter() - t0
        np.testing.assert_allclose(r.keys, [[0.39, 0.45, 0.0, 0.16], [0.47, 0.53, 0.0, 0.0]], atol=0.01)
        np.testing.assert_allclose(r.verified, [[0.17, 0.21, 0, 0.08], [0.15, 0.17, 0, 0]], atol=0.01)
        np.testing.assert_allclose(r.local_sales, [[0, 0, 0.46, 0], [0, 0, 0.30, 0.02]], atol=0.01)
        np.testing.assert_allclose(r.grid_sales[:, 2], [0.04, 0.0], atol=0.01)
        np.testing.assert_allclose(r.grid_sales[:, [0, 1, 3]], 0.0, atol=0.01)
        assert elapsed < 1.0, f"took {elapsed:.3f} s"
        info["objective"] = f"{r.objective:.6f}"
        info["runtime_s"] = f"{elapsed:.3f}"


def test_02_initial_keys(table1):
    with criterion(2, "proportional-static keys (0.4222, 0.4889, 0, 0.0889)"):
        K = proportional_static_keys(table1).values
        for t in range(2):
            np.testing.assert_allclose(K[t], [0.4222, 0.4889, 0.0, 0.0889], atol=5e-5)
        np.testing.assert_allclose(np.round(K[0], 2), [0.42, 0.49, 0.0, 0.09])


def test_03_linearization(rng):
    with criterion(3, "linearized ssr numerator exact on 10,000 cases") as info:
        n = 10_000
        q = 2.0 ** -12                       # dyadic grid: every sum below is exact in binary
        P = rng.integers(0, 4096, n) * q
        C = rng.integers(0, 4096, n) * q
        room = np.maximum(0.0, C - P)
        v = np.floor(rng.uniform(0, 1, n) * room / q) * q
        v[::7] = room[::7]                   # include the upper end of the precondition
        s = MeterSeries.from_raw(["m"], C[:, None], P[:, None])
        lhs = np.array([linearized_ssr_numerator(s, v[:, None], t, 0) for t in range(n)])
        rhs = np.minimum(P + v, C)
        assert np.array_equal(lhs, rhs), f"{np.count_nonzero(lhs != rhs)} mismatches"
        # rational cross-check of the identity itself, independent of floating point
        for p, c, w in zip(P[:500], C[:500], v[:500]):
            p, c, w = Fraction(p), Fraction(c), Fraction(w)
            assert min(p, c) + w == min(p + w, c)
        info["cases"] = n


def test_04_oracle():
    with criterion(4, "LP <= oracle + 1e-6 and oracle - LP <= L*step, 200 instances, < 60 s") as info:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            T, I = int(rng.integers(1, 3)), int(rng.integers(2, 5))
            s = small_instance(rng, T, I)
            K = rng.dirichlet(np.ones(I), size=T) * rng.uniform(0.5, 1.0)
            c = reference_contract(tolerance=float(rng.choice([0.0, 0.05, 0.2, 0.5, 1.0])))
            orc = grid_search_settle(s, c, K, step=0.01)
            lp = settle(s, c, K)
            gap = orc.objective - lp.objective
            assert gap >= -1e-6, f"LP {lp.objective} above oracle {orc.objective}"
            assert gap <= orc.gap_bound, f"gap {gap} exceeds bound {orc.gap_bound}"
            worst = max(worst, gap)
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f} s"
        info["max_gap"] = f"{worst:.3g}"


def _random_community(seed):
    rng = np.random.default_rng(seed)
    T, I = int(rng.integers(4, 17)), int(rng.integers(3, 8))
    s = synthetic_community(T, I, seed=seed, pv_scale=float(rng.uniform(0.5, 3.0)), cadence=3600)
    return s, rng


def test_05_monotonicity():
    with criterion(5, "objective monotone in X and floor, feasibility monotone, 50 instances") as info:
        floors = np.linspace(0.0, 1.0, 11)
        checked = 0
        for seed in range(50):
            s, rng = _random_community(seed)
            K = proportional_static_keys(s).values
            c = reference_contract()
            obj = [settle(s, c, K, max_deviation=x, diagnose=False).objective for x in (0, 0.25, 0.5, 0.75, 1.0)]
            assert all(b <= a + 1e-9 for a, b in zip(obj, obj[1:])), f"seed {seed}: {obj}"
            feas, fobj = [], []
            for f in floors:
                try:
                    r = settle(s, with_uniform_floor(s, c, f), K, method="monolithic", diagnose=False)
                    feas.append(True)
                    fobj.append(r.objective)
                except InfeasibleSettlement:
                    feas.append(False)
            assert feas == sorted(feas, reverse=True), f"seed {seed}: feasibility {feas}"
            assert all(b >= a - 1e-9 for a, b in zip(fobj, fobj[1:])), f"seed {seed}: {fobj}"
            checked += 1
        info["instances"] = checked


def test_06_dynamic_wasteless():
    with criterion(6, "dynamic keys with X=0 are wasteless, 50 instances") as info:
        worst = 0.0
        for seed in range(50):
            s, _ = _random_community(100 + seed)
            r = settle(s, reference_contract(), proportional_dynamic_keys(s).values, max_deviation=0.0)
            target = np.minimum(s.net_consumption.sum(axis=1), s.net_production.sum(axis=1))
            err = float(np.max(np.abs(r.verified.sum(axis=1) - target)))
            assert err <= 1e-7, f"seed {seed}: deviation {err}"
            worst = max(worst, err)
        info["max_error"] = f"{worst:.2g}"


def test_07_pointwise_savings():
    with criterion(7, "every bill line <= baseline under the price regime, 50 instances") as info:
        lines = 0
        for seed in range(50):
            s, rng = _random_community(200 + seed)
            contracts = []
            for _ in s.members:
                buy = rng.uniform(120, 320)
                sell = rng.uniform(0, 90)
                contracts.append(MemberContract.from_mwh(buy, sell, rng.uniform(sell, buy), rng.uniform(sell, buy),
                                                         deviation=rng.uniform(0, 0.1)))
            K = proportional_static_keys(s).values
            r = settle(s, contracts, K, max_deviation=float(rng.uniform(0, 1)))
            com, base = bill(s, contracts, r), baseline_bill(s, contracts)
            assert np.all(com.net <= base.net + 1e-9), f"seed {seed}: {np.max(com.net - base.net)}"
            lines += com.net.size
        info["bill_lines"] = lines


def test_08_ssr_redistribution():
    with criterion(8, "24-member community: s* feasible, s*+1e-4 infeasible, min ssr up, cost weakly up") as info:
        s = synthetic_community(192, 24, seed=11)
        K = proportional_static_keys(s).values
        c = reference_contract()
        res = max_uniform_ssr(s, c, K, tolerance=1e-4)
        base = res.baseline
        assert base.ssr.max() - base.ssr.min() > 0.1, "ssr spread is not heterogeneous"
        settle(s, with_uniform_floor(s, c, res.s_star), K, method="monolithic", diagnose=False)
        with pytest.raises(InfeasibleSettlement):
            settle(s, with_uniform_floor(s, c, res.s_star + 1e-4), K, method="monolithic", diagnose=False)
        assert res.ssr.min() > base.ssr.min(), "minimum ssr not raised"
        assert res.result.objective >= base.objective - 1e-9
        info["min_ssr"] = f"{base.ssr.min():.4f}->{res.ssr.min():.4f}"
        info["s_star"] = f"{res.s_star:.4f}"
        info["objective"] = f"{base.objective:.4f}->{res.result.objective:.4f}"


@pytest.mark.slow
def test_09_performance():
    with criterion(9, "2880x100: decomposed <= 30 s, monolithic with floors <= 240 s") as info:
        s = synthetic_community(2880, 100, seed=1)
        K = proportional_static_keys(s).values
        c = reference_contract()
        t0 = time.perf_counter()
        r = settle(s, c, K, method="decomposed", diagnose=False)
        dec = time.perf_counter() - t0
        floor = float(r.ssr.min() + 0.5 * (np.median(r.ssr) - r.ssr.min()))
        t0 = time.perf_counter()
        m = settle(s, with_uniform_floor(s, c, floor), K, method="monolithic", diagnose=False)
        mono = time.perf_counter() - t0
        info["decomposed_s"] = f"{dec:.1f}"
        info["monolithic_s"] = f"{mono:.1f}"
        assert m.ssr.min() >= floor - 1e-7
        assert m.objective >= r.objective - 1e-6 * abs(r.objective)
        assert dec <= 30.0, f"decomposed took {dec:.1f} s"
        assert mono <= 240.0, f"monolithic took {mono:.1f} s"


def test_10_solver_correctness():
    with criterion(10, "500 random LPs match vertex enumeration within 1e-6; repeats bit-identical") as info:
        rng = np.random.default_rng(777)
        counts = {"optimal": 0, "infeasible": 0, "unbounded": 0}
        for n in range(500):
            model = random_small_lp(rng, blocks=bool(n % 2))
            ref = enumerate_vertices(DenseLP.from_model(model))
            got = solve(model)
            counts[ref.status] += 1
            assert got.status is Status(ref.status), f"LP {n}: {got.status} vs {ref.status}"
            if ref.status == "optimal":
                assert abs(got.objective - ref.objective) <= 1e-6 * max(1.0, abs(ref.objective)), n
            again = solve(model)
            assert again.status is got.status
            if got.status is Status.OPTIMAL:
                assert again.values.tobytes() == got.values.tobytes()
                assert again.objective == got.objective
        info.update(counts)
