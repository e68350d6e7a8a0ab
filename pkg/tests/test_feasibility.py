import numpy as np
import pytest

from recsettle.errors import InfeasibleSettlement
from recsettle.feasibility import max_uniform_ssr, with_uniform_floor
from recsettle.keygen import proportional_dynamic_keys, proportional_static_keys
from recsettle.metering import MeterSeries
from recsettle.settlement import settle
from recsettle.synthetic import reference_contract, synthetic_community


def feasible(series, K, s):
    try:
        settle(series, with_uniform_floor(series, reference_contract(), s), K, method="monolithic", diagnose=False)
        return True
    except InfeasibleSettlement:
        return False


class TestExamples:
    def test_no_production(self):
        s = MeterSeries.from_raw(["a", "b"], [[1.0, 0.5], [0.2, 0.3]], [[0.0, 0.0], [0.0, 0.0]])
        res = max_uniform_ssr(s, reference_contract(), [[0.5, 0.5], [0.5, 0.5]])
        assert res.s_star == pytest.approx(0.0, abs=1e-4)

    def test_behind_the_meter_only(self):
        # no community production: the floor is capped by the worst own-production ratio
        s = MeterSeries.from_raw(["a", "b"], [[1.0, 1.0], [1.0, 1.0]], [[0.5, 0.25], [0.5, 0.25]])
        res = max_uniform_ssr(s, reference_contract(), np.zeros((2, 2)))
        assert res.s_star == pytest.approx(0.25, abs=1e-4)
        assert res.s_star <= 0.25 + 1e-9

    def test_full_coverage(self):
        s = MeterSeries.from_signed(["c", "p"], [[0.4, -0.5], [0.3, -0.3]])
        res = max_uniform_ssr(s, reference_contract(), [[1.0, 0.0], [1.0, 0.0]])
        assert res.s_star == 1.0
        assert res.ssr[0] == pytest.approx(1.0)

    def test_synthetic_directional(self):
        s = synthetic_community(96, 24, seed=5)
        K = proportional_static_keys(s).values
        res = max_uniform_ssr(s, reference_contract(), K)
        assert 0.0 <= res.s_star <= 1.0
        assert res.ssr.min() >= res.baseline.ssr.min() - 1e-9
        assert res.result.objective >= res.baseline.objective - 1e-9


class TestBisection:
    @pytest.mark.parametrize("seed", range(3))
    def test_bracket(self, seed):
        s = synthetic_community(48, 6, seed=seed)
        K = proportional_dynamic_keys(s).values
        res = max_uniform_ssr(s, reference_contract(), K, tolerance=1e-4)
        assert feasible(s, K, res.s_star)
        if res.s_star < 1.0:
            assert not feasible(s, K, min(1.0, res.s_star + 1e-4))
        assert np.all(res.ssr >= res.s_star - 1e-7)

    def test_probe_count_is_logarithmic(self):
        s = synthetic_community(48, 6, seed=1)
        res = max_uniform_ssr(s, reference_contract(), proportional_static_keys(s).values, tolerance=1e-4)
        assert res.probes <= 3 + int(np.ceil(np.log2(1e4))) + 1

    def test_monotone(self):
        s = synthetic_community(48, 6, seed=3)
        K = proportional_static_keys(s).values
        grid = np.linspace(0, 1, 11)
        flags = [feasible(s, K, f) for f in grid]
        assert flags == sorted(flags, reverse=True)
