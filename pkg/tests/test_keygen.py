import io

import numpy as np
import pytest

from recsettle.errors import ConfigError, DegenerateInputError, SchemaError
from recsettle.keygen import (KeyMatrix, KeyStrategy, load_explicit_keys, make_keys, proportional_dynamic_keys,
                              proportional_static_keys, uniform_keys, validate_keys)
from recsettle.metering import MeterSeries
from recsettle.synthetic import synthetic_community


class TestUniform:
    def test_table1_first_period(self, table1):
        K = uniform_keys(table1).values
        np.testing.assert_allclose(K[0], [1 / 3, 1 / 3, 0, 1 / 3], atol=1e-15)

    def test_no_consumers(self):
        s = MeterSeries.from_signed(["a", "b"], [[-1.0, 0.0]])
        assert np.all(uniform_keys(s).values == 0)

    def test_single_consumer(self):
        s = MeterSeries.from_signed(["a", "b"], [[-1.0, 0.3]])
        assert uniform_keys(s).values.tolist() == [[0.0, 1.0]]


class TestProportionalStatic:
    def test_table1(self, table1):
        K = proportional_static_keys(table1).values
        np.testing.assert_allclose(K[0], [0.4222, 0.4889, 0.0, 0.0889], atol=5e-5)
        np.testing.assert_array_equal(K[0], K[1])

    def test_identical_members(self):
        s = MeterSeries.from_signed(["a", "b", "c"], [[0.3, 0.3, 0.3], [0.1, 0.1, 0.1]])
        K = proportional_static_keys(s).values
        assert np.all(K == K[0, 0])

    def test_single_holder(self):
        s = MeterSeries.from_signed(["a", "b"], [[0.0, 0.4], [-0.2, 0.1]])
        assert proportional_static_keys(s).values.tolist() == [[0.0, 1.0], [0.0, 1.0]]

    def test_degenerate(self):
        s = MeterSeries.from_signed(["a"], [[-1.0], [0.0]])
        with pytest.raises(DegenerateInputError):
            proportional_static_keys(s)


class TestProportionalDynamic:
    def test_table1_first_period(self, table1):
        K = proportional_dynamic_keys(table1).values
        np.testing.assert_allclose(K[0], [0.3696, 0.4565, 0.0, 0.1739], atol=5e-5)

    def test_zero_period(self):
        s = MeterSeries.from_signed(["a", "b"], [[0.0, -1.0], [1.0, 1.0]])
        K = proportional_dynamic_keys(s).values
        assert K[0].tolist() == [0.0, 0.0] and K[1].tolist() == [0.5, 0.5]

    def test_wasteless_initial_allocation(self, rng):
        for seed in range(10):
            s = synthetic_community(48, 6, seed=seed)
            K = proportional_dynamic_keys(s).values
            S = s.net_production.sum(axis=1, keepdims=True)
            short = (S[:, 0] <= s.net_consumption.sum(axis=1))
            A = K * S
            assert np.all(A[short] <= s.net_consumption[short] + 1e-12)


class TestInvariants:
    @pytest.mark.parametrize("fn", [uniform_keys, proportional_static_keys, proportional_dynamic_keys])
    def test_rows_sum_to_one(self, fn):
        s = synthetic_community(96, 7, seed=4)
        K = fn(s).values
        assert np.all((K >= 0) & (K <= 1))
        has = s.net_consumption.sum(axis=1) > 0
        np.testing.assert_allclose(K[has].sum(axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("bad", [[[0.5, 0.6]], [[-0.1, 0.5]], [[1.2, 0.0]], [[np.nan, 0.0]], [0.5, 0.5]])
    def test_validate(self, bad):
        with pytest.raises(SchemaError):
            validate_keys(np.array(bad))

    def test_key_matrix_read_only(self, table1):
        K = uniform_keys(table1)
        with pytest.raises(ValueError):
            K.values[0, 0] = 0.0
        assert np.asarray(K).shape == (2, 4)


class TestExplicit:
    def test_reordered_columns(self, table1):
        text = ("timestamp,User4,User3,User2,User1\n"
                "2017-03-01T00:00Z,0.1,0,0.3,0.6\n2017-03-01T00:15Z,0,0,0.5,0.5\n")
        K = load_explicit_keys(io.StringIO(text), table1).values
        assert K[0].tolist() == [0.6, 0.3, 0.0, 0.1]

    def test_row_sum_violation(self, table1):
        text = ("timestamp,User1,User2,User3,User4\n"
                "2017-03-01T00:00Z,0.6,0.6,0,0\n2017-03-01T00:15Z,0,0,0,0\n")
        with pytest.raises(SchemaError, match="sum"):
            load_explicit_keys(io.StringIO(text), table1)

    def test_member_mismatch(self, table1):
        text = "timestamp,User1,User2\n2017-03-01T00:00Z,0.5,0.5\n2017-03-01T00:15Z,0,0\n"
        with pytest.raises(SchemaError, match="members differ"):
            load_explicit_keys(io.StringIO(text), table1)

    def test_grid_mismatch(self, table1):
        text = "timestamp,User1,User2,User3,User4\n2017-03-02T00:00Z,0,0,0,0\n2017-03-02T00:15Z,0,0,0,0\n"
        with pytest.raises(SchemaError):
            load_explicit_keys(io.StringIO(text), table1)


class TestDispatch:
    @pytest.mark.parametrize("name", ["uniform", "proportional-static", "proportional_dynamic", "UNIFORM"])
    def test_names(self, table1, name):
        assert isinstance(make_keys(table1, name), KeyMatrix)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            KeyStrategy.parse("random")

    def test_explicit_needs_file(self, table1):
        with pytest.raises(ConfigError):
            make_keys(table1, KeyStrategy.EXPLICIT)
