"""Trace summarization and the feature registry."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restartlab.features import (
    REGISTRY,
    STAT_NAMES,
    FeatureSpec,
    default_registry,
    normalize_for_multi,
    registry_hash,
    summarize,
    summary_columns,
)
from restartlab.latin import HoleSpec, UNBALANCED, generate_complete, poke_holes
from restartlab.solver import SolverConfig, solve

TWO = (
    FeatureSpec("a", True, "scaled toy"),
    FeatureSpec("b", False, "unscaled toy"),
)

TRACE = [[0, 5], [2, 3], [1, 4], [1, 7]]


class TestRegistry:
    def test_counts(self):
        assert len(REGISTRY) == 14
        assert len(STAT_NAMES) == 9
        assert len(summary_columns()) == 126

    def test_column_naming(self):
        cols = summary_columns()
        assert cols[0] == f"{REGISTRY[0].name}__init"
        assert all("__" in c for c in cols)
        # feature-major: the first 9 columns belong to the first feature
        assert {c.split("__")[0] for c in cols[:9]} == {REGISTRY[0].name}

    def test_split_variance_registry(self):
        pooled = default_registry(pooled_line_variance=True)
        split = default_registry(pooled_line_variance=False)
        assert len(split) == len(pooled) + 1
        names = {s.name for s in split}
        assert "row_var" in names and "col_var" in names
        assert "line_var" not in names

    def test_hash_stable_and_distinct(self):
        assert registry_hash() == registry_hash(default_registry())
        assert registry_hash(default_registry(True)) != registry_hash(
            default_registry(False)
        )

    def test_second_derivative_columns(self):
        cols = summary_columns(second_derivatives=True)
        assert len(cols) == 14 * 13
        assert any(c.endswith("__d2_avg") for c in cols)


class TestSummarize:
    def test_hand_computed_stats(self):
        sv = summarize(TRACE, horizon=10, registry=TWO)
        v = sv.values
        assert v["a__init"] == 0 and v["a__final"] == 1
        assert v["a__avg"] == 1.0
        assert v["a__min"] == 0 and v["a__max"] == 2
        assert math.isclose(v["a__d_avg"], 1 / 3)
        assert v["a__d_min"] == -1 and v["a__d_max"] == 2
        assert v["a__d_signchg"] == 1
        assert v["b__init"] == 5 and v["b__final"] == 7
        assert v["b__avg"] == 4.75
        assert v["b__min"] == 3 and v["b__max"] == 7
        assert math.isclose(v["b__d_avg"], 2 / 3)
        assert v["b__d_min"] == -2 and v["b__d_max"] == 3
        assert v["b__d_signchg"] == 1
        assert sv.divisor == 1.0 and not sv.censored

    def test_horizon_truncates(self):
        v = summarize(TRACE, horizon=3, registry=TWO).values
        assert v["a__final"] == 1
        assert v["a__avg"] == 1.0
        assert math.isclose(v["a__d_avg"], 0.5)
        assert v["a__d_min"] == -1 and v["a__d_max"] == 2

    def test_prefix_stability(self):
        # models must not see anything past the horizon
        longer = TRACE + [[99, 99], [5, 5]]
        assert (
            summarize(TRACE[:3], horizon=3, registry=TWO).values
            == summarize(longer, horizon=3, registry=TWO).values
        )

    def test_sign_change_zero_breaks_run(self):
        # diffs 1,0,-1: the zero separates the signs, no strict alternation
        trace = [[0], [1], [1], [0]]
        reg = (FeatureSpec("x", False, ""),)
        assert summarize(trace, 10, registry=reg).values["x__d_signchg"] == 0
        trace2 = [[0], [1], [0], [1]]
        assert summarize(trace2, 10, registry=reg).values["x__d_signchg"] == 2

    def test_short_trace_rejected(self):
        with pytest.raises(ValueError):
            summarize([[1, 2]], horizon=5, registry=TWO)
        with pytest.raises(ValueError):
            summarize([], horizon=5, registry=TWO)

    def test_bad_horizon_rejected(self):
        with pytest.raises(ValueError):
            summarize(TRACE, horizon=1, registry=TWO)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError):
            summarize([[1], [2]], horizon=5, registry=TWO)

    def test_censored_flag_carried(self):
        assert summarize(TRACE, 10, registry=TWO, censored=True).censored

    def test_second_derivatives(self):
        v = summarize(TRACE, 10, registry=TWO, second_derivatives=True).values
        assert v["a__d2_avg"] == -1.0
        assert v["a__d2_min"] == -3 and v["a__d2_max"] == 1
        assert v["a__d2_signchg"] == 1
        assert v["b__d2_avg"] == 2.5
        assert v["b__d2_min"] == 2 and v["b__d2_max"] == 3
        assert v["b__d2_signchg"] == 0

    def test_second_derivatives_degenerate(self):
        v = summarize(TRACE[:2], 10, registry=TWO, second_derivatives=True).values
        assert v["a__d2_avg"] == 0.0 and v["a__d2_signchg"] == 0.0

    def test_keys_match_columns(self):
        sv = summarize(TRACE, 10, registry=TWO)
        assert set(sv.values) == set(summary_columns(TWO))


class TestNormalizeForMulti:
    def test_scaled_feature_divided(self):
        sv = summarize(TRACE, 10, registry=TWO)
        out = normalize_for_multi(sv, 4, registry=TWO)
        assert out.divisor == 4.0
        assert out.values["a__final"] == sv.values["a__final"] / 4
        assert out.values["a__max"] == sv.values["a__max"] / 4
        assert out.values["a__d_min"] == sv.values["a__d_min"] / 4

    def test_sign_changes_untouched(self):
        sv = summarize(TRACE, 10, registry=TWO)
        out = normalize_for_multi(sv, 4, registry=TWO)
        assert out.values["a__d_signchg"] == sv.values["a__d_signchg"]

    def test_unscaled_feature_untouched(self):
        sv = summarize(TRACE, 10, registry=TWO)
        out = normalize_for_multi(sv, 4, registry=TWO)
        for stat in STAT_NAMES:
            assert out.values[f"b__{stat}"] == sv.values[f"b__{stat}"]

    def test_rejects_bad_size(self):
        sv = summarize(TRACE, 10, registry=TWO)
        with pytest.raises(ValueError):
            normalize_for_multi(sv, 0, registry=TWO)

    def test_original_not_mutated(self):
        sv = summarize(TRACE, 10, registry=TWO)
        before = dict(sv.values)
        normalize_for_multi(sv, 4, registry=TWO)
        assert sv.values == before


class TestLiveTraces:
    def test_trace_width_matches_registry(self):
        sq = generate_complete(9, seed=2)
        inst = poke_holes(sq, HoleSpec(mode=UNBALANCED, total_holes=55), seed=3)
        rec = solve(inst, SolverConfig(trace_enabled=True, horizon=30), seed=1)
        assert rec.trace
        assert all(len(row) == len(REGISTRY) for row in rec.trace)

    def test_trace_values_sane(self):
        sq = generate_complete(9, seed=2)
        inst = poke_holes(sq, HoleSpec(mode=UNBALANCED, total_holes=55), seed=3)
        rec = solve(inst, SolverConfig(trace_enabled=True, horizon=40), seed=1)
        names = [s.name for s in REGISTRY]
        arr = np.asarray(rec.trace)
        col = {n: arr[:, i] for i, n in enumerate(names)}
        n_open0 = col["open_cells"][0]
        assert 0 < n_open0 <= 55
        assert (col["open_cells"] >= 0).all()
        assert (col["min_domain"] >= 1).all()
        assert (col["avg_domain"] >= col["min_domain"]).all()
        assert (col["max_depth"] >= col["depth"]).all()
        assert (col["open_per_line"] == col["open_cells"] / 9).all()
        # cumulative counters never decrease
        for name in ("backtracks", "max_depth", "forced_assignments",
                     "contradictions", "alldiff_prunings"):
            assert (np.diff(col[name]) >= 0).all()

    def test_forward_check_has_no_prunings_counter_growth(self):
        from restartlab.solver import FORWARD_CHECK

        sq = generate_complete(9, seed=4)
        inst = poke_holes(sq, HoleSpec(mode=UNBALANCED, total_holes=50), seed=5)
        cfg = SolverConfig(
            trace_enabled=True, horizon=40, propagation=FORWARD_CHECK
        )
        rec = solve(inst, cfg, seed=2)
        idx = [s.name for s in REGISTRY].index("alldiff_prunings")
        assert all(row[idx] == 0 for row in rec.trace)


@settings(max_examples=40, deadline=None)
@given(
    rows=st.lists(
        st.tuples(
            st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False)
        ),
        min_size=2,
        max_size=12,
    ),
    horizon=st.integers(2, 15),
)
def test_summarize_matches_numpy_oracle(rows, horizon):
    sv = summarize(rows, horizon, registry=TWO)
    arr = np.asarray(rows[: min(horizon, len(rows))], dtype=float)
    for j, name in enumerate(("a", "b")):
        series = arr[:, j]
        diffs = np.diff(series)
        assert sv.values[f"{name}__init"] == series[0]
        assert sv.values[f"{name}__final"] == series[-1]
        assert math.isclose(sv.values[f"{name}__avg"], series.mean(), abs_tol=1e-12)
        assert sv.values[f"{name}__min"] == series.min()
        assert sv.values[f"{name}__max"] == series.max()
        assert math.isclose(sv.values[f"{name}__d_avg"], diffs.mean(), abs_tol=1e-12)
        signs = np.sign(diffs)
        changes = int(((signs[1:] * signs[:-1]) < 0).sum())
        assert sv.values[f"{name}__d_signchg"] == changes
