import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from builders import T0, history, idle_history, pool, trade, tvl_history
from oracles import idle_scan, max_drop_pairs
from ruglab.labeling import (
    NO_LIQUIDITY,
    EmptyTvl,
    LabelConfig,
    ConfigError,
    first_idle_gap,
    is_early_rug,
    label_corpus,
    label_idle,
    label_tvl,
    max_drop,
    max_drop_of_series,
    step_series,
    sweep_horizon,
    sweep_p,
    tvl_series,
)

TVL = LabelConfig("tvl")
IDLE = LabelConfig("idle")


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("kw", [
    dict(approach="price"), dict(p=0), dict(p=1.01), dict(horizon_minutes=0),
    dict(horizon_minutes=3, observation_minutes=5), dict(idle_gap_minutes=-1),
])
def test_label_config_rejects(kw):
    with pytest.raises(ConfigError):
        LabelConfig(**kw)


def test_label_config_defaults():
    c = LabelConfig()
    assert (c.p, c.horizon_minutes, c.idle_gap_minutes, c.observation_minutes) == (0.99, 60, 60, 5)


# ---------------------------------------------------------------- TVL series


def test_series_singleton():
    assert tvl_series(tvl_history([(0, 1000.0)]), 60) == [(0, 1000.0)]


def test_series_carry_forward():
    h = tvl_history([(-10, 500.0), (120, 800.0)])
    assert tvl_series(h, 60) == [(0, 500.0), (120, 800.0)]


def test_series_only_after_horizon():
    with pytest.raises(EmptyTvl):
        tvl_series(tvl_history([(4000, 10.0)]), 60)


def test_series_keeps_the_horizon_end_point():
    assert tvl_series(tvl_history([(0, 5.0), (3600, 1.0), (3601, 0.0)]), 60) == [(0, 5.0), (3600, 1.0)]


def test_series_sums_pools_with_carry_forward():
    ps = [pool(T0, 100.0, "P1"), pool(T0 + 60, 50.0, "P2"), pool(T0 + 120, 10.0, "P1")]
    h = history([trade(T0)], ps)
    assert tvl_series(h, 60) == [(0, 100.0), (60, 150.0), (120, 60.0)]


def test_series_same_second_collapses_to_last_state():
    ps = [pool(T0 + 5, 100.0, "P1"), pool(T0 + 5, 40.0, "P2")]
    assert step_series(ps, T0, 60) == [(5, 140.0)]


def test_open_window_excludes_end():
    ps = [pool(T0, 1.0), pool(T0 + 300, 9.0)]
    assert step_series(ps, T0, 300, closed=False) == [(0, 1.0)]


# ---------------------------------------------------------------- max drop


def test_max_drop_300k_to_1():
    d = max_drop_of_series([(0, 300000.0), (1800, 1.0)])
    assert d.md == pytest.approx(299999 / 300000, abs=0)
    assert (d.t0_offset, d.tau_offset) == (0, 1800)
    assert d.md == pytest.approx(0.9999967, abs=1e-7)


def test_max_drop_constant():
    assert max_drop_of_series([(0, 1000.0), (600, 1000.0)]).md == 0


def test_max_drop_enumerated():
    d = max_drop_of_series([(0, 100.0), (600, 150.0), (1200, 90.0), (2400, 120.0), (3000, 30.0)])
    assert (d.t0_offset, d.tau_offset) == (600, 3000)
    assert d.md == pytest.approx(0.8, abs=1e-15)


def test_max_drop_zero_peak():
    d = max_drop_of_series([(0, 0.0), (10, 0.0)])
    assert (d.md, d.t0_offset, d.tau_offset) == (0.0, 0, 0)


def test_max_drop_ties_resolve_earliest():
    d = max_drop_of_series([(0, 5.0), (10, 9.0), (20, 1.0), (30, 9.0), (40, 1.0)])
    assert (d.t0_offset, d.tau_offset) == (10, 20)


series_st = st.lists(
    st.tuples(st.integers(0, 100), st.floats(0, 1e6, allow_nan=False)), min_size=1, max_size=30,
).map(lambda pts: sorted({o: v for o, v in pts}.items()))


@given(series_st)
def test_max_drop_matches_pair_oracle(series):
    d = max_drop_of_series(series)
    assert (d.md, d.t0_offset, d.tau_offset) == max_drop_pairs(series)
    assert 0 <= d.md <= 1
    assert d.t0_offset <= d.tau_offset


@given(series_st, st.integers(-20, 20))
def test_max_drop_scale_invariant_by_powers_of_two(series, k):
    scaled = [(o, math.ldexp(v, k)) for o, v in series]
    assert max_drop_of_series(scaled) == max_drop_of_series(series)


@given(series_st, st.floats(1e-3, 1e3))
def test_max_drop_scale_invariant(series, c):
    a = max_drop_of_series(series)
    b = max_drop_of_series([(o, v * c) for o, v in series])
    assume(all(v * c > 0 or v == 0 for _, v in series))
    assert b.md == pytest.approx(a.md, abs=1e-12)


# ---------------------------------------------------------------- TVL label


def test_label_tvl_300k_token():
    lab = label_tvl(tvl_history([(0, 300000.0), (1800, 1.0)]), TVL)
    assert lab.label == 1 and lab.event_offset == 1800


def test_label_tvl_flat():
    assert label_tvl(tvl_history([(0, 10.0)]), LabelConfig("tvl", p=0.01)).label == 0


def test_label_tvl_threshold_both_sides():
    h = tvl_history([(0, 100.0), (600, 150.0), (1200, 90.0), (2400, 120.0), (3000, 30.0)])
    assert label_tvl(h, LabelConfig("tvl", p=0.99)).label == 0
    assert label_tvl(h, LabelConfig("tvl", p=0.5)).label == 1


def test_label_tvl_uses_at_least_p():
    h = tvl_history([(0, 4.0), (60, 1.0)])  # md = 0.75 exactly
    assert label_tvl(h, LabelConfig("tvl", p=0.75)).label == 1


def test_label_tvl_no_liquidity():
    lab = label_tvl(history([trade(T0)]), TVL)
    assert lab.label == 1 and lab.annotation == NO_LIQUIDITY and lab.md is None


def test_drop_after_horizon_not_counted():
    h = tvl_history([(0, 100.0), (3700, 0.0)])
    assert label_tvl(h, TVL).label == 0
    assert label_tvl(h, LabelConfig("tvl", horizon_minutes=70)).label == 1


# ---------------------------------------------------------------- idle label


def test_idle_three_trades_then_silence():
    assert label_idle(idle_history([0, 600, 1800]), IDLE).label == 1


def test_idle_steady_trading():
    assert label_idle(idle_history(range(0, 120 * 60 + 1, 300)), IDLE).label == 0


def test_idle_single_trade():
    lab = label_idle(idle_history([0]), IDLE)
    assert lab.label == 1 and lab.event_offset == 0


def test_idle_gap_starting_after_horizon():
    offs = list(range(0, 61 * 60, 300)) + [61 * 60 + 10]
    assert label_idle(idle_history(offs), IDLE).label == 0


def test_idle_gap_exactly_the_threshold_counts():
    assert label_idle(idle_history([0, 3600, 3700]), IDLE).label == 1
    assert label_idle(idle_history([0, 3599, 3700, 7000]), IDLE).label == 0


offsets_st = st.lists(st.integers(0, 6 * 3600), min_size=1, max_size=40).map(
    lambda xs: sorted([0] + xs))


@given(offsets_st, st.integers(1, 120), st.integers(5, 240))
def test_idle_matches_scan(offsets, gap, horizon):
    cfg = LabelConfig("idle", horizon_minutes=horizon, idle_gap_minutes=gap)
    expected = idle_scan(offsets, gap * 60, horizon * 60)
    assert label_idle(idle_history(offsets), cfg).label == expected


@given(offsets_st, st.lists(st.integers(0, 5000), max_size=10))
def test_idle_invariant_to_late_trades(offsets, extra):
    start = first_idle_gap(np.array(offsets), 3600, 3600)
    assume(start is not None)
    later = offsets + [3600 + 3600 + 1 + e for e in extra]
    assert label_idle(idle_history(sorted(later)), IDLE).label == 1


def test_early_rug_flag():
    lab = label_idle(idle_history([0, 60]), IDLE)
    assert is_early_rug(lab, IDLE)
    lab = label_idle(idle_history([0, 400]), IDLE)
    assert not is_early_rug(lab, IDLE)
    assert not is_early_rug(label_tvl(tvl_history([(0, 1.0)]), TVL), TVL)


# ---------------------------------------------------------------- sweeps


def _md_token(md, i):
    return history([trade(T0, token=f"T{i}")],
                   [pool(T0, 100.0, token=f"T{i}"), pool(T0 + 60, 100.0 * (1 - md), token=f"T{i}")],
                   token=f"T{i}")


def test_sweep_p_direct_count():
    corpus = [_md_token(m, i) for i, m in enumerate([0.2, 0.6, 0.995, 1.0])]
    assert sweep_p(corpus, [0.5, 0.99]) == [(0.5, 0.75), (0.99, 0.5)]
    assert sweep_p(corpus, [1.0]) == [(1.0, 0.25)]


def test_sweep_p_counts_no_liquidity_everywhere():
    corpus = [history([trade(T0)]), _md_token(0.0, 1)]
    assert sweep_p(corpus, [0.5, 1.0]) == [(0.5, 0.5), (1.0, 0.5)]


def test_sweep_errors():
    with pytest.raises(ValueError):
        sweep_p([], [0.5])
    with pytest.raises(ValueError):
        sweep_p([_md_token(0.5, 0)], [])
    with pytest.raises(ConfigError):
        sweep_p([_md_token(0.5, 0)], [0.0])
    with pytest.raises(ValueError):
        sweep_horizon([_md_token(0.5, 0)], [], TVL)
    with pytest.raises(ValueError):
        sweep_horizon([], [60], TVL)


def test_sweep_horizon_tvl_direct_count():
    def drop_at(minute, i):
        return history([trade(T0, token=f"T{i}")],
                       [pool(T0, 100.0, token=f"T{i}"),
                        pool(T0 + minute * 60, 0.0, token=f"T{i}")], token=f"T{i}")
    corpus = [drop_at(30, 0), drop_at(90, 1), _md_token(0.1, 2)]
    out = sweep_horizon(corpus, [20, 60, 120], TVL)
    assert out == [(20, 0.0), (60, 1 / 3), (120, 2 / 3)]


def test_sweep_horizon_single_token():
    out = sweep_horizon([idle_history([0, 600])], [5, 30, 60], IDLE)
    assert [f for _, f in out] == [0.0, 1.0, 1.0]


@given(st.lists(st.lists(st.tuples(st.integers(0, 7200), st.floats(0, 1e4, allow_nan=False)),
                         min_size=1, max_size=8), min_size=1, max_size=8),
       st.lists(st.floats(0.01, 1.0), min_size=1, max_size=10))
def test_sweep_p_non_increasing(series_list, grid):
    corpus = [tvl_history(sorted(dict(s).items())) for s in series_list]
    fr = [f for _, f in sweep_p(corpus, sorted(grid))]
    assert all(a >= b for a, b in zip(fr, fr[1:]))


@given(st.lists(offsets_st, min_size=1, max_size=6),
       st.lists(st.integers(5, 300), min_size=1, max_size=8))
def test_sweep_horizon_idle_non_decreasing(offset_sets, horizons):
    corpus = [idle_history(o) for o in offset_sets]
    fr = [f for _, f in sweep_horizon(corpus, sorted(horizons), IDLE)]
    assert all(a <= b for a, b in zip(fr, fr[1:]))


def test_labels_deterministic(small_histories):
    a = label_corpus(small_histories, TVL)
    assert a == label_corpus(small_histories, TVL)
    assert label_corpus(small_histories, IDLE) == label_corpus(small_histories, IDLE)
