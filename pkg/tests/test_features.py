import io
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from builders import T0, history, pool, trade
from ruglab.features import (
    FEATURE_NAMES,
    TIMESTAMP_FEATURES,
    Preprocessor,
    PreprocessorError,
    extract_features,
    feature_matrix,
    fit_preprocessor,
    lower_median,
    read_features,
    write_features,
)
from ruglab.market_data import TokenMeta

CANONICAL_ORDER = (
    "buy_sell_ratio price_range buys sells buy_perc sell_perc unique_buyers unique_sellers "
    "total_usd_volume total_usd_buy_volume total_usd_sell_volume decimals avg_lp_fee "
    "avg_protocol_fee jetton_creation_trade_delta pool_creation_trade_delta is_pool_creator "
    "initial_tvl_usd initial_price initial_buy_price max_tvl min_tvl buy_price_std "
    "initial_sell_price sell_price_std price_max price_min price_delta price_std "
    "first_buy_time_ts first_sell_time_ts pool_deployment_at_ts jetton_deployment_at_ts"
).split()


def test_feature_names_follow_canonical_order():
    assert FEATURE_NAMES == tuple(CANONICAL_ORDER)
    assert len(FEATURE_NAMES) == 33
    assert set(TIMESTAMP_FEATURES) <= set(FEATURE_NAMES)


def _tiny():
    ts = [trade(T0, "buy", 1.0, 10.0, "A"), trade(T0 + 30, "buy", 1.2, 20.0, "B"),
          trade(T0 + 60, "sell", 1.1, 5.0, "A")]
    return history(ts, [pool(T0, 1000.0)])


def test_hand_enumerated_window():
    f = extract_features(_tiny())
    assert f["buys"] == 2 and f["sells"] == 1
    assert f["buy_sell_ratio"] == 2.0
    assert f["buy_perc"] == pytest.approx(2 / 3)
    assert f["sell_perc"] == pytest.approx(1 / 3)
    assert f["total_usd_volume"] == 35.0
    assert f["total_usd_buy_volume"] == 30.0
    assert f["total_usd_sell_volume"] == 5.0
    assert (f["price_max"], f["price_min"]) == (1.2, 1.0)
    assert f["price_range"] == pytest.approx(0.2)
    assert f["price_delta"] == pytest.approx(0.1)
    assert f["initial_price"] == 1.0 and f["initial_buy_price"] == 1.0
    assert f["initial_sell_price"] == 1.1
    assert f["unique_buyers"] == 2 and f["unique_sellers"] == 1
    assert f["buy_price_std"] == pytest.approx(0.1)  # population std of {1.0, 1.2}
    assert f["sell_price_std"] is None  # one sell
    assert f["price_std"] == pytest.approx(np.std([1.0, 1.2, 1.1]))
    assert f["first_buy_time_ts"] == T0 and f["first_sell_time_ts"] == T0 + 60


def test_zero_sells():
    f = extract_features(history([trade(T0), trade(T0 + 5)], [pool(T0, 1.0)]))
    for name in ("buy_sell_ratio", "initial_sell_price", "sell_price_std", "first_sell_time_ts"):
        assert f[name] is None
    assert f["total_usd_sell_volume"] == 0
    assert f["sell_perc"] == 0 and f["buy_perc"] == 1


def test_window_is_half_open():
    ts = [trade(T0), trade(T0 + 299, "sell"), trade(T0 + 300, "sell")]
    f = extract_features(history(ts, [pool(T0, 1.0)]))
    assert f["sells"] == 1
    assert extract_features(history(ts, [pool(T0, 1.0)]), observation_minutes=6)["sells"] == 2


def _with_meta(creator, pool_creator, jetton_at=None, pool_at=None, decimals=9):
    meta = TokenMeta("TOK1", creator, decimals, jetton_at, "stonfi")
    return history([trade(T0)], [pool(T0, 5.0, creator=pool_creator, deployed=pool_at)], meta)


def test_is_pool_creator():
    assert extract_features(_with_meta("X", "X"))["is_pool_creator"] == 1
    assert extract_features(_with_meta("X", "Y"))["is_pool_creator"] == 0
    assert extract_features(_with_meta(None, "Y"))["is_pool_creator"] is None
    assert extract_features(_with_meta("X", None))["is_pool_creator"] is None


def test_deltas_and_raw_timestamps():
    f = extract_features(_with_meta("X", "X", jetton_at=T0 - 3600, pool_at=T0 - 60))
    assert f["jetton_creation_trade_delta"] == 3600
    assert f["pool_creation_trade_delta"] == 60
    assert f["jetton_deployment_at_ts"] == T0 - 3600
    assert f["pool_deployment_at_ts"] == T0 - 60
    assert f["decimals"] == 9


def test_negative_delta_preserved():
    f = extract_features(_with_meta("X", "X", jetton_at=T0 + 100))
    assert f["jetton_creation_trade_delta"] == -100


def test_missing_meta_fields():
    f = extract_features(_with_meta(None, None, decimals=None))
    for name in ("decimals", "jetton_creation_trade_delta", "pool_creation_trade_delta",
                 "is_pool_creator", "pool_deployment_at_ts", "jetton_deployment_at_ts"):
        assert f[name] is None


def test_earliest_deployed_pool_is_the_origin():
    ps = [pool(T0, 5.0, "P2", creator="B", deployed=T0 - 10),
          pool(T0, 5.0, "P1", creator="A", deployed=T0 - 500)]
    meta = TokenMeta("TOK1", "A", None, None, "stonfi")
    f = extract_features(history([trade(T0)], ps, meta))
    assert f["pool_creation_trade_delta"] == 500
    assert f["is_pool_creator"] == 1


def test_tvl_extrema_include_carried_value():
    h = history([trade(T0)], [pool(T0 - 10, 500.0), pool(T0 + 120, 800.0), pool(T0 + 300, 1.0)])
    f = extract_features(h)
    assert (f["initial_tvl_usd"], f["max_tvl"], f["min_tvl"]) == (500.0, 800.0, 500.0)


def test_no_pool_in_window_leaves_tvl_missing():
    f = extract_features(history([trade(T0)], [pool(T0 + 400, 10.0)]))
    assert f["initial_tvl_usd"] is None and f["max_tvl"] is None


def test_fees_average_present_values():
    ts = [trade(T0, lp_fee=0.002), trade(T0 + 1, lp_fee=None), trade(T0 + 2, lp_fee=0.004)]
    f = extract_features(history(ts, [pool(T0, 1.0)]))
    assert f["avg_lp_fee"] == pytest.approx(0.003)
    assert f["avg_protocol_fee"] is None


def test_features_csv_roundtrip(small_histories):
    vs = [extract_features(h) for h in small_histories[:40]]
    s = io.StringIO()
    write_features(s, vs)
    s.seek(0)
    back = read_features(s)
    assert back == vs


def test_per_row_invariants(small_histories):
    for h in small_histories:
        f = extract_features(h)
        assert f["buys"] >= 0 and f["sells"] >= 0 and f["buys"] + f["sells"] >= 1
        assert f["buy_perc"] + f["sell_perc"] == pytest.approx(1.0)
        assert f["buy_perc"] == f["buys"] / (f["buys"] + f["sells"])
        assert f["price_max"] >= f["price_min"]
        assert f["price_range"] == f["price_max"] - f["price_min"]
        if f["max_tvl"] is not None:
            assert f["max_tvl"] >= f["min_tvl"]
        assert f["unique_buyers"] <= f["buys"] and f["unique_sellers"] <= f["sells"]
        assert f["total_usd_volume"] == f["total_usd_buy_volume"] + f["total_usd_sell_volume"]


def test_extraction_ignores_input_order(small_histories):
    from ruglab.market_data import assemble_histories

    rnd = random.Random(1)
    for h in small_histories[:25]:
        trades, pools = list(h.trades), list(h.pool_states)
        rnd.shuffle(trades)
        rnd.shuffle(pools)
        (h2,) = assemble_histories(trades, pools, [h.meta])
        assert extract_features(h2) == extract_features(h)


# ---------------------------------------------------------------- preprocessing


def test_lower_median():
    assert lower_median(np.array([1.0, 2.0, 4.0])) == 2.0
    assert lower_median(np.array([4.0, 1.0, 3.0, 2.0])) == 2.0


def _pre(cols, numeric="none", time="none", names=None):
    X = np.array(cols, dtype=float).T
    names = names or tuple(f"c{i}" for i in range(X.shape[1]))
    return fit_preprocessor(X, names, numeric, time), X


def test_median_skips_missing():
    pre, _ = _pre([[1, 2, np.nan, 4]])
    assert pre.medians[0] == 2.0


def test_constant_feature_scaled_to_zero():
    pre, X = _pre([[5, 5, 5]], numeric="zscore")
    assert pre.constant[0]
    assert np.all(pre.transform(X) == 0)


def test_all_missing_column():
    pre, X = _pre([[np.nan, np.nan], [1, 2]])
    assert pre.medians[0] == 0 and pre.constant[0]
    assert pre.transform(X)[:, 0].tolist() == [0.0, 0.0]


def test_transform_imputes_then_scales():
    pre, _ = _pre([[1, 2, 3, np.nan]], numeric="zscore")
    out = pre.transform(np.array([[np.nan], [2.0]]))
    assert out[1, 0] == 0.0  # equals the training mean
    assert out[0, 0] == pytest.approx((2.0 - 2.0) / np.std([1, 2, 3]))


def test_scaling_groups_are_independent():
    names = ("buys", "first_buy_time_ts")
    pre, X = _pre([[1, 2, 3], [10, 20, 30]], numeric="none", time="zscore", names=names)
    out = pre.transform(X)
    assert out[:, 0].tolist() == [1, 2, 3]
    assert out[:, 1].mean() == pytest.approx(0)
    pre, X = _pre([[1, 2, 3], [10, 20, 30]], numeric="zscore", time="none", names=names)
    out = pre.transform(X)
    assert out[:, 1].tolist() == [10, 20, 30]


def test_mode_none_is_idempotent():
    pre, X = _pre([[1, np.nan, 3], [np.nan, 5, 6]])
    once = pre.transform(X)
    assert not np.isnan(once).any()
    assert np.array_equal(pre.transform(once), once)


def test_preprocessor_errors():
    with pytest.raises(PreprocessorError):
        fit_preprocessor(np.empty((0, 2)), ("a", "b"))
    with pytest.raises(PreprocessorError):
        fit_preprocessor(np.ones((2, 2)), ("a",))
    with pytest.raises(PreprocessorError):
        fit_preprocessor(np.ones((2, 1)), ("a",), "minmax")
    pre, _ = _pre([[1, 2]])
    with pytest.raises(PreprocessorError):
        pre.transform(np.ones((2, 3)))
    with pytest.raises(PreprocessorError):
        pre.transform(np.ones((2, 1)), ("other",))


def test_preprocessor_dict_roundtrip():
    pre, X = _pre([[1, 2, np.nan], [3, 3, 3]], numeric="zscore")
    back = Preprocessor.from_dict(pre.to_dict())
    assert np.array_equal(back.transform(X), pre.transform(X))


@given(arrays(float, st.tuples(st.integers(4, 20), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6) | st.just(np.nan)),
       st.data())
def test_fit_ignores_rows_outside_training(X, data):
    n = X.shape[0]
    train = np.arange(n // 2)
    names = tuple(f"c{i}" for i in range(X.shape[1]))
    before = fit_preprocessor(X[train], names, "zscore", "zscore").to_dict()
    Y = X.copy()
    Y[n // 2:] = data.draw(arrays(float, Y[n // 2:].shape, elements=st.floats(-1e9, 1e9)))
    after = fit_preprocessor(Y[train], names, "zscore", "zscore").to_dict()
    assert before == after


def test_feature_matrix_marks_missing_as_nan(small_histories):
    vs = [extract_features(h) for h in small_histories[:10]]
    X = feature_matrix(vs)
    assert X.shape == (10, 33)
    for v, row in zip(vs, X):
        for name, x in zip(FEATURE_NAMES, row):
            assert (v[name] is None) == np.isnan(x)
