"""Launch-window features (first minutes of trading) and train-only preprocessing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .labeling import EmptyTvl, step_series
from .market_data import TokenHistory

FEATURE_NAMES = (
    "buy_sell_ratio",
    "price_range",
    "buys",
    "sells",
    "buy_perc",
    "sell_perc",
    "unique_buyers",
    "unique_sellers",
    "total_usd_volume",
    "total_usd_buy_volume",
    "total_usd_sell_volume",
    "decimals",
    "avg_lp_fee",
    "avg_protocol_fee",
    "jetton_creation_trade_delta",
    "pool_creation_trade_delta",
    "is_pool_creator",
    "initial_tvl_usd",
    "initial_price",
    "initial_buy_price",
    "max_tvl",
    "min_tvl",
    "buy_price_std",
    "initial_sell_price",
    "sell_price_std",
    "price_max",
    "price_min",
    "price_delta",
    "price_std",
    "first_buy_time_ts",
    "first_sell_time_ts",
    "pool_deployment_at_ts",
    "jetton_deployment_at_ts",
)

# scaled as a separate group from the other numeric columns
TIMESTAMP_FEATURES = (
    "jetton_creation_trade_delta",
    "pool_creation_trade_delta",
    "first_buy_time_ts",
    "first_sell_time_ts",
    "pool_deployment_at_ts",
    "jetton_deployment_at_ts",
)

SCALING_MODES = ("none", "zscore")


class PreprocessorError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    token_id: str
    source: str
    values: dict[str, Optional[float]]

    def __getitem__(self, name: str) -> Optional[float]:
        return self.values[name]

    def as_array(self, names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
        return np.array([np.nan if self.values[n] is None else self.values[n] for n in names],
                        dtype=float)


def _pstd(xs: Sequence[float]) -> Optional[float]:
    if len(xs) < 2:
        return None
    return float(np.std(np.asarray(xs, dtype=float)))


def _mean_present(xs: Iterable[Optional[float]]) -> Optional[float]:
    vals = [x for x in xs if x is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _pool_origin(history: TokenHistory) -> tuple[Optional[int], Optional[str]]:
    """Deployment time and creator of the earliest-deployed pool."""
    deployed = sorted(
        (s.pool_deployed_at, s.pool_id, s.pool_creator)
        for s in history.pool_states if s.pool_deployed_at is not None
    )
    if deployed:
        at, _, creator = deployed[0]
        if creator is None:
            creator = next((s.pool_creator for s in history.pool_states if s.pool_creator), None)
        return at, creator
    creator = next((s.pool_creator for s in history.pool_states if s.pool_creator), None)
    return None, creator


def extract_features(history: TokenHistory, observation_minutes: int = 5) -> FeatureVector:
    start = history.trading_start
    end = start + observation_minutes * 60
    window = [t for t in history.trades if t.timestamp < end]
    if not window:
        raise RuntimeError(f"{history.token_id}: no trades in observation window")
    buys = [t for t in window if t.side == "buy"]
    sells = [t for t in window if t.side == "sell"]
    nb, ns = len(buys), len(sells)
    prices = [t.price for t in window]
    buy_vol = math.fsum(t.volume_usd for t in buys)
    sell_vol = math.fsum(t.volume_usd for t in sells)

    meta = history.meta
    pool_deployed_at, pool_creator = _pool_origin(history)
    if meta.creator_id is None or pool_creator is None:
        is_creator = None
    else:
        is_creator = float(meta.creator_id == pool_creator)

    try:
        series = step_series(history.pool_states, start, observation_minutes * 60, closed=False)
        tvls = [v for _, v in series]
        initial_tvl, max_tvl, min_tvl = tvls[0], max(tvls), min(tvls)
    except EmptyTvl:
        initial_tvl = max_tvl = min_tvl = None

    def delta(ts):
        return None if ts is None else float(start - ts)

    def opt(v):
        return None if v is None else float(v)

    values = {
        "buy_sell_ratio": nb / ns if ns else None,
        "price_range": max(prices) - min(prices),
        "buys": float(nb),
        "sells": float(ns),
        "buy_perc": nb / (nb + ns),
        "sell_perc": ns / (nb + ns),
        "unique_buyers": float(len({t.trader_id for t in buys})),
        "unique_sellers": float(len({t.trader_id for t in sells})),
        "total_usd_volume": buy_vol + sell_vol,
        "total_usd_buy_volume": buy_vol,
        "total_usd_sell_volume": sell_vol,
        "decimals": opt(meta.decimals),
        "avg_lp_fee": _mean_present(t.lp_fee for t in window),
        "avg_protocol_fee": _mean_present(t.protocol_fee for t in window),
        "jetton_creation_trade_delta": delta(meta.jetton_deployed_at),
        "pool_creation_trade_delta": delta(pool_deployed_at),
        "is_pool_creator": is_creator,
        "initial_tvl_usd": initial_tvl,
        "initial_price": prices[0],
        "initial_buy_price": buys[0].price if buys else None,
        "max_tvl": max_tvl,
        "min_tvl": min_tvl,
        "buy_price_std": _pstd([t.price for t in buys]),
        "initial_sell_price": sells[0].price if sells else None,
        "sell_price_std": _pstd([t.price for t in sells]),
        "price_max": max(prices),
        "price_min": min(prices),
        "price_delta": prices[-1] - prices[0],
        "price_std": _pstd(prices),
        "first_buy_time_ts": float(buys[0].timestamp) if buys else None,
        "first_sell_time_ts": float(sells[0].timestamp) if sells else None,
        "pool_deployment_at_ts": opt(pool_deployed_at),
        "jetton_deployment_at_ts": opt(meta.jetton_deployed_at),
    }
    return FeatureVector(history.token_id, history.source, values)


def feature_matrix(vectors: Sequence[FeatureVector],
                   names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
    if not vectors:
        return np.empty((0, len(names)))
    return np.vstack([v.as_array(names) for v in vectors])


def write_features(stream: IO[str], vectors: Iterable[FeatureVector]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("token_id", "source") + FEATURE_NAMES)
    for v in vectors:
        w.writerow([v.token_id, v.source]
                   + ["" if v.values[n] is None else repr(float(v.values[n])) for n in FEATURE_NAMES])


def read_features(stream: IO[str]) -> list[FeatureVector]:
    reader = csv.reader(stream)
    header = next(reader)
    if tuple(header) != ("token_id", "source") + FEATURE_NAMES:
        raise ValueError("features file header does not match the feature set")
    return [
        FeatureVector(row[0], row[1],
                      {n: (float(c) if c != "" else None) for n, c in zip(FEATURE_NAMES, row[2:])})
        for row in reader if row
    ]


# ---------------------------------------------------------------- preprocessing


@dataclass(frozen=True)
class Preprocessor:
    """Median imputation followed by optional per-group z-scoring.

    Statistics come from the training rows only; missing cells are NaN.
    """

    feature_names: tuple[str, ...]
    medians: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray
    numeric_mode: str = "none"
    time_mode: str = "none"

    def _scaled_columns(self) -> np.ndarray:
        is_time = np.array([n in TIMESTAMP_FEATURES for n in self.feature_names])
        mask = np.zeros(len(self.feature_names), dtype=bool)
        if self.numeric_mode == "zscore":
            mask |= ~is_time
        if self.time_mode == "zscore":
            mask |= is_time
        return mask

    def transform(self, X: np.ndarray, feature_names: Sequence[str] | None = None) -> np.ndarray:
        if feature_names is not None and tuple(feature_names) != self.feature_names:
            raise PreprocessorError("column names differ from the ones seen at fit time")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise PreprocessorError(
                f"expected {len(self.feature_names)} columns, got shape {X.shape}")
        out = np.where(np.isnan(X), self.medians, X)
        scale = self._scaled_columns()
        if scale.any():
            z = np.where(self.constant, 0.0,
                         (out - self.means) / np.where(self.constant, 1.0, self.stds))
            out = np.where(scale, z, out)
        return out

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "medians": [float(v) for v in self.medians],
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
            "constant": [bool(v) for v in self.constant],
            "numeric_mode": self.numeric_mode,
            "time_mode": self.time_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(
            feature_names=tuple(d["feature_names"]),
            medians=np.array(d["medians"], dtype=float),
            means=np.array(d["means"], dtype=float),
            stds=np.array(d["stds"], dtype=float),
            constant=np.array(d["constant"], dtype=bool),
            numeric_mode=d["numeric_mode"],
            time_mode=d["time_mode"],
        )


def lower_median(values: np.ndarray) -> float:
    v = np.sort(values)
    return float(v[(len(v) - 1) // 2])


def fit_preprocessor(X: np.ndarray, feature_names: Sequence[str] = FEATURE_NAMES,
                     numeric_mode: str = "none", time_mode: str = "none") -> Preprocessor:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise PreprocessorError("cannot fit on an empty matrix")
    if X.shape[1] != len(feature_names):
        raise PreprocessorError("column count does not match feature names")
    for mode in (numeric_mode, time_mode):
        if mode not in SCALING_MODES:
            raise PreprocessorError(f"unknown scaling mode {mode!r}")
    d = X.shape[1]
    medians, means, stds = np.zeros(d), np.zeros(d), np.zeros(d)
    constant = np.zeros(d, dtype=bool)
    for j in range(d):
        col = X[:, j]
        col = col[~np.isnan(col)]
        if len(col) == 0:
            constant[j] = True
            continue
        medians[j] = lower_median(col)
        means[j] = float(np.mean(col))
        stds[j] = float(np.std(col))
        constant[j] = not stds[j] > 0
    return Preprocessor(tuple(feature_names), medians, means, stds, constant,
                        numeric_mode, time_mode)
