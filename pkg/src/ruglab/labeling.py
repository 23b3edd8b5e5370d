"""Rug-pull labels: maximum TVL drop inside the horizon, and the idle-gap rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .market_data import ConfigError, PoolState, TokenHistory

APPROACHES = ("idle", "tvl")
NO_LIQUIDITY = "no_liquidity"


class EmptyTvl(ValueError):
    """No pool state exists at or before the end of the window."""


@dataclass(frozen=True)
class LabelConfig:
    approach: str = "tvl"
    p: float = 0.99
    horizon_minutes: int = 60
    idle_gap_minutes: int = 60
    observation_minutes: int = 5

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise ConfigError(f"approach must be one of {APPROACHES}, got {self.approach!r}")
        if not 0 < self.p <= 1:
            raise ConfigError(f"p must lie in (0, 1], got {self.p}")
        for name in ("horizon_minutes", "idle_gap_minutes", "observation_minutes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.horizon_minutes < self.observation_minutes:
            raise ConfigError("horizon_minutes must be >= observation_minutes")


@dataclass(frozen=True)
class MaxDrop:
    md: float
    t0_offset: int
    tau_offset: int


@dataclass(frozen=True)
class LabelResult:
    token_id: str
    source: str
    approach: str
    label: int
    md: Optional[float] = None
    annotation: str = ""
    # offset (s) where the rug becomes visible: tau for tvl, gap start for idle
    event_offset: Optional[int] = None


def step_series(pool_states: Sequence[PoolState], start: int, end_offset: int,
                closed: bool = True) -> list[tuple[int, float]]:
    """Summed TVL of all pools as a step function over offsets [0, end_offset].

    States before ``start`` collapse into a single carried-forward point at offset 0.
    With ``closed=False`` the right end is excluded.
    """
    latest: dict[str, float] = {}
    points: list[tuple[int, float]] = []
    for s in sorted(pool_states, key=lambda s: (s.timestamp, s.pool_id, s.tvl_usd)):
        off = s.timestamp - start
        if off > end_offset or (not closed and off >= end_offset):
            break
        latest[s.pool_id] = s.tvl_usd
        total = math.fsum(latest[k] for k in sorted(latest))
        off = max(off, 0)
        if points and points[-1][0] == off:
            points[-1] = (off, total)
        else:
            points.append((off, total))
    if not points:
        raise EmptyTvl("no pool state at or before the end of the window")
    return points


def tvl_series(history: TokenHistory, horizon_minutes: int) -> list[tuple[int, float]]:
    return step_series(history.pool_states, history.trading_start, horizon_minutes * 60)


def max_drop_of_series(series: Sequence[tuple[int, float]]) -> MaxDrop:
    values = np.fromiter((v for _, v in series), dtype=float, count=len(series))
    i0 = int(np.argmax(values))
    j = i0 + int(np.argmin(values[i0:]))
    peak = values[i0]
    md = 0.0 if peak == 0 else abs(peak - values[j]) / peak
    return MaxDrop(md=float(md), t0_offset=series[i0][0], tau_offset=series[j][0])


def max_drop(history: TokenHistory, horizon_minutes: int) -> MaxDrop:
    return max_drop_of_series(tvl_series(history, horizon_minutes))


def label_tvl(history: TokenHistory, cfg: LabelConfig) -> LabelResult:
    try:
        d = max_drop(history, cfg.horizon_minutes)
    except EmptyTvl:
        return LabelResult(history.token_id, history.source, "tvl", 1, None, NO_LIQUIDITY, 0)
    label = int(d.md >= cfg.p)
    return LabelResult(history.token_id, history.source, "tvl", label, d.md, "",
                       d.tau_offset if label else None)


def trade_offsets(history: TokenHistory) -> np.ndarray:
    start = history.trading_start
    return np.fromiter((t.timestamp - start for t in history.trades), dtype=np.int64,
                       count=len(history.trades))


def first_idle_gap(offsets: np.ndarray, gap_seconds: int, horizon_seconds: int) -> Optional[int]:
    """Start offset of the earliest silence >= gap_seconds starting within the horizon."""
    gaps = np.empty(len(offsets), dtype=float)
    gaps[:-1] = np.diff(offsets)
    gaps[-1] = np.inf
    hit = np.flatnonzero((gaps >= gap_seconds) & (offsets >= 0) & (offsets <= horizon_seconds))
    return int(offsets[hit[0]]) if len(hit) else None


def label_idle(history: TokenHistory, cfg: LabelConfig) -> LabelResult:
    start = first_idle_gap(trade_offsets(history), cfg.idle_gap_minutes * 60,
                           cfg.horizon_minutes * 60)
    return LabelResult(history.token_id, history.source, "idle", int(start is not None),
                       None, "", start)


def label_history(history: TokenHistory, cfg: LabelConfig) -> LabelResult:
    if cfg.approach == "tvl":
        return label_tvl(history, cfg)
    return label_idle(history, cfg)


def is_early_rug(result: LabelResult, cfg: LabelConfig) -> bool:
    """True when the rug is already visible inside the observation window."""
    return (result.label == 1 and result.event_offset is not None
            and result.event_offset < cfg.observation_minutes * 60)


def label_corpus(histories: Iterable[TokenHistory], cfg: LabelConfig) -> list[LabelResult]:
    return [label_history(h, cfg) for h in histories]


def sweep_p(corpus: Sequence[TokenHistory], p_grid: Sequence[float],
            horizon_minutes: int = 60) -> list[tuple[float, float]]:
    """Fraction of tokens labeled rug under the TVL rule for each threshold p."""
    if not corpus:
        raise ValueError("empty corpus")
    if not p_grid:
        raise ValueError("empty p grid")
    for p in p_grid:
        if not 0 < p <= 1:
            raise ConfigError(f"p must lie in (0, 1], got {p}")
    mds = []
    for h in corpus:
        try:
            mds.append(max_drop(h, horizon_minutes).md)
        except EmptyTvl:
            mds.append(math.inf)  # no liquidity counts as rug at every p
    arr = np.asarray(mds)
    return [(float(p), float(np.mean(arr >= p))) for p in p_grid]


def sweep_horizon(corpus: Sequence[TokenHistory], horizons: Sequence[int],
                  cfg: LabelConfig) -> list[tuple[int, float]]:
    """Class-1 fraction for each prediction horizon (minutes)."""
    if not horizons:
        raise ValueError("empty horizon list")
    if not corpus:
        raise ValueError("empty corpus")
    out = []
    for hz in horizons:
        c = replace(cfg, horizon_minutes=int(hz))
        labels = [label_history(h, c).label for h in corpus]
        out.append((int(hz), float(np.mean(labels))))
    return out
