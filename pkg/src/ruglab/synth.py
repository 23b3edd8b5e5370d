"""Seeded synthetic DEX corpus with ground-truth rug archetypes.

Archetypes:

* ``honest``   steady trading (every gap < 40 min) for 5+ hours, TVL drawdown < 0.4
* ``tvl_rug``  liquidity drained to < 0.4% of its peak inside the first hour, trading stops
* ``idle_rug`` trading stops for good before minute 55, liquidity left in place
* ``late_rug`` honest-looking for the first hour, drained between minutes 75 and 200

Early-window signatures (creator owns the pool, thin trading, short deploy-to-trade
delays, ...) scale with ``signal``. Volumes and TVL scale per source with
``source_scale`` and deploy delays with ``source_delay_scale``; together they model
the cross-exchange distribution shift without touching any label.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .labeling import LabelConfig, label_idle, label_tvl
from .market_data import (
    DEFAULT_DATE_HI,
    DEFAULT_DATE_LO,
    ConfigError,
    PoolState,
    TokenHistory,
    TokenMeta,
    TradeEvent,
    save_corpus,
)

ARCHETYPES = ("honest", "tvl_rug", "idle_rug", "late_rug")
GROUND_TRUTH_FILE = "ground_truth.csv"

# (tvl-rug signature, idle-rug signature) strength per archetype
_PROFILE = {
    "honest": (0.0, 0.0),
    "tvl_rug": (1.0, 0.2),
    "idle_rug": (0.0, 1.0),
    "late_rug": (0.3, 0.0),
}
MAX_ACTIVE_GAP = 40 * 60
DAY = 86400


@dataclass(frozen=True)
class SynthConfig:
    n_tokens: int = 2000
    archetype_mix: dict = field(default_factory=lambda: {
        "honest": 0.6, "tvl_rug": 0.15, "idle_rug": 0.15, "late_rug": 0.1})
    stonfi_fraction: float = 0.5
    source_scale: dict = field(default_factory=lambda: {"stonfi": 1.0, "dedust": 2.5})
    # multiplier on deploy-to-first-trade delays per source
    source_delay_scale: dict = field(default_factory=lambda: {"stonfi": 1.0, "dedust": 4.0})
    seed: int = 0
    signal: float = 1.0
    trade_intensity: float = 1.5  # trades per minute at launch, before signatures
    price_volatility: float = 0.04
    honest_lifetime_minutes: int = 300
    out_of_window_fraction: float = 0.01
    zero_volume_fraction: float = 0.02
    missing_meta_fraction: float = 0.3
    no_meta_fraction: float = 0.02
    date_lo: int = DEFAULT_DATE_LO
    date_hi: int = DEFAULT_DATE_HI

    def __post_init__(self):
        if self.n_tokens < 1:
            raise ConfigError("n_tokens must be >= 1")
        if set(self.archetype_mix) - set(ARCHETYPES):
            raise ConfigError(f"unknown archetypes {set(self.archetype_mix) - set(ARCHETYPES)}")
        fr = [self.archetype_mix.get(a, 0.0) for a in ARCHETYPES]
        if any(not 0 <= f <= 1 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ConfigError("archetype fractions must lie in [0, 1] and sum to 1")
        if not 0 <= self.stonfi_fraction <= 1:
            raise ConfigError("stonfi_fraction must lie in [0, 1]")
        if set(self.source_scale) != {"stonfi", "dedust"} or min(self.source_scale.values()) <= 0:
            raise ConfigError("source_scale needs positive stonfi and dedust factors")
        if (set(self.source_delay_scale) != {"stonfi", "dedust"}
                or min(self.source_delay_scale.values()) <= 0):
            raise ConfigError("source_delay_scale needs positive stonfi and dedust factors")
        if self.signal < 0 or self.trade_intensity <= 0 or self.price_volatility < 0:
            raise ConfigError("signal, trade_intensity and price_volatility must be non-negative")
        for name in ("out_of_window_fraction", "zero_volume_fraction", "missing_meta_fraction",
                     "no_meta_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.honest_lifetime_minutes < 250:
            raise ConfigError("honest_lifetime_minutes must be >= 250")
        if self.date_hi - self.date_lo < 2 * DAY:
            raise ConfigError("date window must span at least two days")


@dataclass
class SynthCorpus:
    trades: list[TradeEvent]
    pools: list[PoolState]
    metas: list[TokenMeta]
    ground_truth: list[tuple[str, str]]

    def write(self, directory) -> Path:
        d = Path(directory)
        save_corpus(d, self.trades, self.pools, self.metas)
        with open(d / GROUND_TRUTH_FILE, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("token_id", "archetype"))
            w.writerows(self.ground_truth)
        return d


def read_ground_truth(path) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as f:
        r = csv.DictReader(f)
        return {row["token_id"]: row["archetype"] for row in r}


def _addr(rng: np.random.Generator) -> str:
    return "0:" + rng.bytes(32).hex()


@dataclass
class _Token:
    trades: list[TradeEvent]
    pools: list[PoolState]
    meta: Optional[TokenMeta]
    archetype: str
    in_window: bool


def _arrivals(rng, start: float, end: float, rate_per_min: float, cap: float) -> list[float]:
    """Poisson-like arrival times in (start, end) with every gap below ``cap`` seconds."""
    out = []
    t = start
    mean = 60.0 / rate_per_min
    while True:
        t += min(rng.exponential(mean), cap * rng.uniform(0.5, 0.99))
        if t >= end:
            return out
        out.append(t)


def _token(cfg: SynthConfig, index: int, archetype: str, source: str) -> _Token:
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.signal
    tvl_sig, idle_sig = _PROFILE[archetype]
    a, b = s * tvl_sig, s * idle_sig
    scale = cfg.source_scale[source]

    token_id = "EQ" + rng.bytes(16).hex()
    pool_id = "EQP" + rng.bytes(16).hex()
    creator = _addr(rng)

    in_window = rng.uniform() >= cfg.out_of_window_fraction
    if in_window:
        start = int(rng.integers(cfg.date_lo, cfg.date_hi - DAY))
    else:
        start = int(cfg.date_lo - rng.integers(DAY, 300 * DAY))

    delay = cfg.source_delay_scale[source]
    pool_delta = delay * rng.lognormal(math.log(1800) - 1.5 * a, 1.0)
    jetton_delta = delay * rng.lognormal(math.log(4 * 3600) - 1.6 * a, 1.2)
    pool_deployed = start - max(1, int(pool_delta))
    jetton_deployed = pool_deployed - int(jetton_delta)
    if rng.uniform() < 0.01:
        jetton_deployed = start + int(rng.integers(1, 3600))  # indexer artifact
    pool_creator = creator if rng.uniform() < min(0.95, 0.3 + 0.5 * a) else _addr(rng)

    tvl0 = rng.lognormal(math.log(3000) - 1.0 * a, 1.0) * scale
    rate = rng.lognormal(math.log(cfg.trade_intensity) - 1.1 * b, 0.5)
    new_trader_p = 0.9 - 0.5 * b
    buy_p = min(0.9, 0.6 + 0.2 * a - 0.2 * b)
    vol_mu = math.log(0.02 * tvl0) - 0.8 * b
    drift = 0.03 * a
    price_drift = -0.05 * b

    # ---- trade timeline (seconds after start)
    late_rate = max(0.1 * rate, 0.05)
    window = 300.0
    if archetype == "honest":
        end = 60.0 * cfg.honest_lifetime_minutes * rng.uniform(1.0, 1.3)
        rug_at = None
    elif archetype == "tvl_rug":
        end = 60.0 * (rng.uniform(1, 5) if rng.uniform() < 0.1 else rng.uniform(6, 55))
        rug_at = end
    elif archetype == "idle_rug":
        end = 60.0 * rng.uniform(1, 55)
        rug_at = None
    else:
        end = 60.0 * rng.uniform(75, 200)
        rug_at = end
    times = [0.0]
    times += _arrivals(rng, 0.0, min(window, end), rate, MAX_ACTIVE_GAP)
    if end > window:
        times += _arrivals(rng, times[-1], end, late_rate, MAX_ACTIVE_GAP)
    offsets = {int(t) for t in times}
    if archetype != "honest":
        offsets.add(int(end))  # final trade; for rugs the drain transaction
    offsets = sorted(offsets)

    # ---- per-trade quantities
    price = rng.lognormal(math.log(0.01), 2.0)
    tvl = tvl0
    peak = tvl0
    traders: list[str] = []
    lp_fee = {"stonfi": 0.002, "dedust": 0.0025}[source] * rng.choice([1.0, 1.5])
    proto_fee = {"stonfi": 0.001, "dedust": 0.0005}[source]
    fee_missing = {"stonfi": 0.1, "dedust": 0.5}[source]
    trades, pool_ts = [], {pool_deployed: tvl0}
    for k, off in enumerate(offsets):
        is_rug_tx = rug_at is not None and k == len(offsets) - 1
        side = "sell" if is_rug_tx else ("buy" if rng.uniform() < buy_p else "sell")
        if traders and rng.uniform() >= new_trader_p:
            trader = traders[int(rng.integers(len(traders)))]
        else:
            trader = _addr(rng)
            traders.append(trader)
        step = rng.normal(0.0, cfg.price_volatility)
        if is_rug_tx:
            price *= rng.uniform(0.001, 0.02)
            tvl = peak * rng.uniform(1e-5, 0.004)
        else:
            bias = cfg.price_volatility if side == "buy" else -cfg.price_volatility
            price *= math.exp(step + bias + price_drift)
            mu = drift if off < window else 0.0
            tvl = max(tvl * math.exp(rng.normal(mu, 0.05)), 0.62 * peak)
            peak = max(peak, tvl)
        volume = rng.lognormal(vol_mu, 0.8)
        missing = rng.uniform() < fee_missing
        trades.append(TradeEvent(
            token_id=token_id, pool_id=pool_id, tx_id=rng.bytes(12).hex(),
            timestamp=start + off, side=side, price=float(price), volume_usd=float(volume),
            trader_id=trader,
            lp_fee=None if missing else float(lp_fee),
            protocol_fee=None if missing else proto_fee,
            source=source,
        ))
        pool_ts[start + off] = float(tvl)

    n_zero = rng.binomial(len(offsets), cfg.zero_volume_fraction) if len(offsets) > 2 else 0
    for _ in range(n_zero):
        off = int(rng.integers(1, offsets[-1]))
        trades.append(TradeEvent(token_id, pool_id, rng.bytes(12).hex(), start + off,
                                 "buy", float(price), 0.0, _addr(rng), None, None, source))

    pools = [PoolState(pool_id, token_id, ts, v, pool_creator, pool_deployed, source)
             for ts, v in sorted(pool_ts.items())]

    meta = None
    if rng.uniform() >= cfg.no_meta_fraction:
        sparse = rng.uniform() < cfg.missing_meta_fraction
        odd = rng.uniform() < 0.05 + 0.15 * max(a, b)
        meta = TokenMeta(
            token_id=token_id,
            creator_id=None if sparse else creator,
            decimals=None if sparse and rng.uniform() < 0.5 else (6 if odd else 9),
            jetton_deployed_at=None if sparse and rng.uniform() < 0.5 else jetton_deployed,
            source=source,
        )
    trades.sort(key=lambda t: (t.timestamp, t.tx_id))
    return _Token(trades, pools, meta, archetype, in_window)


def _check(tok: _Token):
    """Assert the archetype's label contract with the labeling module as oracle."""
    trades = tuple(t for t in tok.trades if t.volume_usd > 0)
    meta = tok.meta or TokenMeta(trades[0].token_id, None, None, None, trades[0].source)
    h = TokenHistory(meta, trades, tuple(tok.pools))
    at60 = LabelConfig("tvl", 0.99, 60)
    tvl60 = label_tvl(h, at60).label
    idle60 = label_idle(h, at60).label
    want = {"honest": (0, 0), "tvl_rug": (1, 1), "idle_rug": (0, 1), "late_rug": (0, 0)}
    ok = (tvl60, idle60) == want[tok.archetype]
    if tok.archetype == "late_rug":
        at240 = LabelConfig("tvl", 0.99, 240)
        ok = ok and label_tvl(h, at240).label == 1 and label_idle(h, at240).label == 1
    if not ok:
        raise RuntimeError(f"generator produced {tok.archetype} token {meta.token_id} "
                           f"with labels tvl={tvl60} idle={idle60}")


def generate(cfg: SynthConfig) -> SynthCorpus:
    master = np.random.default_rng(cfg.seed)
    probs = np.array([cfg.archetype_mix.get(a, 0.0) for a in ARCHETYPES])
    kinds = master.choice(len(ARCHETYPES), size=cfg.n_tokens, p=probs / probs.sum())
    on_stonfi = master.uniform(size=cfg.n_tokens) < cfg.stonfi_fraction
    trades, pools, metas, truth = [], [], [], []
    for i in range(cfg.n_tokens):
        tok = _token(cfg, i, ARCHETYPES[kinds[i]], "stonfi" if on_stonfi[i] else "dedust")
        _check(tok)
        trades.extend(tok.trades)
        pools.extend(tok.pools)
        if tok.meta is not None:
            metas.append(tok.meta)
        truth.append((tok.trades[0].token_id, tok.archetype))
    return SynthCorpus(trades, pools, metas, truth)
