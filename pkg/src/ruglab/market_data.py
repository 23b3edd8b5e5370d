"""Raw DEX records, CSV ingestion, per-token history assembly and corpus filters."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Optional

SOURCES = ("stonfi", "dedust")
SIDES = ("buy", "sell")

TRADE_COLUMNS = (
    "token_id", "pool_id", "tx_id", "timestamp", "side", "price", "volume_usd",
    "trader_id", "lp_fee", "protocol_fee", "source",
)
POOL_COLUMNS = (
    "pool_id", "token_id", "timestamp", "tvl_usd", "pool_creator", "pool_deployed_at", "source",
)
TOKEN_COLUMNS = ("token_id", "creator_id", "decimals", "jetton_deployed_at", "source")

TRADES_FILE = "trades.csv"
POOLS_FILE = "pools.csv"
TOKENS_FILE = "tokens.csv"

DEFAULT_DATE_LO = int(datetime(2024, 1, 1, tzinfo=timezone.utc).timestamp())
DEFAULT_DATE_HI = int(datetime(2025, 4, 1, tzinfo=timezone.utc).timestamp())


class ParseError(ValueError):
    """A malformed row in one of the corpus files."""

    def __init__(self, filename: str, line: int, message: str):
        self.filename = filename
        self.line = line
        super().__init__(f"{filename}:{line}: {message}")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class TradeEvent:
    token_id: str
    pool_id: str
    tx_id: str
    timestamp: int
    side: str
    price: float
    volume_usd: float
    trader_id: str
    lp_fee: Optional[float]
    protocol_fee: Optional[float]
    source: str


@dataclass(frozen=True, slots=True)
class PoolState:
    pool_id: str
    token_id: str
    timestamp: int
    tvl_usd: float
    pool_creator: Optional[str]
    pool_deployed_at: Optional[int]
    source: str


@dataclass(frozen=True, slots=True)
class TokenMeta:
    token_id: str
    creator_id: Optional[str]
    decimals: Optional[int]
    jetton_deployed_at: Optional[int]
    source: str


@dataclass(frozen=True)
class TokenHistory:
    meta: TokenMeta
    trades: tuple[TradeEvent, ...]
    pool_states: tuple[PoolState, ...] = field(default_factory=tuple)

    @property
    def token_id(self) -> str:
        return self.meta.token_id

    @property
    def source(self) -> str:
        return self.meta.source

    @property
    def trading_start(self) -> int:
        return self.trades[0].timestamp


@dataclass(frozen=True)
class CorpusFilter:
    date_lo: int = DEFAULT_DATE_LO
    date_hi: int = DEFAULT_DATE_HI
    require_pool: bool = True

    def __post_init__(self):
        if self.date_lo > self.date_hi:
            raise ConfigError(f"date_lo ({self.date_lo}) is after date_hi ({self.date_hi})")


# ---------------------------------------------------------------- parsing


def _text(stream: IO, filename: str) -> IO[str]:
    # decode binary input up front so the caller keeps ownership of its stream
    if isinstance(stream, io.TextIOBase):
        return stream
    raw = stream.read()
    try:
        return io.StringIO(raw.decode("utf-8-sig"), newline="")
    except UnicodeDecodeError as e:
        line = raw[:e.start].count(b"\n") + 1
        raise ParseError(filename, line, "not valid UTF-8") from None


class _RowReader:
    def __init__(self, stream: IO, filename: str, columns: tuple[str, ...]):
        self.filename = filename
        self.reader = csv.reader(_text(stream, filename))
        try:
            header = next(self.reader)
        except StopIteration:
            raise ParseError(filename, 1, "missing header row") from None
        if tuple(h.strip() for h in header) != columns:
            raise ParseError(filename, 1, f"expected header {','.join(columns)}")
        self.columns = columns

    def __iter__(self):
        for row in self.reader:
            line = self.reader.line_num
            if not row:
                continue
            if len(row) != len(self.columns):
                raise ParseError(
                    self.filename, line, f"expected {len(self.columns)} cells, got {len(row)}"
                )
            yield line, dict(zip(self.columns, row))

    def fail(self, line: int, msg: str):
        raise ParseError(self.filename, line, msg)


def _req_str(r: _RowReader, line: int, row: dict, key: str) -> str:
    v = row[key]
    if v == "":
        r.fail(line, f"{key} is required")
    return v


def _opt_str(row: dict, key: str) -> Optional[str]:
    return row[key] or None


def _int(r: _RowReader, line: int, row: dict, key: str, optional: bool = False) -> Optional[int]:
    v = row[key]
    if v == "":
        if optional:
            return None
        r.fail(line, f"{key} is required")
    try:
        out = int(v)
    except ValueError:
        r.fail(line, f"{key}={v!r} is not an integer")
    return out


def _float(r: _RowReader, line: int, row: dict, key: str, optional: bool = False,
           nonneg: bool = True) -> Optional[float]:
    v = row[key]
    if v == "":
        if optional:
            return None
        r.fail(line, f"{key} is required")
    try:
        out = float(v)
    except ValueError:
        r.fail(line, f"{key}={v!r} is not a number")
    if not math.isfinite(out):
        r.fail(line, f"{key}={v!r} is not finite")
    if nonneg and out < 0:
        r.fail(line, f"{key}={v!r} is negative")
    return out


def _source(r: _RowReader, line: int, row: dict) -> str:
    v = row["source"]
    if v not in SOURCES:
        r.fail(line, f"unknown source tag {v!r}")
    return v


def _timestamp(r: _RowReader, line: int, row: dict, key: str, optional: bool = False):
    ts = _int(r, line, row, key, optional)
    if ts is not None and ts < 0:
        r.fail(line, f"{key}={ts} is negative")
    return ts


def read_trades(stream: IO, filename: str = TRADES_FILE) -> list[TradeEvent]:
    r = _RowReader(stream, filename, TRADE_COLUMNS)
    out = []
    for line, row in r:
        side = row["side"]
        if side not in SIDES:
            r.fail(line, f"side must be buy or sell, got {side!r}")
        out.append(TradeEvent(
            token_id=_req_str(r, line, row, "token_id"),
            pool_id=_req_str(r, line, row, "pool_id"),
            tx_id=_req_str(r, line, row, "tx_id"),
            timestamp=_timestamp(r, line, row, "timestamp"),
            side=side,
            price=_float(r, line, row, "price"),
            volume_usd=_float(r, line, row, "volume_usd"),
            trader_id=_req_str(r, line, row, "trader_id"),
            lp_fee=_float(r, line, row, "lp_fee", optional=True),
            protocol_fee=_float(r, line, row, "protocol_fee", optional=True),
            source=_source(r, line, row),
        ))
    return out


def read_pools(stream: IO, filename: str = POOLS_FILE) -> list[PoolState]:
    r = _RowReader(stream, filename, POOL_COLUMNS)
    out = []
    for line, row in r:
        out.append(PoolState(
            pool_id=_req_str(r, line, row, "pool_id"),
            token_id=_req_str(r, line, row, "token_id"),
            timestamp=_timestamp(r, line, row, "timestamp"),
            tvl_usd=_float(r, line, row, "tvl_usd"),
            pool_creator=_opt_str(row, "pool_creator"),
            pool_deployed_at=_timestamp(r, line, row, "pool_deployed_at", optional=True),
            source=_source(r, line, row),
        ))
    return out


def read_tokens(stream: IO, filename: str = TOKENS_FILE) -> list[TokenMeta]:
    r = _RowReader(stream, filename, TOKEN_COLUMNS)
    out = []
    seen: dict[str, int] = {}
    for line, row in r:
        token_id = _req_str(r, line, row, "token_id")
        if token_id in seen:
            r.fail(line, f"duplicate token_id {token_id!r} (first seen on line {seen[token_id]})")
        seen[token_id] = line
        decimals = _int(r, line, row, "decimals", optional=True)
        if decimals is not None and not 0 <= decimals <= 255:
            r.fail(line, f"decimals={decimals} outside [0, 255]")
        out.append(TokenMeta(
            token_id=token_id,
            creator_id=_opt_str(row, "creator_id"),
            decimals=decimals,
            jetton_deployed_at=_timestamp(r, line, row, "jetton_deployed_at", optional=True),
            source=_source(r, line, row),
        ))
    return out


def parse_corpus(trade_file: IO, pool_file: IO, meta_file: IO):
    """Parse the three export files into (trades, pools, metas)."""
    return (
        read_trades(trade_file, getattr(trade_file, "name", TRADES_FILE)),
        read_pools(pool_file, getattr(pool_file, "name", POOLS_FILE)),
        read_tokens(meta_file, getattr(meta_file, "name", TOKENS_FILE)),
    )


def load_corpus(directory) -> tuple[list[TradeEvent], list[PoolState], list[TokenMeta]]:
    d = Path(directory)
    paths = [d / TRADES_FILE, d / POOLS_FILE, d / TOKENS_FILE]
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"missing corpus file: {p}")
    with open(paths[0], "rb") as t, open(paths[1], "rb") as p, open(paths[2], "rb") as m:
        return (read_trades(t, str(paths[0])), read_pools(p, str(paths[1])),
                read_tokens(m, str(paths[2])))


# ---------------------------------------------------------------- writing


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write(stream: IO[str], columns, records: Iterable):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_cell(getattr(rec, c)) for c in columns])


def write_trades(stream: IO[str], trades: Iterable[TradeEvent]):
    _write(stream, TRADE_COLUMNS, trades)


def write_pools(stream: IO[str], pools: Iterable[PoolState]):
    _write(stream, POOL_COLUMNS, pools)


def write_tokens(stream: IO[str], metas: Iterable[TokenMeta]):
    _write(stream, TOKEN_COLUMNS, metas)


def save_corpus(directory, trades, pools, metas):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / TRADES_FILE, "w", encoding="utf-8", newline="") as f:
        write_trades(f, trades)
    with open(d / POOLS_FILE, "w", encoding="utf-8", newline="") as f:
        write_pools(f, pools)
    with open(d / TOKENS_FILE, "w", encoding="utf-8", newline="") as f:
        write_tokens(f, metas)


# ---------------------------------------------------------------- assembly


def _trade_key(t: TradeEvent):
    return (t.timestamp, t.tx_id, t.pool_id, t.side, t.price, t.volume_usd, t.trader_id)


def _pool_key(p: PoolState):
    return (p.timestamp, p.pool_id, p.tvl_usd)


def assemble_histories(trades: Iterable[TradeEvent], pools: Iterable[PoolState],
                       metas: Iterable[TokenMeta]) -> list[TokenHistory]:
    """Group records per token; one history per token that has at least one trade.

    Trades are ordered by (timestamp, tx_id). Tokens without a metadata row get a
    placeholder whose optional fields are all missing. Output is sorted by token_id.
    """
    by_token: dict[str, list[TradeEvent]] = defaultdict(list)
    for t in trades:
        by_token[t.token_id].append(t)
    pools_by_token: dict[str, list[PoolState]] = defaultdict(list)
    for p in pools:
        pools_by_token[p.token_id].append(p)
    meta_by_token = {m.token_id: m for m in metas}

    out = []
    for token_id in sorted(by_token):
        ts = sorted(by_token[token_id], key=_trade_key)
        meta = meta_by_token.get(token_id)
        if meta is None:
            meta = TokenMeta(token_id, None, None, None, ts[0].source)
        ps = sorted(pools_by_token.get(token_id, ()), key=_pool_key)
        out.append(TokenHistory(meta=meta, trades=tuple(ts), pool_states=tuple(ps)))
    return out


def filter_corpus(histories: Iterable[TokenHistory],
                  corpus_filter: CorpusFilter | None = None) -> list[TokenHistory]:
    """Drop zero-volume trades, pool-less tokens and tokens launched outside the date window."""
    f = corpus_filter or CorpusFilter()
    out = []
    for h in histories:
        trades = tuple(t for t in h.trades if t.volume_usd > 0)
        if not trades:
            continue
        if f.require_pool and not h.pool_states:
            continue
        if not f.date_lo <= trades[0].timestamp <= f.date_hi:
            continue
        out.append(h if len(trades) == len(h.trades) else replace(h, trades=trades))
    return out


def split_by_source(histories: Iterable[TokenHistory]) -> dict[str, list[TokenHistory]]:
    out: dict[str, list[TokenHistory]] = {s: [] for s in SOURCES}
    for h in histories:
        out[h.source].append(h)
    return out


def parse_date(text: str) -> int:
    """ISO date (YYYY-MM-DD, UTC) or raw unix seconds."""
    try:
        return int(text)
    except ValueError:
        pass
    d = datetime.fromisoformat(text)
    if d.tzinfo is None:
        d = d.replace(tzinfo=timezone.utc)
    return int(d.timestamp())
