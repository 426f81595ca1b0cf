"""Market data model: trades, quotes, trading calendar and tape ingestion.

A :class:`Tape` stores each stock's trades and quotes as columnar numpy
arrays.  Record-level views (:class:`Trade`, :class:`QuoteSnapshot`) are
available for inspection and for building small fixtures by hand.
"""

from __future__ import annotations

import csv
import enum
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

NS_PER_SECOND = 1_000_000_000

TRADE_COLUMNS = ("timestamp_ns", "stock", "price", "shares", "buyer_member", "seller_member", "aggressor")
QUOTE_COLUMNS = ("timestamp_ns", "stock", "bid", "ask")
CALENDAR_COLUMNS = ("date", "open_ns", "close_ns")


class TapeError(ValueError):
    """Input tape cannot be used (bad header, unordered timestamps, ...)."""


class SchemaError(TapeError):
    def __init__(self, path, expected: Sequence[str], found: Sequence[str]):
        self.expected = tuple(expected)
        self.found = tuple(found)
        super().__init__(f"{path}: expected header {','.join(expected)!r}, found {','.join(found)!r}")


class UnorderedTimestampsError(TapeError):
    def __init__(self, path, line: int, stock: str):
        self.line = line
        self.stock = stock
        super().__init__(f"{path}: line {line}: timestamp decreases within stock {stock!r}")


class NoQuoteError(LookupError):
    """Raised when no quote prevails at the requested time."""

    def __str__(self):
        return "NoQuote" + (f": {self.args[0]}" if self.args else "")


class Aggressor(enum.IntEnum):
    SELLER = -1
    UNKNOWN = 0
    BUYER = 1

    @property
    def code(self) -> str:
        return {1: "B", -1: "S", 0: "U"}[int(self)]

    @classmethod
    def from_code(cls, code: str) -> "Aggressor":
        return {"B": cls.BUYER, "S": cls.SELLER, "U": cls.UNKNOWN}[code]


@dataclass(frozen=True)
class Trade:
    timestamp: int
    stock: str
    price: float
    shares: int
    buyer_member: str
    seller_member: str
    aggressor: Aggressor = Aggressor.UNKNOWN

    def __post_init__(self):
        if not self.price > 0:
            raise ValueError(f"price must be positive, got {self.price}")
        if self.shares <= 0:
            raise ValueError(f"shares must be positive, got {self.shares}")
        if not self.buyer_member or not self.seller_member:
            raise ValueError("member codes must be non-empty")
        if not self.stock:
            raise ValueError("stock must be non-empty")

    @property
    def volume(self) -> float:
        return self.price * self.shares


@dataclass(frozen=True)
class QuoteSnapshot:
    timestamp: int
    stock: str
    bid: float
    ask: float

    def __post_init__(self):
        if not (self.bid > 0 and self.ask >= self.bid):
            raise ValueError(f"need ask >= bid > 0, got bid={self.bid} ask={self.ask}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class TradingCalendar:
    """Ordered, non-overlapping trading sessions.

    Durations inside the package are measured in *trading time*: the clock
    runs only while a session is open, so overnight and weekend gaps are
    excised.
    """

    dates: Tuple[str, ...]
    open_ns: np.ndarray
    close_ns: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.open_ns, dtype=np.int64)
        c = np.asarray(self.close_ns, dtype=np.int64)
        object.__setattr__(self, "open_ns", o)
        object.__setattr__(self, "close_ns", c)
        if not (len(self.dates) == len(o) == len(c)):
            raise ValueError("calendar columns differ in length")
        if np.any(c <= o):
            raise ValueError("every session must have close > open")
        if np.any(o[1:] < c[:-1]):
            raise ValueError("sessions must be chronologically ordered and non-overlapping")
        lengths = c - o
        cum = np.zeros(len(o) + 1, dtype=np.int64)
        np.cumsum(lengths, out=cum[1:])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_sessions(cls, sessions: Iterable[Tuple[str, int, int]]) -> "TradingCalendar":
        sessions = list(sessions)
        return cls(
            tuple(s[0] for s in sessions),
            np.array([s[1] for s in sessions], dtype=np.int64),
            np.array([s[2] for s in sessions], dtype=np.int64),
        )

    def __len__(self):
        return len(self.dates)

    @property
    def session_lengths_ns(self) -> np.ndarray:
        return self.close_ns - self.open_ns

    @property
    def years(self) -> np.ndarray:
        return np.array([int(d[:4]) for d in self.dates], dtype=np.int64)

    def session_index(self, t) -> np.ndarray:
        """Index of the last session opening at or before ``t`` (-1 if none)."""
        return np.searchsorted(self.open_ns, np.asarray(t, dtype=np.int64), side="right") - 1

    def trading_ns(self, t) -> np.ndarray:
        """Map wall-clock nanoseconds to cumulative trading nanoseconds."""
        t = np.asarray(t, dtype=np.int64)
        k = self.session_index(t)
        kc = np.clip(k, 0, len(self) - 1)
        inside = np.clip(t - self.open_ns[kc], 0, self.session_lengths_ns[kc])
        return np.where(k < 0, 0, self._cum[kc] + inside)

    def wall_ns(self, tau) -> np.ndarray:
        """Inverse of :meth:`trading_ns`.

        Trading instants that coincide with a session close map to that
        close; anything past the last close is extrapolated from it.
        """
        tau = np.asarray(tau, dtype=np.int64)
        k = np.searchsorted(self._cum, tau, side="left") - 1
        k = np.clip(k, 0, len(self) - 1)
        return self.open_ns[k] + (tau - self._cum[k])

    def trading_seconds_between(self, t0, t1) -> np.ndarray:
        return (self.trading_ns(t1) - self.trading_ns(t0)) / NS_PER_SECOND

    @property
    def total_trading_ns(self) -> int:
        return int(self._cum[-1])

    def year_window(self, year: int) -> Tuple[int, int]:
        mask = self.years == year
        if not mask.any():
            raise KeyError(f"no sessions in {year}")
        return int(self.open_ns[mask][0]), int(self.close_ns[mask][-1])


@dataclass
class StockTape:
    """Columnar trades and quotes of one stock.

    ``aggressor`` holds +1 (buyer), -1 (seller) or 0 (unknown); member
    columns hold integer codes into :attr:`Tape.members`.  ``trade_line`` and
    ``quote_line`` keep the source line numbers for diagnostics.
    """

    stock: str
    ts: np.ndarray
    price: np.ndarray
    shares: np.ndarray
    buyer: np.ndarray
    seller: np.ndarray
    aggressor: np.ndarray
    quote_ts: np.ndarray
    bid: np.ndarray
    ask: np.ndarray
    trade_line: np.ndarray = field(default=None, repr=False)
    quote_line: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.trade_line is None:
            self.trade_line = np.arange(len(self.ts), dtype=np.int64)
        if self.quote_line is None:
            self.quote_line = np.arange(len(self.quote_ts), dtype=np.int64)
        for name in ("ts", "price", "shares", "buyer", "seller", "aggressor", "quote_ts", "bid", "ask"):
            getattr(self, name).setflags(write=False)

    @property
    def n_trades(self) -> int:
        return len(self.ts)

    @property
    def volume(self) -> np.ndarray:
        return self.price * self.shares

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.bid + self.ask)

    def quote_index(self, t, side: str = "right") -> np.ndarray:
        """Index of the prevailing quote at ``t`` (-1 when none)."""
        return np.searchsorted(self.quote_ts, np.asarray(t, dtype=np.int64), side=side) - 1

    @property
    def has_prevailing_quote(self) -> np.ndarray:
        """False for trades that happen before the stock's first quote."""
        return self.quote_index(self.ts) >= 0


@dataclass
class IngestReport:
    trades_read: int = 0
    quotes_read: int = 0
    sessions_read: int = 0
    rejected: List[Tuple[str, int, str]] = field(default_factory=list)
    no_prevailing_quote: int = 0

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)

    def as_dict(self) -> dict:
        return {
            "trades_read": self.trades_read,
            "quotes_read": self.quotes_read,
            "sessions_read": self.sessions_read,
            "rejected_rows": self.n_rejected,
            "no_prevailing_quote": self.no_prevailing_quote,
        }


class Tape:
    """Validated, immutable trade and quote tape for a set of stocks."""

    def __init__(self, stocks: Mapping[str, StockTape], members: Sequence[str], calendar: TradingCalendar,
                 report: IngestReport | None = None):
        self._stocks = dict(sorted(stocks.items()))
        self.members = tuple(members)
        self.calendar = calendar
        self.report = report or IngestReport()

    def __getitem__(self, stock: str) -> StockTape:
        try:
            return self._stocks[stock]
        except KeyError:
            raise KeyError(f"unknown stock {stock!r}") from None

    def __contains__(self, stock):
        return stock in self._stocks

    @property
    def stocks(self) -> List[str]:
        return list(self._stocks)

    @property
    def n_trades(self) -> int:
        return sum(s.n_trades for s in self._stocks.values())

    @property
    def n_quotes(self) -> int:
        return sum(len(s.quote_ts) for s in self._stocks.values())

    def member_code(self, member: str) -> int:
        return self.members.index(member)

    def trades(self, stock: str) -> Iterator[Trade]:
        st = self[stock]
        for i in range(st.n_trades):
            yield Trade(int(st.ts[i]), stock, float(st.price[i]), int(st.shares[i]),
                        self.members[st.buyer[i]], self.members[st.seller[i]], Aggressor(int(st.aggressor[i])))

    def quotes(self, stock: str) -> Iterator[QuoteSnapshot]:
        st = self[stock]
        for i in range(len(st.quote_ts)):
            yield QuoteSnapshot(int(st.quote_ts[i]), stock, float(st.bid[i]), float(st.ask[i]))

    @classmethod
    def from_records(cls, trades: Iterable[Trade], quotes: Iterable[QuoteSnapshot],
                     calendar: TradingCalendar) -> "Tape":
        """Build a tape from record objects (convenient for small fixtures)."""
        trades = list(trades)
        quotes = list(quotes)
        tdf = pd.DataFrame({
            "timestamp_ns": [t.timestamp for t in trades],
            "stock": [t.stock for t in trades],
            "price": [t.price for t in trades],
            "shares": [t.shares for t in trades],
            "buyer_member": [t.buyer_member for t in trades],
            "seller_member": [t.seller_member for t in trades],
            "aggressor": [int(t.aggressor) for t in trades],
        })
        qdf = pd.DataFrame({
            "timestamp_ns": [q.timestamp for q in quotes],
            "stock": [q.stock for q in quotes],
            "bid": [q.bid for q in quotes],
            "ask": [q.ask for q in quotes],
        })
        return _assemble(tdf, qdf, calendar, IngestReport(len(trades), len(quotes), len(calendar)), "<records>")

    def __eq__(self, other):
        if not isinstance(other, Tape):
            return NotImplemented
        if self.stocks != other.stocks or not _calendar_equal(self.calendar, other.calendar):
            return False
        for s in self.stocks:
            a, b = self[s], other[s]
            if [self.members[i] for i in a.buyer] != [other.members[i] for i in b.buyer]:
                return False
            if [self.members[i] for i in a.seller] != [other.members[i] for i in b.seller]:
                return False
            for name in ("ts", "price", "shares", "aggressor", "quote_ts", "bid", "ask"):
                if not np.array_equal(getattr(a, name), getattr(b, name)):
                    return False
        return True


def _calendar_equal(a: TradingCalendar, b: TradingCalendar) -> bool:
    return (a.dates == b.dates and np.array_equal(a.open_ns, b.open_ns)
            and np.array_equal(a.close_ns, b.close_ns))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_INT_COLUMNS = {"timestamp_ns", "shares", "open_ns", "close_ns"}
_FLOAT_COLUMNS = {"price", "bid", "ask"}


def _read_table(path, columns: Sequence[str]) -> pd.DataFrame:
    """Read a CSV, keeping the 1-based source line in ``_line``.

    Well-formed files are parsed with typed numeric columns in one pass.
    Otherwise every field is read as a string and validated row by row;
    rows with the wrong number of fields are kept as all-empty rows so that
    they are rejected downstream with their own line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
    if tuple(header) != tuple(columns):
        raise SchemaError(path, columns, header)
    dtypes = {c: (np.int64 if c in _INT_COLUMNS else np.float64 if c in _FLOAT_COLUMNS else str) for c in columns}
    try:
        df = pd.read_csv(path, dtype=dtypes, na_filter=False, keep_default_na=False, skip_blank_lines=False,
                         engine="c", float_precision="round_trip")
        df["_line"] = np.arange(2, len(df) + 2, dtype=np.int64)
        return df
    except (ValueError, OverflowError, pd.errors.ParserError):
        log.debug("%s: typed read failed, validating row by row", path)
    try:
        df = pd.read_csv(path, dtype=str, na_filter=False, skip_blank_lines=False,
                         keep_default_na=False, engine="c")
        # short rows come back padded with empty strings and fail validation
        df["_line"] = np.arange(2, len(df) + 2, dtype=np.int64)
        return df
    except pd.errors.ParserError:
        log.info("%s: ragged rows found, falling back to the row-by-row reader", path)
    rows, lines = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            lines.append(reader.line_num)
            rows.append(row if len(row) == len(columns) else [""] * len(columns))
    df = pd.DataFrame(rows, columns=list(columns))
    df["_line"] = np.asarray(lines, dtype=np.int64)
    return df


_INT64_MAX = str(np.iinfo(np.int64).max)


def _int_column(s: pd.Series) -> Tuple[np.ndarray, np.ndarray]:
    if s.dtype.kind == "i":
        return s.to_numpy(dtype=np.int64), np.ones(len(s), dtype=bool)
    ok = s.str.fullmatch(r"-?\d{1,19}").to_numpy(dtype=bool)
    digits = s.str.lstrip("-")
    # 19-digit values may overflow int64; same-length strings compare numerically
    wide = ok & (digits.str.len() == 19).to_numpy(dtype=bool)
    ok[wide] = (digits[wide] <= _INT64_MAX).to_numpy(dtype=bool)
    out = np.zeros(len(s), dtype=np.int64)
    if ok.any():
        out[ok] = s[ok].astype(np.int64).to_numpy()
    return out, ok


def _float_column(s: pd.Series) -> Tuple[np.ndarray, np.ndarray]:
    if s.dtype.kind == "f":
        v = s.to_numpy(dtype=np.float64)
        return v, np.isfinite(v)
    # to_numeric is not correctly rounded; numpy's string cast is
    ok = s.str.fullmatch(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?").to_numpy(dtype=bool)
    v = np.full(len(s), np.nan)
    if ok.any():
        v[ok] = s[ok].to_numpy().astype(np.float64)
    return v, np.isfinite(v)


def _reject(report: IngestReport, path, df: pd.DataFrame, bad: np.ndarray, reason: str):
    for line in df["_line"].to_numpy()[bad]:
        report.rejected.append((str(path), int(line), reason))


def read_calendar(path) -> TradingCalendar:
    df = _read_table(path, CALENDAR_COLUMNS)
    o, ok_o = _int_column(df["open_ns"])
    c, ok_c = _int_column(df["close_ns"])
    bad = ~(ok_o & ok_c) | (df["date"] == "").to_numpy()
    if bad.any():
        line = int(df["_line"].to_numpy()[bad][0])
        raise TapeError(f"{path}: line {line}: malformed calendar row")
    return TradingCalendar(tuple(df["date"]), o, c)


def _parse_trades(path, report: IngestReport) -> pd.DataFrame:
    df = _read_table(path, TRADE_COLUMNS)
    ts, ok_ts = _int_column(df["timestamp_ns"])
    price, ok_p = _float_column(df["price"])
    shares, ok_sh = _int_column(df["shares"])
    agg = df["aggressor"].map({"B": 1, "S": -1, "U": 0})
    ok_agg = agg.notna().to_numpy()
    checks = [
        (~ok_ts, "bad timestamp"),
        (~ok_p | ~(price > 0), "price must be positive"),
        (~ok_sh | ~(shares > 0), "shares must be a positive integer"),
        (~ok_agg, "aggressor must be B, S or U"),
        ((df["stock"] == "").to_numpy(), "empty stock"),
        (((df["buyer_member"] == "") | (df["seller_member"] == "")).to_numpy(), "empty member code"),
    ]
    bad = np.zeros(len(df), dtype=bool)
    for mask, reason in checks:
        _reject(report, path, df, mask & ~bad, reason)
        bad |= mask
    out = pd.DataFrame({
        "timestamp_ns": ts, "stock": df["stock"].to_numpy(), "price": price, "shares": shares,
        "buyer_member": df["buyer_member"].to_numpy(), "seller_member": df["seller_member"].to_numpy(),
        "aggressor": agg.fillna(0).to_numpy(dtype=np.int8), "_line": df["_line"].to_numpy(),
    })[~bad]
    report.trades_read = len(df)
    return out


def _parse_quotes(path, report: IngestReport) -> pd.DataFrame:
    df = _read_table(path, QUOTE_COLUMNS)
    ts, ok_ts = _int_column(df["timestamp_ns"])
    bid, ok_b = _float_column(df["bid"])
    ask, ok_a = _float_column(df["ask"])
    checks = [
        (~ok_ts, "bad timestamp"),
        (~(ok_b & ok_a) | ~(bid > 0) | ~(ask >= bid), "need ask >= bid > 0"),
        ((df["stock"] == "").to_numpy(), "empty stock"),
    ]
    bad = np.zeros(len(df), dtype=bool)
    for mask, reason in checks:
        _reject(report, path, df, mask & ~bad, reason)
        bad |= mask
    out = pd.DataFrame({"timestamp_ns": ts, "stock": df["stock"].to_numpy(), "bid": bid, "ask": ask,
                        "_line": df["_line"].to_numpy()})[~bad]
    report.quotes_read = len(df)
    return out


def _check_order(df: pd.DataFrame, path):
    """Raise on the first line whose timestamp goes backwards within its stock."""
    if df.empty:
        return
    prev = df.groupby("stock", sort=False)["timestamp_ns"].shift(1)
    back = (df["timestamp_ns"] < prev).to_numpy()
    if back.any():
        first = np.flatnonzero(back)[0]
        raise UnorderedTimestampsError(path, int(df["_line"].iloc[first]), df["stock"].iloc[first])


def _assemble(tdf: pd.DataFrame, qdf: pd.DataFrame, calendar: TradingCalendar, report: IngestReport,
              path) -> Tape:
    if "_line" not in tdf:
        tdf = tdf.assign(_line=np.arange(2, len(tdf) + 2))
    if "_line" not in qdf:
        qdf = qdf.assign(_line=np.arange(2, len(qdf) + 2))
    _check_order(tdf, path)
    _check_order(qdf, path)
    members = sorted(set(tdf["buyer_member"]).union(tdf["seller_member"]))
    code = {m: i for i, m in enumerate(members)}
    stocks = {}
    tgroups = {k: g for k, g in tdf.groupby("stock", sort=True)}
    qgroups = {k: g for k, g in qdf.groupby("stock", sort=True)}
    for stock in sorted(set(tgroups) | set(qgroups)):
        t = tgroups.get(stock, tdf.iloc[:0])
        q = qgroups.get(stock, qdf.iloc[:0])
        st = StockTape(
            stock=stock,
            ts=t["timestamp_ns"].to_numpy(dtype=np.int64),
            price=t["price"].to_numpy(dtype=np.float64),
            shares=t["shares"].to_numpy(dtype=np.int64),
            buyer=t["buyer_member"].map(code).to_numpy(dtype=np.int32),
            seller=t["seller_member"].map(code).to_numpy(dtype=np.int32),
            aggressor=t["aggressor"].to_numpy(dtype=np.int8),
            quote_ts=q["timestamp_ns"].to_numpy(dtype=np.int64),
            bid=q["bid"].to_numpy(dtype=np.float64),
            ask=q["ask"].to_numpy(dtype=np.float64),
            trade_line=t["_line"].to_numpy(dtype=np.int64),
            quote_line=q["_line"].to_numpy(dtype=np.int64),
        )
        report.no_prevailing_quote += int((~st.has_prevailing_quote).sum())
        stocks[stock] = st
    return Tape(stocks, members, calendar, report)


def ingest_tape(trade_file, quote_file, calendar_file) -> Tape:
    """Read and validate the three tape CSV files.

    Malformed rows are dropped and listed in ``tape.report.rejected`` as
    ``(path, line, reason)``.  A timestamp that decreases within one stock
    is a hard error naming the offending line.  Trades that precede the
    stock's first quote are kept; see :attr:`StockTape.has_prevailing_quote`.
    """
    for p in (trade_file, quote_file, calendar_file):
        if not Path(p).exists():
            raise FileNotFoundError(p)
    report = IngestReport()
    calendar = read_calendar(calendar_file)
    report.sessions_read = len(calendar)
    tdf = _parse_trades(trade_file, report)
    _check_order(tdf, trade_file)
    qdf = _parse_quotes(quote_file, report)
    _check_order(qdf, quote_file)
    tape = _assemble(tdf, qdf, calendar, report, trade_file)
    if report.n_rejected:
        log.warning("rejected %d malformed rows", report.n_rejected)
    return tape


def write_tape(tape: Tape, trade_file, quote_file, calendar_file) -> None:
    """Write the canonical CSV form of ``tape`` (stock-major, time-ordered)."""
    members = np.asarray(tape.members, dtype=object)
    tparts, qparts = [], []
    for s in tape.stocks:
        st = tape[s]
        tparts.append(pd.DataFrame({
            "timestamp_ns": st.ts, "stock": s, "price": st.price, "shares": st.shares,
            "buyer_member": members[st.buyer] if st.n_trades else [],
            "seller_member": members[st.seller] if st.n_trades else [],
            "aggressor": np.array(["S", "U", "B"], dtype=object)[st.aggressor.astype(np.int64) + 1],
        }))
        qparts.append(pd.DataFrame({"timestamp_ns": st.quote_ts, "stock": s, "bid": st.bid, "ask": st.ask}))
    write_csv(pd.concat(tparts, ignore_index=True) if tparts else pd.DataFrame(columns=TRADE_COLUMNS), trade_file)
    write_csv(pd.concat(qparts, ignore_index=True) if qparts else pd.DataFrame(columns=QUOTE_COLUMNS), quote_file)
    write_calendar(tape.calendar, calendar_file)


def write_calendar(calendar: TradingCalendar, path) -> None:
    write_csv(pd.DataFrame({"date": list(calendar.dates), "open_ns": calendar.open_ns,
                            "close_ns": calendar.close_ns}), path)


def write_csv(df: pd.DataFrame, path) -> None:
    """UTF-8, LF line endings, shortest round-trip float formatting."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Quote-derived quantities
# ---------------------------------------------------------------------------

def midprice_at(tape: Tape, stock: str, t: int) -> float:
    """Midprice of the latest quote with timestamp <= ``t``."""
    st = tape[stock]
    k = int(st.quote_index(t))
    if k < 0:
        raise NoQuoteError(f"{stock} at t={t}")
    return 0.5 * (st.bid[k] + st.ask[k])


def midprices_at(st: StockTape, t) -> np.ndarray:
    """Vectorised :func:`midprice_at`; NaN where no quote prevails."""
    k = st.quote_index(t)
    mid = st.mid
    out = np.full(np.shape(k), np.nan)
    ok = k >= 0
    out[ok] = mid[k[ok]]
    return out


def mean_relative_spread(tape: Tape, stock: str, window: Tuple[int, int]) -> float:
    """Time-weighted mean of (ask - bid) / mid over ``window``.

    Each quote is weighted by how long it prevails inside the window,
    measured in trading time.  Quotes alive before the window start count
    from the start.
    """
    st = tape[stock]
    w0, w1 = int(window[0]), int(window[1])
    if w1 <= w0:
        raise ValueError(f"empty window {window}")
    first = int(st.quote_index(w0))
    last = int(st.quote_index(w1, side="left"))
    lo = max(first, 0)
    if last < lo or len(st.quote_ts) == 0:
        raise NoQuoteError(f"no quote prevails in window {window} for {stock}")
    idx = np.arange(lo, last + 1)
    starts = np.maximum(st.quote_ts[idx], w0)
    ends = np.minimum(np.append(st.quote_ts[idx[1:]], w1), w1)
    cal = tape.calendar
    if len(cal):
        dur = (cal.trading_ns(ends) - cal.trading_ns(starts)).astype(np.float64)
        if dur.sum() <= 0:
            dur = (ends - starts).astype(np.float64)
    else:
        dur = (ends - starts).astype(np.float64)
    rel = (st.ask[idx] - st.bid[idx]) / (0.5 * (st.ask[idx] + st.bid[idx]))
    total = dur.sum()
    if total <= 0:
        raise NoQuoteError(f"no quote prevails in window {window} for {stock}")
    return float(np.dot(rel, dur) / total)


def yearly_relative_spreads(tape: Tape, stock: str) -> Dict[int, float]:
    out = {}
    for year in sorted(set(tape.calendar.years.tolist())):
        try:
            out[year] = mean_relative_spread(tape, stock, tape.calendar.year_window(year))
        except NoQuoteError:
            continue
    return out
