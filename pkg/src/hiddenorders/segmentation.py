"""Hidden-order reconstruction from member-level signed volume series.

Each (member, stock) series of signed trade volumes is cut recursively into
segments of statistically constant mean.  A cut is accepted when the
maximal two-sample t statistic over all admissible cut points is
significant; segments that are long enough and dominated by one trading
direction become hidden orders.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special

from .signing import SignedStock
from .errors import ConfigError
from .tape import NS_PER_SECOND, Tape, TradingCalendar

log = logging.getLogger(__name__)

HIDDEN_ORDER_COLUMNS = ("stock", "member", "epsilon", "start_ts", "end_ts", "n_trades", "signed_volume",
                        "T_seconds", "dominant_fraction", "first_idx", "last_idx")


@dataclass(frozen=True)
class SegParams:
    p_threshold: float = 0.95
    min_seg: int = 10
    min_trades: int = 10
    min_dominance: float = 0.75
    significance: str = "approx"  # or "permutation"
    n_shuffles: int = 200
    variable: str = "volume"  # or "sign"
    seed: int = 0
    # constants of the extreme-value approximation for the maximal t statistic
    delta: float = 0.40
    eta_slope: float = 4.19
    eta_offset: float = 11.54

    def __post_init__(self):
        if not 0 < self.p_threshold < 1:
            raise ValueError("p_threshold must lie in (0, 1)")
        if self.min_seg < 2:
            raise ValueError("min_seg must be at least 2")
        if self.significance not in ("approx", "permutation"):
            raise ValueError(f"unknown significance model {self.significance!r}")
        if self.variable not in ("volume", "sign"):
            raise ValueError(f"unknown segmentation variable {self.variable!r}")


@dataclass(frozen=True)
class ActivityFilter:
    """Minimum yearly activity of a member in a stock."""

    min_sessions: int = 200
    min_trades: int = 1000


@dataclass
class MemberSeries:
    member: str
    stock: str
    trade_idx: np.ndarray
    ts: np.ndarray
    signed_volume: np.ndarray
    is_market_order: np.ndarray

    def __len__(self):
        return len(self.trade_idx)

    def event_range(self, first_idx: int, last_idx: int) -> slice:
        """Events whose trade index lies in ``[first_idx, last_idx]``."""
        lo = np.searchsorted(self.trade_idx, first_idx, side="left")
        hi = np.searchsorted(self.trade_idx, last_idx, side="right")
        return slice(int(lo), int(hi))


@dataclass(frozen=True)
class Segment:
    member: str
    stock: str
    start_idx: int
    end_idx: int
    mean_rate: float

    @property
    def length(self) -> int:
        return self.end_idx - self.start_idx + 1


@dataclass(frozen=True)
class HiddenOrder:
    stock: str
    member: str
    epsilon: int
    start_ts: int
    end_ts: int
    n_trades: int
    signed_volume: float
    T_seconds: float
    dominant_fraction: float
    first_idx: int
    last_idx: int

    def __post_init__(self):
        if self.epsilon not in (1, -1):
            raise ValueError("epsilon must be +1 or -1")
        if self.epsilon != np.sign(self.signed_volume):
            raise ValueError("epsilon must equal sign(V)")
        if not self.T_seconds > 0:
            raise ValueError("T must be positive")

    @property
    def abs_volume(self) -> float:
        return abs(self.signed_volume)

    def as_row(self) -> dict:
        return {c: getattr(self, c) for c in HIDDEN_ORDER_COLUMNS}


# ---------------------------------------------------------------------------
# Member series
# ---------------------------------------------------------------------------

def _stock_events(tape: Tape, signed: SignedStock, stock: str) -> pd.DataFrame:
    st = tape[stock]
    n = st.n_trades
    idx = np.arange(n, dtype=np.int64)
    vol = st.volume
    sess = tape.calendar.session_index(st.ts) if len(tape.calendar) else np.zeros(n, dtype=np.int64)
    years = tape.calendar.years[np.clip(sess, 0, None)] if len(tape.calendar) else np.zeros(n, dtype=np.int64)
    ev = pd.DataFrame({
        "member": np.concatenate([st.buyer, st.seller]),
        "trade_idx": np.concatenate([idx, idx]),
        "side": np.concatenate([np.ones(n, np.int8), -np.ones(n, np.int8)]),
        "ts": np.concatenate([st.ts, st.ts]),
        "v": np.concatenate([vol, -vol]),
        "mo": np.concatenate([signed.initiator == 1, signed.initiator == -1]),
        "session": np.concatenate([sess, sess]),
        "year": np.concatenate([years, years]),
    })
    # time order, buyer leg first for self-crosses
    return ev.sort_values(["member", "trade_idx", "side"], ascending=[True, True, False], kind="mergesort")


def build_member_series(tape: Tape, signed: Dict[str, SignedStock], stock: str,
                        activity: ActivityFilter = ActivityFilter(),
                        counts: Optional[dict] = None) -> List[MemberSeries]:
    """One signed-volume series per member active enough in ``stock``.

    A member qualifies in a calendar year when it trades the stock on at
    least ``activity.min_sessions`` sessions and in at least
    ``activity.min_trades`` transactions that year; only events from
    qualifying years enter its series.
    """
    ev = _stock_events(tape, signed[stock], stock)
    act = ev.groupby(["member", "year"]).agg(n_trades=("trade_idx", "nunique"), n_sessions=("session", "nunique"))
    ok = act[(act.n_trades >= activity.min_trades) & (act.n_sessions >= activity.min_sessions)]
    keep = pd.MultiIndex.from_frame(ev[["member", "year"]]).isin(ok.index)
    n_members = ev["member"].nunique()
    ev = ev[keep]
    out = []
    for code, g in ev.groupby("member", sort=True):
        out.append(MemberSeries(
            member=tape.members[code], stock=stock,
            trade_idx=g["trade_idx"].to_numpy(), ts=g["ts"].to_numpy(),
            signed_volume=g["v"].to_numpy(dtype=np.float64), is_market_order=g["mo"].to_numpy(dtype=bool),
        ))
    if counts is not None:
        counts["members_seen"] = counts.get("members_seen", 0) + n_members
        counts["members_filtered"] = counts.get("members_filtered", 0) + n_members - len(out)
    out.sort(key=lambda s: s.member)
    return out


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def t_profile(x: np.ndarray, min_seg: int) -> np.ndarray:
    """Two-sample t statistic for every cut of ``x``.

    Entry ``i`` corresponds to a left part of ``min_seg + i`` points.  The
    left and right partial sums are accumulated from opposite ends so the
    profile of ``x[::-1]`` is exactly the reverse of the profile of ``x``.
    """
    n = len(x)
    x = x - np.median(x)
    left_n = np.arange(min_seg, n - min_seg + 1)
    right_n = n - left_n
    c1, c2 = np.cumsum(x), np.cumsum(x * x)
    r1, r2 = np.cumsum(x[::-1]), np.cumsum((x * x)[::-1])
    sl, ql = c1[left_n - 1], c2[left_n - 1]
    sr, qr = r1[right_n - 1], r2[right_n - 1]
    ml, mr = sl / left_n, sr / right_n
    ssl = np.maximum(ql - sl * ml, 0.0)
    ssr = np.maximum(qr - sr * mr, 0.0)
    pooled = (ssl + ssr) / (n - 2)
    sd = np.sqrt(pooled * (1.0 / left_n + 1.0 / right_n))
    diff = np.abs(ml - mr)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(sd > 0, diff / sd, np.where(diff > 0, np.inf, 0.0))
    return tau


def tmax_significance(tau_max: float, n: int, params: SegParams = SegParams()) -> float:
    """Approximate P(max t <= tau_max) for a length-``n`` series with no change point."""
    if np.isinf(tau_max):
        return 1.0
    if tau_max <= 0:
        return 0.0
    nu = n - 2
    eta = max(params.eta_slope * np.log(n) - params.eta_offset, 1.0)
    x = nu / (nu + tau_max * tau_max)
    return float((1.0 - special.betainc(params.delta * nu, params.delta, x)) ** eta)


def _best_cut(x: np.ndarray, min_seg: int) -> Tuple[int, float]:
    tau = t_profile(x, min_seg)
    best = float(tau.max())
    ties = np.flatnonzero(tau == best)
    # among exact ties prefer the cut closest to the middle
    centre = (len(x) - 2 * min_seg) / 2.0
    k = ties[np.argmin(np.abs(ties - centre))]
    return min_seg + int(k), best


def _permutation_significance(x: np.ndarray, tau_max: float, params: SegParams, rng) -> float:
    if np.isinf(tau_max):
        return 1.0
    below = 0
    y = x.copy()
    for _ in range(params.n_shuffles):
        rng.shuffle(y)
        if t_profile(y, params.min_seg).max() < tau_max:
            below += 1
    return below / params.n_shuffles


def segment_values(x: np.ndarray, params: SegParams = SegParams()) -> List[Tuple[int, int]]:
    """Recursive binary segmentation of ``x`` into inclusive index ranges."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        return []
    done = []
    stack = [(0, n)]
    while stack:
        lo, hi = stack.pop()
        m = hi - lo
        if m < 2 * params.min_seg:
            done.append((lo, hi - 1))
            continue
        part = x[lo:hi]
        cut, tau_max = _best_cut(part, params.min_seg)
        if params.significance == "approx":
            sig = tmax_significance(tau_max, m, params)
        else:
            rng = np.random.default_rng([params.seed, lo, hi])
            sig = _permutation_significance(part, tau_max, params, rng)
        if sig > params.p_threshold:
            stack.append((lo + cut, hi))
            stack.append((lo, lo + cut))
        else:
            done.append((lo, hi - 1))
    done.sort()
    return done


def segment_series(series: MemberSeries, params: SegParams = SegParams()) -> List[Segment]:
    """Partition ``series`` into segments of approximately constant net rate."""
    v = series.signed_volume
    x = np.sign(v) if params.variable == "sign" else v
    return [Segment(series.member, series.stock, a, b, float(v[a:b + 1].mean()))
            for a, b in segment_values(x, params)]


def dominant_fraction(v: np.ndarray) -> float:
    total = np.abs(v).sum()
    if total == 0:
        return 0.0
    return float(max(v[v > 0].sum(), -v[v < 0].sum()) / total)


def extract_hidden_orders(segments: Sequence[Segment], series: MemberSeries, params: SegParams = SegParams(),
                          calendar: Optional[TradingCalendar] = None,
                          counts: Optional[dict] = None) -> List[HiddenOrder]:
    """Turn qualifying segments into :class:`HiddenOrder` records.

    A segment qualifies with at least ``params.min_trades`` events and a
    same-sign share of unsigned volume of at least ``params.min_dominance``.
    """
    counts = counts if counts is not None else {}
    out = []
    for seg in segments:
        if seg.length < params.min_trades:
            counts["short"] = counts.get("short", 0) + 1
            continue
        v = series.signed_volume[seg.start_idx:seg.end_idx + 1]
        frac = dominant_fraction(v)
        if frac < params.min_dominance:
            counts["mixed"] = counts.get("mixed", 0) + 1
            continue
        V = float(v.sum())
        if V == 0:
            counts["zero_volume"] = counts.get("zero_volume", 0) + 1
            continue
        t0, t1 = int(series.ts[seg.start_idx]), int(series.ts[seg.end_idx])
        if calendar is not None and len(calendar):
            T = float(calendar.trading_seconds_between(t0, t1))
        else:
            T = (t1 - t0) / NS_PER_SECOND
        if not T > 0:
            counts["zero_duration"] = counts.get("zero_duration", 0) + 1
            continue
        out.append(HiddenOrder(
            stock=series.stock, member=series.member, epsilon=int(np.sign(V)), start_ts=t0, end_ts=t1,
            n_trades=seg.length, signed_volume=V, T_seconds=T, dominant_fraction=frac,
            first_idx=int(series.trade_idx[seg.start_idx]), last_idx=int(series.trade_idx[seg.end_idx]),
        ))
    return out


def _detect_series(args) -> Tuple[List[HiddenOrder], dict]:
    series, params, calendar = args
    counts: dict = {}
    segs = segment_series(series, params)
    counts["segments"] = len(segs)
    return extract_hidden_orders(segs, series, params, calendar, counts), counts


def detect_hidden_orders(tape: Tape, signed: Dict[str, SignedStock], params: SegParams = SegParams(),
                         activity: ActivityFilter = ActivityFilter(), workers: int = 1,
                         counts: Optional[dict] = None) -> List[HiddenOrder]:
    """Run series construction, segmentation and extraction over all stocks.

    The result is sorted by (stock, member, start_ts) regardless of
    ``workers``.
    """
    counts = counts if counts is not None else {}
    jobs = []
    for stock in tape.stocks:
        for s in build_member_series(tape, signed, stock, activity, counts):
            jobs.append((s, params, tape.calendar))
    counts["series"] = len(jobs)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_detect_series, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_detect_series(j) for j in jobs]
    orders = []
    for found, c in results:
        orders.extend(found)
        for k, v in c.items():
            counts[k] = counts.get(k, 0) + v
    orders.sort(key=lambda o: (o.stock, o.member, o.start_ts, o.first_idx))
    counts["hidden_orders"] = len(orders)
    return orders


def default_workers() -> int:
    raw = os.environ.get("HIDDENORDERS_WORKERS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"HIDDENORDERS_WORKERS must be an integer, got {raw!r}") from None


def orders_frame(orders: Sequence[HiddenOrder]) -> pd.DataFrame:
    return pd.DataFrame([o.as_row() for o in orders], columns=list(HIDDEN_ORDER_COLUMNS))


def orders_from_frame(df: pd.DataFrame) -> List[HiddenOrder]:
    return [HiddenOrder(
        stock=str(r.stock), member=str(r.member), epsilon=int(r.epsilon), start_ts=int(r.start_ts),
        end_ts=int(r.end_ts), n_trades=int(r.n_trades), signed_volume=float(r.signed_volume),
        T_seconds=float(r.T_seconds), dominant_fraction=float(r.dominant_fraction),
        first_idx=int(r.first_idx), last_idx=int(r.last_idx),
    ) for r in df.itertuples(index=False)]
