"""Trade initiator classification (Lee-Ready with recorded-flag passthrough)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd

from .tape import Aggressor, StockTape, Tape, Trade


@dataclass(frozen=True)
class SignedTrade:
    trade: Trade
    initiator: Aggressor
    inferred: bool


@dataclass
class SignedStock:
    """Columnar signing result for one stock.

    ``initiator`` is +1 (buyer) / -1 (seller) for every trade;
    ``inferred`` marks trades whose tape flag was U; ``fallback`` marks the
    inferred trades that could be classified neither by quote nor by tick.
    """

    stock: str
    initiator: np.ndarray
    inferred: np.ndarray
    fallback: np.ndarray

    @property
    def n_unclassifiable(self) -> int:
        return int(self.fallback.sum())


def tick_direction(price: np.ndarray) -> np.ndarray:
    """Sign of the change from the last *differing* earlier price (0 if none)."""
    price = np.asarray(price, dtype=np.float64)
    step = np.zeros(len(price), dtype=np.int8)
    if len(price) > 1:
        step[1:] = np.sign(np.diff(price)).astype(np.int8)
    # carry the last non-zero tick forward over zero ticks
    idx = np.where(step != 0, np.arange(len(price)), 0)
    np.maximum.accumulate(idx, out=idx)
    return step[idx]


def classify(st: StockTape, lr_delay_ns: int = 0) -> SignedStock:
    """Assign an initiator to every trade of ``st``.

    Flagged trades (B/S) pass through.  Unflagged trades are compared to the
    midprice prevailing at ``ts - lr_delay_ns``: above is a buy, below a
    sell, and at the mid the tick test decides (uptick buy, downtick sell).
    Trades that neither rule can classify default to buyer and are marked in
    ``fallback``.
    """
    agg = st.aggressor.astype(np.int8)
    unknown = agg == 0
    initiator = agg.copy()
    fallback = np.zeros(st.n_trades, dtype=bool)
    if unknown.any():
        ts = st.ts[unknown] - int(lr_delay_ns)
        k = st.quote_index(ts)
        has_q = k >= 0
        mid = np.full(len(ts), np.nan)
        mid[has_q] = st.mid[k[has_q]]
        p = st.price[unknown]
        quote_rule = np.where(p > mid, 1, np.where(p < mid, -1, 0)).astype(np.int8)
        quote_rule[~has_q] = 0
        tick = tick_direction(st.price)[unknown]
        decided = np.where(quote_rule != 0, quote_rule, tick)
        fallback[np.flatnonzero(unknown)[decided == 0]] = True
        initiator[unknown] = np.where(decided == 0, 1, decided)
    return SignedStock(st.stock, initiator, unknown, fallback)


def sign_trades(tape: Tape, stock: str, lr_delay_ns: int = 0) -> List[SignedTrade]:
    """Record-level view of :func:`classify` for one stock."""
    signed = classify(tape[stock], lr_delay_ns)
    return [SignedTrade(tr, Aggressor(int(signed.initiator[i])), bool(signed.inferred[i]))
            for i, tr in enumerate(tape.trades(stock))]


def sign_tape(tape: Tape, lr_delay_ns: int = 0) -> dict:
    return {s: classify(tape[s], lr_delay_ns) for s in tape.stocks}


def signed_trades_frame(tape: Tape, signed: dict) -> pd.DataFrame:
    """Trade rows with ``initiator,inferred`` appended (diagnostic output)."""
    members = np.asarray(tape.members, dtype=object)
    parts = []
    codes = np.array(["S", "U", "B"], dtype=object)
    for s in tape.stocks:
        st, sg = tape[s], signed[s]
        parts.append(pd.DataFrame({
            "timestamp_ns": st.ts, "stock": s, "price": st.price, "shares": st.shares,
            "buyer_member": members[st.buyer], "seller_member": members[st.seller],
            "aggressor": codes[st.aggressor.astype(np.int64) + 1],
            "initiator": codes[sg.initiator.astype(np.int64) + 1],
            "inferred": sg.inferred.astype(np.int8),
        }))
    return pd.concat(parts, ignore_index=True)
