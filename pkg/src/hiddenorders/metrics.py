"""Per-order execution metrics, analysis filters and ensemble statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import InsufficientDataError
from .segmentation import HIDDEN_ORDER_COLUMNS, HiddenOrder, MemberSeries
from .signing import SignedStock
from .tape import NS_PER_SECOND, Tape, TradingCalendar

log = logging.getLogger(__name__)

METRIC_COLUMNS = HIDDEN_ORDER_COLUMNS + ("f_mo", "alpha")


@dataclass(frozen=True)
class OrderMetrics:
    order: HiddenOrder
    f_mo: float
    alpha: float
    mean_child_volume: float

    def __post_init__(self):
        if not 0.0 <= self.f_mo <= 1.0:
            raise ValueError(f"f_mo out of [0, 1]: {self.f_mo}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha out of (0, 1]: {self.alpha}")

    def as_row(self) -> dict:
        row = self.order.as_row()
        row.update(f_mo=self.f_mo, alpha=self.alpha)
        return row


def compute_f_mo(order: HiddenOrder, series: MemberSeries) -> float:
    """Share of the order's unsigned volume executed as market orders."""
    sl = series.event_range(order.first_idx, order.last_idx)
    v = np.abs(series.signed_volume[sl])
    return float(v[series.is_market_order[sl]].sum() / v.sum())


def _own_trades(order: HiddenOrder, tape: Tape) -> np.ndarray:
    st = tape[order.stock]
    code = tape.member_code(order.member)
    lo, hi = order.first_idx, order.last_idx + 1
    mine = (st.buyer[lo:hi] == code) | (st.seller[lo:hi] == code)
    return np.arange(lo, hi)[mine]


def compute_alpha(order: HiddenOrder, tape: Tape) -> float:
    """Participation rate of ``order`` in its stock.

    The denominator is the unsigned traded volume of every trade whose
    timestamp lies in the closed interval ``[start_ts, end_ts]``, the
    order's own trades included.  Self-crossed trades count once on both
    sides, so the ratio never exceeds one.
    """
    st = tape[order.stock]
    vol = st.volume
    own = vol[_own_trades(order, tape)].sum()
    lo = np.searchsorted(st.ts, order.start_ts, side="left")
    hi = np.searchsorted(st.ts, order.end_ts, side="right")
    return float(own / vol[lo:hi].sum())


def order_metrics(order: HiddenOrder, series: MemberSeries, tape: Tape) -> OrderMetrics:
    sl = series.event_range(order.first_idx, order.last_idx)
    mean_child = float(np.abs(series.signed_volume[sl]).mean())
    return OrderMetrics(order, compute_f_mo(order, series), compute_alpha(order, tape), mean_child)


def series_lookup(tape: Tape, signed: Dict[str, SignedStock], orders: Sequence[HiddenOrder]) -> Dict[tuple, MemberSeries]:
    """Unfiltered member series for every (stock, member) that has an order."""
    from .segmentation import ActivityFilter, build_member_series

    wanted = {(o.stock, o.member) for o in orders}
    out = {}
    everyone = ActivityFilter(min_sessions=0, min_trades=0)
    for stock in sorted({s for s, _ in wanted}):
        for s in build_member_series(tape, signed, stock, everyone):
            if (stock, s.member) in wanted:
                out[(stock, s.member)] = s
    return out


def compute_all_metrics(tape: Tape, signed: Dict[str, SignedStock], orders: Sequence[HiddenOrder]) -> List[OrderMetrics]:
    lookup = series_lookup(tape, signed, orders)
    return [order_metrics(o, lookup[(o.stock, o.member)], tape) for o in orders]


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Filters:
    """Analysis filters; ``None`` disables a filter.

    ``max_T_sessions`` is measured in units of the length of the session in
    which the order starts (trading time, inclusive bound).  The f_mo band
    is inclusive at both ends.
    """

    max_T_sessions: Optional[float] = 1.0
    min_trades: Optional[int] = 10
    min_orders_per_stock_year: Optional[int] = 250
    f_mo_band: Optional[Tuple[float, float]] = None


def _order_year(order: HiddenOrder, calendar: TradingCalendar) -> int:
    k = int(calendar.session_index(order.start_ts))
    return int(calendar.dates[max(k, 0)][:4])


def filter_masks(items: Sequence[OrderMetrics], filters: Filters, calendar: TradingCalendar) -> Dict[str, np.ndarray]:
    """Pass/fail mask per active filter, each evaluated on the full input."""
    n = len(items)
    masks = {}
    if filters.max_T_sessions is not None:
        k = np.clip(calendar.session_index([m.order.start_ts for m in items]), 0, None) if n else np.zeros(0, int)
        limit = calendar.session_lengths_ns[k] / NS_PER_SECOND * filters.max_T_sessions if n else np.zeros(0)
        masks["max_T"] = np.array([m.order.T_seconds for m in items]) <= limit
    if filters.min_trades is not None:
        masks["min_trades"] = np.array([m.order.n_trades >= filters.min_trades for m in items], dtype=bool)
    if filters.min_orders_per_stock_year is not None:
        keys = [(m.order.stock, _order_year(m.order, calendar)) for m in items]
        tally = pd.Series(keys, dtype=object).value_counts() if n else {}
        masks["min_orders_per_stock_year"] = np.array(
            [tally[k] >= filters.min_orders_per_stock_year for k in keys], dtype=bool)
    if filters.f_mo_band is not None:
        lo, hi = filters.f_mo_band
        f = np.array([m.f_mo for m in items])
        masks["f_mo_band"] = (f >= lo) & (f <= hi)
    return masks


def apply_filters(items: Sequence[OrderMetrics], filters: Filters, calendar: TradingCalendar,
                  report: Optional[dict] = None) -> List[OrderMetrics]:
    """Keep the orders passing every active filter.

    Every predicate is evaluated against the unfiltered input (the
    per-stock-year count included), so the surviving set does not depend on
    the order in which filters are listed.  ``report`` receives the number
    of orders each filter rejects.
    """
    masks = filter_masks(items, filters, calendar)
    keep = np.ones(len(items), dtype=bool)
    for name, m in masks.items():
        keep &= m
        if report is not None:
            report[name] = int((~m).sum())
    out = [it for it, k in zip(items, keep) if k]
    if items and not out:
        log.warning("all %d orders removed by filters", len(items))
    return out


# ---------------------------------------------------------------------------
# Ensemble statistics
# ---------------------------------------------------------------------------

def mean_se(x) -> Tuple[Optional[float], Optional[float]]:
    """Sample mean and standard error s/sqrt(n); SE is None for n < 2."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return None, None
    if len(x) == 1:
        return float(x[0]), None
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


@dataclass
class EnsembleStats:
    n_orders: int
    mean_N: Tuple[Optional[float], Optional[float]]
    mean_f_mo: Tuple[Optional[float], Optional[float]]
    mean_alpha: Tuple[Optional[float], Optional[float]]
    mean_R: Tuple[Optional[float], Optional[float]]
    mean_R_given_fmo_gt: Tuple[Optional[float], Optional[float]]
    f_mo_threshold: float = 0.8
    n_orders_fmo_gt: int = 0

    def as_dict(self) -> dict:
        def pair(p):
            return {"mean": p[0], "se": p[1]}

        return {
            "n_orders": self.n_orders,
            "N": pair(self.mean_N),
            "f_mo": pair(self.mean_f_mo),
            "alpha": pair(self.mean_alpha),
            "R": pair(self.mean_R),
            "R_given_fmo_gt": pair(self.mean_R_given_fmo_gt),
            "f_mo_threshold": self.f_mo_threshold,
            "n_orders_fmo_gt": self.n_orders_fmo_gt,
        }


def ensemble_stats(items: Sequence[OrderMetrics], R: Optional[Sequence[float]] = None,
                   f_mo_threshold: float = 0.8) -> EnsembleStats:
    """Means and standard errors of N, f_mo, alpha and rescaled impact R.

    ``R`` is aligned with ``items``; NaN entries (orders without a usable
    impact) are left out of the R averages only.
    """
    if not items:
        raise InsufficientDataError("ensemble statistics need at least one order")
    N = [m.order.n_trades for m in items]
    f = np.array([m.f_mo for m in items])
    a = [m.alpha for m in items]
    R = np.full(len(items), np.nan) if R is None else np.asarray(R, dtype=np.float64)
    ok = np.isfinite(R)
    high = ok & (f > f_mo_threshold)
    return EnsembleStats(len(items), mean_se(N), mean_se(f), mean_se(a), mean_se(R[ok]), mean_se(R[high]),
                         f_mo_threshold, int(high.sum()))


def metrics_frame(items: Sequence[OrderMetrics]) -> pd.DataFrame:
    return pd.DataFrame([m.as_row() for m in items], columns=list(METRIC_COLUMNS))


def metrics_from_frame(df: pd.DataFrame) -> List[OrderMetrics]:
    from .segmentation import orders_from_frame

    orders = orders_from_frame(df)
    # the per-event volumes are not stored in the table
    return [OrderMetrics(o, float(f), float(a), float("nan"))
            for o, f, a in zip(orders, df["f_mo"], df["alpha"])]
