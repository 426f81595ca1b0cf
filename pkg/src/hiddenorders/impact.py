"""Price impact and scaling analytics for reconstructed hidden orders."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import InsufficientDataError
from .segmentation import HiddenOrder, MemberSeries
from .tape import NS_PER_SECOND, NoQuoteError, StockTape, Tape, TradingCalendar, midprice_at

log = logging.getLogger(__name__)


def impact_grid(n_inside: int = 30, n_after: int = 20, t_max: float = 3.0) -> np.ndarray:
    """Normalised-time grid: ``n_inside`` points on [0, 1], ``n_after`` on (1, t_max]."""
    inside = np.linspace(0.0, 1.0, n_inside)
    after = 1.0 + (t_max - 1.0) * np.arange(1, n_after + 1) / n_after
    return np.concatenate([inside, after])


DEFAULT_GRID = impact_grid()


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------

@dataclass
class OrderImpact:
    order: HiddenOrder
    r: float
    R: float
    path: np.ndarray
    truncated: bool = False


@dataclass
class ImpactCurve:
    edges_lo: np.ndarray
    edges_hi: np.ndarray
    center: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_lo": self.edges_lo, "bin_hi": self.edges_hi, "bin_center": self.center,
                             "mean_R": self.mean, "se_R": self.se, "count": self.count})


@dataclass
class ProfileCurve:
    grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray

    def frame(self, value: str = "mean") -> pd.DataFrame:
        return pd.DataFrame({"t_over_T": self.grid, value: self.mean, "se": self.se, "count": self.count})


@dataclass
class FitResult:
    """Power-law (``A * x**gamma``) or PCA (slope ``g``) fit."""

    kind: str
    n_points: int
    A: Optional[float] = None
    gamma: Optional[float] = None
    A_se: Optional[float] = None
    gamma_se: Optional[float] = None
    g: Optional[float] = None
    variance_explained: Optional[float] = None
    ci: Optional[Tuple[float, float]] = None
    ci_level: Optional[float] = None
    n_boot: Optional[int] = None
    seed: Optional[int] = None

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        if "ci" in d:
            d["ci"] = [float(c) for c in d["ci"]]
        return d


# ---------------------------------------------------------------------------
# Per-order impact
# ---------------------------------------------------------------------------

def _quote_path(st: StockTape, calendar: TradingCalendar) -> Tuple[np.ndarray, np.ndarray]:
    return calendar.trading_ns(st.quote_ts), np.log(st.mid)


def log_mid_path(st: StockTape, calendar: TradingCalendar, tau: np.ndarray, _cache=None) -> np.ndarray:
    """Log midprice at trading times ``tau``, linear between quote updates.

    At a quote timestamp the value is that of the latest quote there, so
    the path agrees with :func:`midprice_at` on quote times.  NaN before the
    first quote or after the last one.
    """
    qtau, logmid = _cache if _cache is not None else _quote_path(st, calendar)
    k = np.searchsorted(qtau, tau, side="right") - 1
    out = np.full(len(tau), np.nan)
    inside = (k >= 0) & (k < len(qtau) - 1)
    ki = k[inside]
    span = (qtau[ki + 1] - qtau[ki]).astype(np.float64)
    w = np.where(span > 0, (tau[inside] - qtau[ki]) / np.where(span > 0, span, 1.0), 0.0)
    out[inside] = logmid[ki] + w * (logmid[ki + 1] - logmid[ki])
    at_last = (k == len(qtau) - 1) & (tau == qtau[-1]) if len(qtau) else np.zeros(len(tau), bool)
    out[at_last] = logmid[-1]
    return out


def order_impact(order: HiddenOrder, tape: Tape, spread: float, grid: np.ndarray = DEFAULT_GRID,
                 _cache=None) -> OrderImpact:
    """Rescaled signed impact of ``order`` and its normalised-time path.

    ``r`` is the log change of the midprice between the first and last
    trade, ``R = epsilon * r / spread``.  ``path[i]`` is the same quantity
    measured from the start to ``grid[i] * T`` in trading time; points past
    the end of the tape are NaN and set ``truncated``.
    """
    st = tape[order.stock]
    m0 = midprice_at(tape, order.stock, order.start_ts)
    m1 = midprice_at(tape, order.stock, order.end_ts)
    r = math.log(m1) - math.log(m0)
    cal = tape.calendar
    tau0 = int(cal.trading_ns(order.start_ts))
    T_ns = int(cal.trading_ns(order.end_ts)) - tau0
    tau = tau0 + np.rint(np.asarray(grid) * T_ns).astype(np.int64)
    lp = log_mid_path(st, cal, tau, _cache)
    path = order.epsilon * (lp - math.log(m0)) / spread
    path[np.asarray(grid) == 0] = 0.0
    truncated = bool(np.isnan(path).any() or tau[-1] > cal.total_trading_ns)
    if tau[-1] > cal.total_trading_ns:
        path[tau > cal.total_trading_ns] = np.nan
    return OrderImpact(order, r, order.epsilon * r / spread, path, truncated)


def order_impacts(orders: Sequence[HiddenOrder], tape: Tape, spreads: Dict[Tuple[str, int], float],
                  grid: np.ndarray = DEFAULT_GRID, counts: Optional[dict] = None) -> List[Optional[OrderImpact]]:
    """Impacts aligned with ``orders``; None where no quote or spread is available."""
    out = []
    cache = {}
    for o in orders:
        if o.stock not in cache:
            cache[o.stock] = _quote_path(tape[o.stock], tape.calendar)
        year = int(tape.calendar.dates[max(int(tape.calendar.session_index(o.start_ts)), 0)][:4])
        s = spreads.get((o.stock, year))
        try:
            if s is None or not s > 0:
                raise NoQuoteError(f"no spread for {o.stock} in {year}")
            out.append(order_impact(o, tape, s, grid, cache[o.stock]))
        except NoQuoteError:
            out.append(None)
            if counts is not None:
                counts["no_quote"] = counts.get("no_quote", 0) + 1
    return out


# ---------------------------------------------------------------------------
# Binned curves and power-law fits
# ---------------------------------------------------------------------------

def log_bin_edges(x: np.ndarray, bins_per_decade: int = 8) -> np.ndarray:
    lx = np.log10(x)
    lo = math.floor(lx.min() * bins_per_decade)
    hi = math.ceil(lx.max() * bins_per_decade)
    if hi == lo:
        hi += 1
    if hi * 1.0 / bins_per_decade <= lx.max():
        hi += 1
    return 10.0 ** (np.arange(lo, hi + 1) / bins_per_decade)


def binned_mean(x, y, bins_per_decade: int = 8, min_bin_count: int = 20) -> ImpactCurve:
    """Mean and standard error of ``y`` in log-spaced bins of ``x > 0``.

    Bins are ``[lo, hi)`` with edges on multiples of 1/``bins_per_decade``
    in log10; bins with fewer than ``min_bin_count`` points are dropped.
    The reported centre is the geometric midpoint of the edges.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = np.isfinite(y) & (x > 0)
    x, y = x[ok], y[ok]
    if len(x) == 0:
        raise InsufficientDataError("no observations to bin")
    edges = log_bin_edges(x, bins_per_decade)
    nb = len(edges) - 1
    # rounding in 10**k can put an extreme point just outside the edges
    b = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, nb - 1)
    cnt = np.bincount(b, minlength=nb)
    # sums of offsets from a value in the bin, so constant bins come out exact
    ref = np.zeros(nb)
    ref[b[::-1]] = y[::-1]
    s1 = np.bincount(b, weights=y - ref[b], minlength=nb)
    mean = ref + np.divide(s1, cnt, out=np.full(nb, np.nan), where=cnt > 0)
    dev = (y - mean[b]) ** 2
    s2 = np.bincount(b, weights=dev, minlength=nb)
    se = np.sqrt(np.divide(s2, (cnt - 1) * cnt, out=np.full(nb, np.nan), where=cnt > 1))
    keep = cnt >= max(min_bin_count, 1)
    if not keep.any():
        raise InsufficientDataError(f"no bin holds at least {min_bin_count} observations")
    lo, hi = edges[:-1][keep], edges[1:][keep]
    return ImpactCurve(lo, hi, np.sqrt(lo * hi), mean[keep], se[keep], cnt[keep])


def impact_vs_N(N, R, f_mo=None, f_mo_band: Optional[Tuple[float, float]] = None, bins_per_decade: int = 8,
                min_bin_count: int = 20) -> ImpactCurve:
    """Conditional mean impact <R|N> in log bins, optionally within an f_mo band (inclusive)."""
    N = np.asarray(N, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if f_mo_band is not None:
        f = np.asarray(f_mo, dtype=np.float64)
        sel = (f >= f_mo_band[0]) & (f <= f_mo_band[1])
        N, R = N[sel], R[sel]
    return binned_mean(N, R, bins_per_decade, min_bin_count)


def fit_power_law(x, y, w=None) -> FitResult:
    """Least squares of log|y| on log x; returns ``A`` (carrying the sign of y) and ``gamma``.

    Unweighted unless weights ``w`` are given.  Points with y == 0 are
    dropped with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(len(x)) if w is None else np.asarray(w, dtype=np.float64)
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & np.isfinite(w) & (w > 0)
    zero = ok & (y == 0)
    if zero.any():
        log.warning("dropping %d points with zero mean", int(zero.sum()))
    ok &= y != 0
    if ok.sum() < 3:
        raise InsufficientDataError("power-law fit needs at least 3 usable points")
    lx, ly = np.log(x[ok]), np.log(np.abs(y[ok]))
    w = w[ok] / w[ok].mean()
    n = len(lx)
    mx, my = np.average(lx, weights=w), np.average(ly, weights=w)
    sxx = (w * (lx - mx) ** 2).sum()
    if sxx == 0:
        raise InsufficientDataError("power-law fit needs distinct x values")
    gamma = (w * (lx - mx) * (ly - my)).sum() / sxx
    b = my - gamma * mx
    resid = ly - (b + gamma * lx)
    s2 = (w * resid ** 2).sum() / (n - 2) if n > 2 else 0.0
    gamma_se = math.sqrt(s2 / sxx)
    b_se = math.sqrt(s2 * (1.0 / n + mx * mx / sxx))
    sign = 1.0 if np.sum(np.sign(y[ok])) >= 0 else -1.0
    A = sign * math.exp(b)
    return FitResult("powerlaw", n, A=A, gamma=float(gamma), A_se=abs(A) * b_se, gamma_se=gamma_se)


def fit_powerlaw(curve: ImpactCurve, weight: str = "none") -> FitResult:
    """Power-law fit of a binned curve over its bin centres.

    ``weight`` is "none" (plain OLS), "count" (orders per bin) or
    "inverse_variance" (1 / var of log mean, from the bin standard errors).
    """
    if weight == "none":
        w = None
    elif weight == "count":
        w = curve.count
    elif weight == "inverse_variance":
        w = (curve.mean / curve.se) ** 2
    else:
        raise ValueError(f"unknown weight {weight!r}")
    return fit_power_law(curve.center, curve.mean, w)


# ---------------------------------------------------------------------------
# Impact versus normalised time
# ---------------------------------------------------------------------------

def profile_from_paths(paths: np.ndarray, grid: np.ndarray = DEFAULT_GRID, min_count: int = 1,
                       complete: bool = True) -> ProfileCurve:
    """Cross-order mean of impact paths at each grid point.

    With ``complete`` only paths finite over the whole grid are used, so
    every grid point averages the same orders.  Otherwise orders cut off by
    the end of the tape (typically the longest ones) drop out of the late
    grid points only, which biases the permanent-to-temporary ratio.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=np.float64))
    if complete:
        paths = paths[np.isfinite(paths).all(axis=1)]
    ok = np.isfinite(paths)
    cnt = ok.sum(axis=0)
    filled = np.where(ok, paths, 0.0)
    mean = np.divide(filled.sum(axis=0), cnt, out=np.full(len(grid), np.nan), where=cnt > 0)
    dev = np.where(ok, (paths - mean) ** 2, 0.0).sum(axis=0)
    se = np.sqrt(np.divide(dev, (cnt - 1) * cnt, out=np.full(len(grid), np.nan), where=cnt > 1))
    low = cnt < min_count
    mean[low] = np.nan
    se[low] = np.nan
    return ProfileCurve(np.asarray(grid, dtype=np.float64), mean, se, cnt)


def impact_path_profile(paths: np.ndarray, grid: np.ndarray = DEFAULT_GRID, min_count: int = 1,
                        complete: bool = True) -> Tuple[ProfileCurve, FitResult]:
    """Mean impact path and the fit ``R = A (t/T)**beta`` over 0 < t/T <= 1."""
    prof = profile_from_paths(paths, grid, min_count, complete)
    sel = (prof.grid > 0) & (prof.grid <= 1.0) & np.isfinite(prof.mean)
    fit = fit_power_law(prof.grid[sel], prof.mean[sel])
    return prof, fit


@dataclass
class Reversion:
    R_temp: float
    R_perm: float
    ratio: float
    predicted_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)


def reversion_ratio(profile: ProfileCurve, beta: float, perm_window: Tuple[float, float] = (1.5, 3.0),
                    min_count: int = 1) -> Reversion:
    """Temporary impact at t/T = 1, permanent impact averaged over ``perm_window``.

    ``predicted_ratio`` is 1/(1 + beta), the permanent-to-peak ratio
    implied by reverting to the average execution price of an impact path
    growing as (t/T)**beta.
    """
    g = profile.grid
    at_one = np.flatnonzero(np.isclose(g, 1.0))
    if len(at_one) == 0:
        raise ValueError("profile grid has no t/T = 1 point")
    i1 = at_one[0]
    win = (g >= perm_window[0] - 1e-12) & (g <= perm_window[1] + 1e-12)
    if not win.any():
        raise InsufficientDataError("profile does not reach the permanent-impact window")
    if profile.count[i1] < min_count or np.any(profile.count[win] < min_count) or np.isnan(profile.mean[win]).any():
        raise InsufficientDataError("too few untruncated paths in the permanent-impact window")
    R_temp = float(profile.mean[i1])
    R_perm = float(profile.mean[win].mean())
    return Reversion(R_temp, R_perm, R_perm / R_temp, 1.0 / (1.0 + beta))


# ---------------------------------------------------------------------------
# Allometric exponents
# ---------------------------------------------------------------------------

def _principal_slope(a, b, c):
    """Slope dy/dx of the leading eigenvector of [[a, b], [b, c]] and its variance share."""
    half = 0.5 * (a - c)
    root = np.sqrt(half * half + b * b)
    lam1 = 0.5 * (a + c) + root
    lam2 = 0.5 * (a + c) - root
    d1 = lam1 - a
    d2 = lam1 - c
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(np.abs(d2) >= np.abs(d1), b / d2, d1 / b)
    return slope, lam1 / (lam1 + lam2)


def pca_slope(x, y) -> Tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    a, b, c = (dx * dx).mean(), (dx * dy).mean(), (dy * dy).mean()
    if a <= 0 or c <= 0:
        raise InsufficientDataError("degenerate covariance: zero variance in a log variable")
    s, ve = _principal_slope(a, b, c)
    return float(s), float(ve)


def pca_fit(x, y, n_boot: int = 1000, seed: int = 0, ci_level: float = 0.95, chunk: int = 100) -> FitResult:
    """First principal axis of (x, y) with a percentile bootstrap CI on its slope.

    Rows are resampled with replacement as whole observations.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g, ve = pca_slope(x, y)
    rng = np.random.default_rng(seed)
    n = len(x)
    boot = []
    for start in range(0, n_boot, chunk):
        m = min(chunk, n_boot - start)
        idx = rng.integers(0, n, size=(m, n))
        X, Y = x[idx], y[idx]
        dx = X - X.mean(axis=1, keepdims=True)
        dy = Y - Y.mean(axis=1, keepdims=True)
        s, _ = _principal_slope((dx * dx).mean(axis=1), (dx * dy).mean(axis=1), (dy * dy).mean(axis=1))
        boot.append(s)
    boot = np.concatenate(boot) if boot else np.array([])
    tail = 50.0 * (1.0 - ci_level)
    ci = tuple(float(v) for v in np.percentile(boot, [tail, 100.0 - tail])) if len(boot) else None
    return FitResult("pca", n, g=g, variance_explained=ve, ci=ci, ci_level=ci_level, n_boot=n_boot, seed=seed)


def pca_exponents(V, N, T, n_boot: int = 1000, seed: int = 0, ci_level: float = 0.95,
                  min_orders: int = 30) -> Dict[str, FitResult]:
    """Exponents of N ~ V**g1, T ~ V**g2 and N ~ T**g3 from 2-D PCA of the logs."""
    V = np.abs(np.asarray(V, dtype=np.float64))
    N = np.asarray(N, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if len(V) < min_orders:
        raise InsufficientDataError(f"PCA exponents need at least {min_orders} orders, got {len(V)}")
    if (V <= 0).any() or (N <= 0).any() or (T <= 0).any():
        raise ValueError("V, N and T must be positive")
    lv, ln, lt = np.log(V), np.log(N), np.log(T)
    # same seed per pair: resampled rows line up across the three fits
    return {
        "g1": pca_fit(lv, ln, n_boot, seed, ci_level),
        "g2": pca_fit(lv, lt, n_boot, seed, ci_level),
        "g3": pca_fit(lt, ln, n_boot, seed, ci_level),
    }


# ---------------------------------------------------------------------------
# Trading profile and timing
# ---------------------------------------------------------------------------

def _bin_profile(u: np.ndarray, val: np.ndarray, n_bins: int) -> ProfileCurve:
    b = np.minimum((u * n_bins).astype(np.int64), n_bins - 1)
    cnt = np.bincount(b, minlength=n_bins)
    mean = np.divide(np.bincount(b, weights=val, minlength=n_bins), cnt, out=np.full(n_bins, np.nan), where=cnt > 0)
    dev = np.bincount(b, weights=(val - mean[b]) ** 2, minlength=n_bins)
    se = np.sqrt(np.divide(dev, (cnt - 1) * cnt, out=np.full(n_bins, np.nan), where=cnt > 1))
    return ProfileCurve((np.arange(n_bins) + 0.5) / n_bins, mean, se, cnt)


def trading_profile(orders: Sequence[HiddenOrder], tape: Tape, series: Dict[tuple, MemberSeries],
                    n_bins: int = 10) -> Tuple[ProfileCurve, ProfileCurve]:
    """Normalised per-trade volume against normalised time inside each order.

    The first curve uses the order's own trades, each divided by the mean
    trade volume of that order.  The second uses the other trades of the
    stock in the same window, each divided by their own per-order mean.
    """
    cal = tape.calendar
    own_u, own_v, mkt_u, mkt_v = [], [], [], []
    for o in orders:
        st = tape[o.stock]
        s = series[(o.stock, o.member)]
        sl = s.event_range(o.first_idx, o.last_idx)
        tau0 = cal.trading_ns(o.start_ts)
        T = cal.trading_ns(o.end_ts) - tau0
        if T <= 0:
            continue
        v = np.abs(s.signed_volume[sl])
        if len(v):
            own_u.append((cal.trading_ns(s.ts[sl]) - tau0) / T)
            own_v.append(v / v.mean())
        lo = np.searchsorted(st.ts, o.start_ts, side="left")
        hi = np.searchsorted(st.ts, o.end_ts, side="right")
        others = np.setdiff1d(np.arange(lo, hi), s.trade_idx[sl], assume_unique=False)
        if len(others):
            mv = st.volume[others]
            mkt_u.append((cal.trading_ns(st.ts[others]) - tau0) / T)
            mkt_v.append(mv / mv.mean())
    if not own_u:
        raise InsufficientDataError("no orders with positive duration")
    own = _bin_profile(np.concatenate(own_u), np.concatenate(own_v), n_bins)
    if mkt_u:
        mkt = _bin_profile(np.concatenate(mkt_u), np.concatenate(mkt_v), n_bins)
    else:
        mkt = ProfileCurve(own.grid, np.full(n_bins, np.nan), np.full(n_bins, np.nan), np.zeros(n_bins, int))
    return own, mkt


def session_fraction(t, calendar: TradingCalendar) -> np.ndarray:
    """Elapsed fraction of the session containing ``t`` (clipped to [0, 1])."""
    t = np.asarray(t, dtype=np.int64)
    k = np.clip(calendar.session_index(t), 0, len(calendar) - 1)
    f = (t - calendar.open_ns[k]) / calendar.session_lengths_ns[k]
    return np.clip(f, 0.0, 1.0)


def start_end_distributions(orders: Sequence[HiddenOrder], calendar: TradingCalendar,
                            n_bins: int = 20) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Histograms of order start and end times as a fraction of the session.

    Returns ``(edges, start_hist, end_hist)``; each histogram sums to one.
    """
    if not orders:
        raise InsufficientDataError("no orders")
    edges = np.linspace(0.0, 1.0, n_bins + 1)

    def hist(t):
        b = np.minimum((session_fraction(t, calendar) * n_bins).astype(np.int64), n_bins - 1)
        h = np.bincount(b, minlength=n_bins).astype(np.float64)
        return h / h.sum()

    return edges, hist([o.start_ts for o in orders]), hist([o.end_ts for o in orders])


# ---------------------------------------------------------------------------
# Comparison with a market index
# ---------------------------------------------------------------------------

def index_window_returns(index_ts, index_level, calendar: TradingCalendar, duration_s: float, n_windows: int,
                         rng: np.random.Generator) -> Optional[np.ndarray]:
    """Log returns of the index over random windows of ``duration_s`` trading seconds.

    The log level is interpolated linearly in trading time.  None when the
    index covers less than ``duration_s``.
    """
    tau = calendar.trading_ns(index_ts).astype(np.float64)
    ll = np.log(np.asarray(index_level, dtype=np.float64))
    d = duration_s * NS_PER_SECOND
    span = tau[-1] - tau[0]
    if d > span:
        return None
    start = tau[0] + rng.random(n_windows) * (span - d)
    return np.interp(start + d, tau, ll) - np.interp(start, tau, ll)


def impact_vs_T_with_index(T, R, index_ts, index_level, calendar: TradingCalendar, bins_per_decade: int = 4,
                           min_bin_count: int = 1, n_windows: int = 1000, seed: int = 0) -> pd.DataFrame:
    """Per log-bin of duration T: mean R and mean index return over random windows of the bin's central length."""
    curve = binned_mean(T, R, bins_per_decade, min_bin_count)
    rng = np.random.default_rng(seed)
    keep, idx_mean, idx_se = [], [], []
    for c in curve.center:
        ret = index_window_returns(index_ts, index_level, calendar, float(c), n_windows, rng)
        keep.append(ret is not None)
        if ret is None:
            log.warning("index shorter than T=%.0fs; skipping bin", c)
            continue
        idx_mean.append(float(ret.mean()))
        idx_se.append(float(ret.std(ddof=1) / math.sqrt(len(ret))) if len(ret) > 1 else np.nan)
    df = curve.frame().rename(columns={"bin_center": "T_center"})[np.asarray(keep, dtype=bool)]
    df = df.reset_index(drop=True)
    df["index_return"] = idx_mean
    df["index_return_se"] = idx_se
    return df
