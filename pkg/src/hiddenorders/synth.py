"""Synthetic trade/quote tapes with embedded, known hidden orders.

Background trades arrive as a Poisson process whose intensity follows an
intraday U shape.  Each embedded order is a run of same-direction child
trades by one member, interleaved with the background at a chosen
participation rate.  The midprice is a geometric random walk with one
increment per trade plus, for every order, a deterministic log-price bump
``epsilon * spread * A * N**gamma * (t/T)**beta`` while it executes.  After
completion the bump either stays at its peak or drops to the average level
over the execution, ``1 / (1 + beta)`` of the peak.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .segmentation import HiddenOrder
from .signing import SignedStock
from .tape import NS_PER_SECOND, IngestReport, StockTape, Tape, TradingCalendar, write_calendar, write_csv, write_tape

GROUND_TRUTH_COLUMNS = ("order_id", "stock", "member", "epsilon", "first_idx", "last_idx", "N", "V", "T_seconds",
                        "f_mo", "alpha")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_stocks: int = 10
    n_sessions: int = 250
    session_seconds: float = 30600.0
    start_date: str = "2003-01-02"
    open_hour_utc: float = 8.0
    bg_rate: float = 400.0 / 30600.0  # background trades per second per stock
    n_members: int = 400
    n_brokers: int = 5  # members per stock that carry the embedded orders
    broker_bg_share: float = 0.04  # share of background trade sides taken by a stock's brokers
    n_orders: int = 500
    size_tail: float = 1.5  # Pareto exponent of the number of child trades
    n_min: int = 30
    n_max: int = 200
    alpha: float = 0.2
    alpha_spread: float = 0.1  # per-order alpha ~ U(alpha - spread, alpha + spread)
    shares_median: float = 500.0
    shares_sigma: float = 0.3
    child_size_ratio: float = 3.0  # median child trade size over median background size
    f_mo_levels: Tuple[float, ...] = (0.05, 0.5, 0.95)
    f_mo_weights: Tuple[float, ...] = (0.3, 0.4, 0.3)
    impact_A: float = 0.63
    impact_gamma: float = 0.48
    impact_beta: float = 0.71
    reversion: str = "to-vwap"  # or "none"
    spread: float = 0.002  # relative bid-ask spread
    sigma: float = 0.0002  # per-trade log-midprice volatility
    market_drift: float = 0.0  # common log drift per trading second
    price_min: float = 20.0
    price_max: float = 200.0
    u_shape: float = 1.0  # intraday U amplitude of the trade rate
    size_u_shape: float = 0.0  # intraday U amplitude of trade sizes
    unflagged_fraction: float = 0.0  # share of trades whose aggressor flag is hidden (U)
    order_start: str = "uniform"  # "uniform" in trading time or "volume" (follows the trade rate)
    index_interval_s: float = 60.0

    def __post_init__(self):
        if not 0 < self.alpha < 1 or not 0 < self.alpha - self.alpha_spread or not self.alpha + self.alpha_spread < 1:
            raise ValueError("participation rates must lie strictly inside (0, 1)")
        positive = ("n_stocks", "n_sessions", "session_seconds", "bg_rate", "size_tail", "n_min", "shares_median",
                    "spread", "price_min", "n_brokers", "child_size_ratio")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_members < 3:
            raise ValueError("need at least 3 members")
        if self.n_max < self.n_min or self.n_min < 2:
            raise ValueError("need 2 <= n_min <= n_max")
        if self.reversion not in ("none", "to-vwap"):
            raise ValueError(f"unknown reversion mode {self.reversion!r}")
        if self.order_start not in ("uniform", "volume"):
            raise ValueError(f"unknown order_start {self.order_start!r}")
        if len(self.f_mo_levels) != len(self.f_mo_weights):
            raise ValueError("f_mo_levels and f_mo_weights differ in length")
        if not 0 <= self.broker_bg_share <= 1:
            raise ValueError("broker_bg_share must lie in [0, 1]")
        if self.sigma < 0 or self.u_shape < 0 or self.size_u_shape < 0:
            raise ValueError("volatility and U amplitudes must be non-negative")

    @property
    def f_mo_target(self) -> float:
        w = np.asarray(self.f_mo_weights, dtype=float)
        return float(np.dot(self.f_mo_levels, w / w.sum()))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        for k, v in values.items():
            if k not in types:
                raise KeyError(f"unknown synth option {k!r}")
            current = getattr(defaults, k)
            if isinstance(current, tuple):
                kw[k] = tuple(float(x) for x in str(v).split(",")) if isinstance(v, str) else tuple(v)
            elif isinstance(current, bool):
                kw[k] = str(v).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                kw[k] = int(v)
            elif isinstance(current, float):
                kw[k] = float(v)
            else:
                kw[k] = str(v)
        return cls(**kw)


@dataclass
class TrueOrder:
    order_id: int
    stock: str
    member: str
    epsilon: int
    trade_idx: np.ndarray
    N: int
    V: float
    T_seconds: float
    f_mo: float
    alpha: float
    start_ts: int
    end_ts: int
    target_alpha: float
    target_f_mo: float
    amplitude: float  # peak rescaled impact A * N**gamma

    @property
    def first_idx(self) -> int:
        return int(self.trade_idx[0])

    @property
    def last_idx(self) -> int:
        return int(self.trade_idx[-1])

    def as_row(self) -> dict:
        return {"order_id": self.order_id, "stock": self.stock, "member": self.member, "epsilon": self.epsilon,
                "first_idx": self.first_idx, "last_idx": self.last_idx, "N": self.N, "V": self.V,
                "T_seconds": self.T_seconds, "f_mo": self.f_mo, "alpha": self.alpha}


@dataclass
class SynthMarket:
    config: SynthConfig
    tape: Tape
    truth: List[TrueOrder]
    index: pd.DataFrame

    def write(self, out_dir) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.csv" for name in ("trades", "quotes", "calendar", "ground_truth", "index")}
        write_tape(self.tape, paths["trades"], paths["quotes"], paths["calendar"])
        write_csv(ground_truth_frame(self.truth), paths["ground_truth"])
        write_csv(self.index, paths["index"])
        paths["config"] = out / "synth_config.txt"
        paths["config"].write_text(self.config.to_text(), encoding="utf-8")
        return paths


def ground_truth_frame(truth: Sequence[TrueOrder]) -> pd.DataFrame:
    return pd.DataFrame([t.as_row() for t in truth], columns=list(GROUND_TRUTH_COLUMNS))


# ---------------------------------------------------------------------------
# Intraday intensity
# ---------------------------------------------------------------------------

class _Clock:
    """Maps trading seconds to cumulative expected background trades and back."""

    def __init__(self, cfg: SynthConfig):
        self.L = cfg.session_seconds
        self.n = cfg.n_sessions
        self.U = cfg.u_shape
        self.rate = cfg.bg_rate
        x = np.linspace(0.0, self.L, 4097)
        self._x = x
        self._F = self._cum_within(x)

    def shape(self, tau) -> np.ndarray:
        x = np.mod(tau, self.L) / self.L
        return (1.0 + self.U * (2 * x - 1) ** 2) / (1.0 + self.U / 3.0)

    def _cum_within(self, x):
        L, U = self.L, self.U
        return (x + U * L / 6.0 * ((2 * x / L - 1) ** 3 + 1)) / (1.0 + U / 3.0)

    def intensity_time(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        k = np.floor(tau / self.L)
        return self.rate * (k * self.L + self._cum_within(tau - k * self.L))

    def trading_time(self, lam) -> np.ndarray:
        y = np.asarray(lam, dtype=np.float64) / self.rate
        k = np.floor(y / self.L)
        within = y - k * self.L
        return k * self.L + np.interp(within, self._F, self._x)

    @property
    def total(self) -> float:
        return self.rate * self.L * self.n


def _calendar(cfg: SynthConfig) -> TradingCalendar:
    day = dt.date.fromisoformat(cfg.start_date)
    rows = []
    while len(rows) < cfg.n_sessions:
        if day.weekday() < 5:
            open_dt = dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc) + dt.timedelta(
                hours=cfg.open_hour_utc)
            open_ns = int(open_dt.timestamp()) * NS_PER_SECOND
            rows.append((day.isoformat(), open_ns, open_ns + int(round(cfg.session_seconds * NS_PER_SECOND))))
        day += dt.timedelta(days=1)
    return TradingCalendar.from_sessions(rows)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _bump(u: np.ndarray, beta: float, reversion: str) -> np.ndarray:
    after = 1.0 / (1.0 + beta) if reversion == "to-vwap" else 1.0
    return np.where(u < 0, 0.0, np.where(u <= 1.0, np.clip(u, 0, 1) ** beta, after))


def _pareto_n(rng, cfg: SynthConfig, size: int) -> np.ndarray:
    n = np.floor(cfg.n_min * rng.random(size) ** (-1.0 / cfg.size_tail)).astype(np.int64)
    return np.minimum(n, cfg.n_max)


def _shares(rng, cfg: SynthConfig, clock: _Clock, tau: np.ndarray) -> np.ndarray:
    base = cfg.shares_median * np.exp(cfg.shares_sigma * rng.standard_normal(len(tau)))
    if cfg.size_u_shape > 0:
        x = np.mod(tau, clock.L) / clock.L
        base = base * (1.0 + cfg.size_u_shape * (2 * x - 1) ** 2) / (1.0 + cfg.size_u_shape / 3.0)
    return np.maximum(1, np.rint(base)).astype(np.int64)


def _other_member(rng, n_members: int, exclude: np.ndarray) -> np.ndarray:
    r = rng.integers(0, n_members - 1, size=len(exclude))
    return r + (r >= exclude)


def _bg_sides(rng, n: int, n_members: int, brokers: np.ndarray, share: float) -> np.ndarray:
    """Member on one side of ``n`` background trades; brokers take ``share``."""
    side = rng.integers(0, n_members, size=n)
    hit = rng.random(n) < share
    side[hit] = brokers[rng.integers(0, len(brokers), size=int(hit.sum()))]
    return side


def _generate_stock(rng, cfg: SynthConfig, clock: _Clock, calendar: TradingCalendar, stock: str, n_orders: int,
                    order_id0: int, members: Sequence[str]):
    M = cfg.n_members
    horizon = cfg.session_seconds * cfg.n_sessions

    # background
    n_bg = rng.poisson(clock.total)
    bg_tau = np.sort(clock.trading_time(rng.random(n_bg) * clock.total))
    brokers = rng.choice(M, size=min(cfg.n_brokers, M), replace=False)
    bg_buyer = _bg_sides(rng, n_bg, M, brokers, cfg.broker_bg_share)
    bg_seller = _bg_sides(rng, n_bg, M, brokers, cfg.broker_bg_share)
    clash = np.flatnonzero(bg_buyer == bg_seller)
    while len(clash):
        bg_seller[clash] = _bg_sides(rng, len(clash), M, brokers, cfg.broker_bg_share)
        clash = clash[bg_buyer[clash] == bg_seller[clash]]
    bg_init = np.where(rng.random(n_bg) < 0.5, 1, -1).astype(np.int8)

    # embedded orders, one per equal slot of trading time
    orders = []
    slot = horizon / max(n_orders, 1)
    prev_member = -1
    levels = np.asarray(cfg.f_mo_levels, dtype=float)
    weights = np.asarray(cfg.f_mo_weights, dtype=float)
    for j in range(n_orders):
        N = int(_pareto_n(rng, cfg, 1)[0])
        a = rng.uniform(cfg.alpha - cfg.alpha_spread, cfg.alpha + cfg.alpha_spread)
        # child rate relative to background, chosen so that the expected
        # volume share of the children between first and last child is a
        k = (N - 1) * a / (N * cfg.child_size_ratio * (1 - a))
        gaps = rng.exponential(1.0 / k, size=N - 1)
        span_lam = gaps.sum()
        lo = j * slot
        if cfg.order_start == "uniform":
            tau0 = lo + rng.random() * slot
            lam0 = clock.intensity_time(tau0)
        else:
            lam_lo = clock.intensity_time(lo)
            lam0 = lam_lo + rng.random() * (clock.intensity_time(lo + slot) - lam_lo)
        lam = lam0 + np.concatenate([[0.0], np.cumsum(gaps)])
        if lam[-1] >= clock.total:
            # shift back inside the horizon
            lam = lam - (lam[-1] - clock.total) - 1.0
        tau = clock.trading_time(lam)
        member = int(brokers[rng.integers(0, len(brokers))])
        while member == prev_member and len(brokers) > 1:
            member = int(brokers[rng.integers(0, len(brokers))])
        prev_member = member
        eps = 1 if rng.random() < 0.5 else -1
        p_agg = float(levels[rng.choice(len(levels), p=weights / weights.sum())])
        aggressive = rng.random(N) < p_agg
        cp = _other_member(rng, M, np.full(N, member))
        orders.append(dict(tau=tau, member=member, eps=eps, aggressive=aggressive, cp=cp, alpha=a, p_agg=p_agg, N=N))

    # merge
    parts_tau = [bg_tau] + [o["tau"] for o in orders]
    tau = np.concatenate(parts_tau)
    owner = np.concatenate([np.full(n_bg, -1)] + [np.full(o["N"], i) for i, o in enumerate(orders)])
    buyer = np.concatenate([bg_buyer] + [np.where(o["eps"] > 0, o["member"], o["cp"]) for o in orders])
    seller = np.concatenate([bg_seller] + [np.where(o["eps"] > 0, o["cp"], o["member"]) for o in orders])
    init = np.concatenate([bg_init] + [np.where(o["aggressive"], o["eps"], -o["eps"]).astype(np.int8)
                                       for o in orders])
    order = np.argsort(tau, kind="stable")
    tau, owner, buyer, seller, init = tau[order], owner[order], buyer[order], seller[order], init[order]
    n = len(tau)
    shares = _shares(rng, cfg, clock, tau)
    child = owner >= 0
    shares[child] = np.maximum(1, np.rint(shares[child] * cfg.child_size_ratio)).astype(np.int64)

    # midprice: random walk per trade + impact bumps + common drift
    p0 = float(np.exp(rng.uniform(np.log(cfg.price_min), np.log(cfg.price_max))))
    logmid = np.cumsum(cfg.sigma * rng.standard_normal(n)) + cfg.market_drift * tau
    impact = np.zeros(n)
    perm_steps = np.zeros(n + 1)
    for i, o in enumerate(orders):
        pos = np.flatnonzero(owner == i)
        t0, t1 = tau[pos[0]], tau[pos[-1]]
        amp = cfg.impact_A * o["N"] ** cfg.impact_gamma
        o["amplitude"] = amp
        lo = pos[0]
        hi = np.searchsorted(tau, t1, side="right")
        u = (tau[lo:hi] - t0) / (t1 - t0) if t1 > t0 else np.ones(hi - lo)
        impact[lo:hi] += o["eps"] * cfg.spread * amp * _bump(u, cfg.impact_beta, cfg.reversion)
        after = 1.0 / (1.0 + cfg.impact_beta) if cfg.reversion == "to-vwap" else 1.0
        perm_steps[hi] += o["eps"] * cfg.spread * amp * after
    impact += np.cumsum(perm_steps)[:n]
    logmid = np.log(p0) + logmid + impact
    mid = np.exp(logmid)
    half = 0.5 * cfg.spread
    bid = np.round(mid * (1 - half), 6)
    ask = np.round(mid * (1 + half), 6)
    bid0, ask0 = np.round(p0 * (1 - half), 6), np.round(p0 * (1 + half), 6)
    prev_bid = np.concatenate([[bid0], bid[:-1]])
    prev_ask = np.concatenate([[ask0], ask[:-1]])
    price = np.where(init > 0, prev_ask, prev_bid)

    agg = init.copy()
    if cfg.unflagged_fraction > 0:
        agg[rng.random(n) < cfg.unflagged_fraction] = 0

    # wall-clock timestamps
    tau_ns = np.rint(tau * NS_PER_SECOND).astype(np.int64)
    ts = calendar.wall_ns(tau_ns)
    q_ts = np.concatenate([[calendar.open_ns[0]], ts])
    st = StockTape(stock=stock, ts=ts, price=price, shares=shares, buyer=buyer.astype(np.int32),
                   seller=seller.astype(np.int32), aggressor=agg.astype(np.int8), quote_ts=q_ts,
                   bid=np.concatenate([[bid0], bid]), ask=np.concatenate([[ask0], ask]))

    # ground truth measured on the generated tape
    vol = price * shares
    truth = []
    for i, o in enumerate(orders):
        pos = np.flatnonzero(owner == i)
        v = vol[pos]
        t0, t1 = ts[pos[0]], ts[pos[-1]]
        lo = np.searchsorted(ts, t0, side="left")
        hi = np.searchsorted(ts, t1, side="right")
        truth.append(TrueOrder(
            order_id=order_id0 + i, stock=stock, member=members[o["member"]], epsilon=o["eps"], trade_idx=pos,
            N=o["N"], V=float(o["eps"] * v.sum()),
            T_seconds=float(calendar.trading_seconds_between(t0, t1)),
            f_mo=float(v[init[pos] == o["eps"]].sum() / v.sum()),
            alpha=float(v.sum() / vol[lo:hi].sum()), start_ts=int(t0), end_ts=int(t1),
            target_alpha=float(o["alpha"]), target_f_mo=o["p_agg"], amplitude=float(o["amplitude"]),
        ))
    return st, truth, tau, logmid


def generate(config: SynthConfig = SynthConfig()) -> SynthMarket:
    """Generate a synthetic market; identical configs give identical output."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    calendar = _calendar(cfg)
    clock = _Clock(cfg)
    members = [f"M{i:03d}" for i in range(cfg.n_members)]
    per_stock = [cfg.n_orders // cfg.n_stocks + (1 if i < cfg.n_orders % cfg.n_stocks else 0)
                 for i in range(cfg.n_stocks)]
    stocks, truth = {}, []
    index_tau = np.arange(0.0, cfg.session_seconds * cfg.n_sessions + 1e-9, cfg.index_interval_s)
    index_log = np.zeros(len(index_tau))
    for i in range(cfg.n_stocks):
        name = f"S{i:02d}"
        st, tr, tau, logmid = _generate_stock(rng, cfg, clock, calendar, name, per_stock[i], len(truth), members)
        stocks[name] = st
        truth.extend(tr)
        k = np.searchsorted(tau, index_tau, side="right") - 1
        lm = np.where(k >= 0, logmid[np.clip(k, 0, None)], logmid[0] if len(logmid) else 0.0)
        index_log += lm - lm[0]
    index_log /= cfg.n_stocks
    index = pd.DataFrame({
        "timestamp_ns": calendar.wall_ns(np.rint(index_tau * NS_PER_SECOND).astype(np.int64)),
        "level": np.round(1000.0 * np.exp(index_log), 6),
    })
    used = sorted({int(c) for st in stocks.values() for c in np.concatenate([st.buyer, st.seller])})
    if used != list(range(cfg.n_members)):
        # keep member codes dense: remap to the members that actually trade
        remap = np.full(cfg.n_members, -1)
        remap[used] = np.arange(len(used))
        for st in stocks.values():
            st.buyer = remap[st.buyer].astype(np.int32)
            st.seller = remap[st.seller].astype(np.int32)
        members = [members[u] for u in used]
    report = IngestReport(sum(s.n_trades for s in stocks.values()), sum(len(s.quote_ts) for s in stocks.values()),
                          len(calendar))
    return SynthMarket(cfg, Tape(stocks, members, calendar, report), truth, index)


def impact_study_config(**overrides) -> SynthConfig:
    """Preset for impact-recovery studies on ground-truth orders.

    Many orders spanning more than a decade of sizes, executed at a high
    participation rate so that orders rarely overlap and the impact of one
    order adds little noise to another.  Child trades have the background
    size distribution; the preset is not meant for detection studies.
    """
    base = dict(n_orders=2000, n_min=10, n_max=1000, size_tail=1.0, sigma=1e-4, alpha=0.4,
                child_size_ratio=1.0)
    base.update(overrides)
    return SynthConfig(**base)


def truth_as_hidden_orders(truth: Sequence[TrueOrder]) -> List[HiddenOrder]:
    return [HiddenOrder(stock=t.stock, member=t.member, epsilon=t.epsilon, start_ts=t.start_ts, end_ts=t.end_ts,
                        n_trades=t.N, signed_volume=t.V, T_seconds=t.T_seconds, dominant_fraction=1.0,
                        first_idx=t.first_idx, last_idx=t.last_idx) for t in truth if t.T_seconds > 0]


# ---------------------------------------------------------------------------
# Detection scoring
# ---------------------------------------------------------------------------

@dataclass
class DetectionScore:
    n_true: int
    n_detected: int
    n_matched: int
    precision: Optional[float]
    recall: Optional[float]
    start_offset: Optional[float]
    end_offset: Optional[float]
    boundary_error: Optional[float]
    threshold: float

    def as_dict(self) -> dict:
        return {k: ("NA" if v is None else v) for k, v in asdict(self).items()}


def _jaccard(a0, a1, b0, b1) -> float:
    inter = min(a1, b1) - max(a0, b0) + 1
    if inter <= 0:
        return 0.0
    return inter / (max(a1, b1) - min(a0, b0) + 1)


def score_detection(truth, detected, threshold: float = 0.5) -> DetectionScore:
    """Match detections to true orders by trade-index interval overlap.

    ``truth`` and ``detected`` are sequences of objects (or frames) with
    ``stock``, ``member``, ``first_idx`` and ``last_idx``.  Pairs of the same
    stock and member whose Jaccard overlap of ``[first_idx, last_idx]``
    reaches ``threshold`` are matched one-to-one, greedily by decreasing
    overlap.
    """
    t = _intervals(truth)
    d = _intervals(detected)
    pairs = []
    by_key: Dict[tuple, List[int]] = {}
    for j, (s, m, a, b) in enumerate(t):
        by_key.setdefault((s, m), []).append(j)
    for i, (s, m, a, b) in enumerate(d):
        for j in by_key.get((s, m), ()):
            jac = _jaccard(a, b, t[j][2], t[j][3])
            if jac >= threshold:
                pairs.append((-jac, i, j))
    pairs.sort()
    used_d, used_t, offsets = set(), set(), []
    for neg, i, j in pairs:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        offsets.append((abs(d[i][2] - t[j][2]), abs(d[i][3] - t[j][3])))
    k = len(offsets)
    off = np.asarray(offsets, dtype=float).reshape(-1, 2)
    return DetectionScore(
        n_true=len(t), n_detected=len(d), n_matched=k,
        precision=k / len(d) if d else None, recall=k / len(t) if t else None,
        start_offset=float(off[:, 0].mean()) if k else None, end_offset=float(off[:, 1].mean()) if k else None,
        boundary_error=float(off.mean()) if k else None, threshold=threshold,
    )


def _intervals(items) -> List[tuple]:
    if isinstance(items, pd.DataFrame):
        return list(zip(items["stock"].astype(str), items["member"].astype(str), items["first_idx"].astype(int),
                        items["last_idx"].astype(int)))
    return [(str(x.stock), str(x.member), int(x.first_idx), int(x.last_idx)) for x in items]
