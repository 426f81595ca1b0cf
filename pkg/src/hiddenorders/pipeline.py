"""Stage functions that read and write the on-disk artifacts.

Every stage takes a :class:`RunConfig`, reads its inputs from files and
writes its outputs into ``config.out``.  ``fits.json`` and
``manifest.json`` are shared: each stage merges its own entries into them,
so running the stages one after another gives the same files as
:func:`run_pipeline`.
"""

from __future__ import annotations

import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigError, InsufficientDataError
from .impact import (DEFAULT_GRID, fit_powerlaw, impact_path_profile, impact_vs_N, impact_vs_T_with_index,
                     order_impacts, pca_exponents, profile_from_paths, reversion_ratio, start_end_distributions, trading_profile)
from .metrics import (METRIC_COLUMNS, Filters, apply_filters, compute_all_metrics, ensemble_stats, metrics_frame,
                      metrics_from_frame, series_lookup)
from .segmentation import (HIDDEN_ORDER_COLUMNS, ActivityFilter, SegParams, default_workers, detect_hidden_orders,
                           orders_frame, orders_from_frame)
from .signing import sign_tape, signed_trades_frame
from .synth import GROUND_TRUTH_COLUMNS, score_detection
from .tape import SchemaError, Tape, ingest_tape, read_calendar, write_csv, yearly_relative_spreads

log = logging.getLogger(__name__)

IMPACT_CURVE_COLUMNS = ("bin_lo", "bin_hi", "bin_center", "mean_R", "se_R", "count")
ORDER_IMPACT_COLUMNS = METRIC_COLUMNS + ("r", "R", "truncated")


@dataclass
class RunConfig:
    """All pipeline parameters; every field has its documented default."""

    # inputs and outputs
    trades: Optional[str] = None
    quotes: Optional[str] = None
    calendar: Optional[str] = None
    orders: Optional[str] = None  # hidden_orders.csv or orders_metrics.csv from an earlier stage
    truth: Optional[str] = None
    index: Optional[str] = None
    out: str = "out"
    workers: int = 0  # 0: environment variable or 1
    # signing
    lr_delay_ns: int = 0
    write_signed: bool = False
    # segmentation
    p_threshold: float = 0.95
    min_seg: int = 10
    min_trades: int = 10
    min_dominance: float = 0.75
    significance: str = "approx"
    n_shuffles: int = 200
    seg_variable: str = "volume"
    seg_seed: int = 0
    activity_min_sessions: int = 200
    activity_min_trades: int = 1000
    # filters ("none" disables)
    max_T_sessions: Optional[float] = 1.0
    filter_min_trades: Optional[int] = 10
    min_orders_per_stock_year: Optional[int] = 250
    f_mo_band: Optional[Tuple[float, float]] = None
    # impact
    bins_per_decade: int = 8
    min_bin_count: int = 20
    fit_weight: str = "none"
    grid_inside: int = 30
    grid_after: int = 20
    perm_window: Tuple[float, float] = (1.5, 3.0)
    f_mo_threshold: float = 0.8
    index_windows: int = 1000
    index_bins_per_decade: int = 4
    index_seed: int = 0
    # pca
    n_boot: int = 1000
    boot_seed: int = 0
    ci_level: float = 0.95
    pca_min_orders: int = 30
    # profile
    profile_bins: int = 10
    timing_bins: int = 20
    # scoring
    match_threshold: float = 0.5

    def __post_init__(self):
        if self.fit_weight not in ("none", "count", "inverse_variance"):
            raise ValueError(f"unknown fit_weight {self.fit_weight!r}")
        # the derived objects check their own ranges; fail here rather than mid-run
        self.seg_params, self.activity, self.filters
        if not 0 < self.ci_level < 1 or not 0 < self.match_threshold <= 1:
            raise ValueError("ci_level and match_threshold must lie in (0, 1)")

    # -- derived parameter objects ------------------------------------------------
    @property
    def seg_params(self) -> SegParams:
        return SegParams(p_threshold=self.p_threshold, min_seg=self.min_seg, min_trades=self.min_trades,
                         min_dominance=self.min_dominance, significance=self.significance,
                         n_shuffles=self.n_shuffles, variable=self.seg_variable, seed=self.seg_seed)

    @property
    def activity(self) -> ActivityFilter:
        return ActivityFilter(self.activity_min_sessions, self.activity_min_trades)

    @property
    def filters(self) -> Filters:
        return Filters(self.max_T_sessions, self.filter_min_trades, self.min_orders_per_stock_year, self.f_mo_band)

    @property
    def grid(self) -> np.ndarray:
        from .impact import impact_grid

        return impact_grid(self.grid_inside, self.grid_after, 3.0)

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else max(default_workers(), 1)

    # -- text form ----------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        defaults = cls()
        kw = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                kw[name] = _parse_value(raw, getattr(defaults, name), name)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_OPTIONAL_INT = {"filter_min_trades", "min_orders_per_stock_year"}
_OPTIONAL_FLOAT = {"max_T_sessions"}
_OPTIONAL_STR = {"trades", "quotes", "calendar", "orders", "truth", "index"}
_PAIRS = {"f_mo_band", "perm_window"}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw, default, name: str):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    if name in _OPTIONAL_INT | _OPTIONAL_FLOAT | _OPTIONAL_STR | {"f_mo_band"} and s.lower() in ("none", ""):
        return None
    if name in _PAIRS:
        parts = [float(p) for p in s.split(",")]
        if len(parts) != 2:
            raise ValueError(f"{name} needs two comma-separated numbers, got {raw!r}")
        return (parts[0], parts[1])
    if name in _OPTIONAL_INT:
        return int(s)
    if name in _OPTIONAL_FLOAT:
        return float(s)
    if name in _OPTIONAL_STR:
        return s
    if isinstance(default, bool):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(s)
    if isinstance(default, float):
        return float(s)
    return s


def read_config_file(path) -> Dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    out = {}
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# Artifact I/O
# ---------------------------------------------------------------------------

def read_artifact(path, columns: Sequence[str], prefix_ok: bool = False) -> pd.DataFrame:
    """Read a stage artifact, checking its header.

    With ``prefix_ok`` the file may carry extra trailing columns (for
    example ``orders_metrics.csv`` where ``hidden_orders.csv`` is wanted).
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(p, dtype={"stock": str, "member": str}, float_precision="round_trip")
    found = list(df.columns)
    want = list(columns)
    ok = found[:len(want)] == want if prefix_ok else found == want
    if not ok:
        raise SchemaError(path, want, found)
    return df


def _dump_json(obj, path: Path) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def merge_json(path: Path, updates: dict) -> dict:
    """Merge top-level ``updates`` into the JSON object at ``path``."""
    data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    data.update(_jsonable(updates))
    _dump_json(data, path)
    return data


class Manifest:
    """Accumulates per-stage timings and row counts into manifest.json."""

    def __init__(self, out: Path, config: RunConfig):
        self.path = out / "manifest.json"
        self.config = config

    def record(self, stage: str, seconds: float, rows: dict, seeds: Optional[dict] = None, extra=None) -> None:
        import scipy

        data = json.loads(self.path.read_text(encoding="utf-8")) if self.path.exists() else {}
        data["versions"] = {"hiddenorders": __version__, "python": platform.python_version(),
                            "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}
        stages = data.setdefault("stages", {})
        entry = {"wall_seconds": round(seconds, 6), "rows": rows}
        if seeds:
            entry["seeds"] = seeds
        if extra:
            entry.update(extra)
        stages[stage] = entry
        _dump_json(data, self.path)


def _prepare_out(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    (out / "run_config.txt").write_text(config.to_text(), encoding="utf-8")
    return out


def _need(value, what: str) -> str:
    if value is None:
        raise ConfigError(f"missing input: {what}")
    return value


def load_tape(config: RunConfig) -> Tape:
    return ingest_tape(_need(config.trades, "trades file"), _need(config.quotes, "quotes file"),
                       _need(config.calendar, "calendar file"))


def _orders_path(config: RunConfig, default: str) -> Path:
    return Path(config.orders) if config.orders else Path(config.out) / default


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_detect(config: RunConfig, tape: Optional[Tape] = None) -> pd.DataFrame:
    """Sign the tape, segment member series and write hidden_orders.csv."""
    out = _prepare_out(config)
    t0 = time.perf_counter()
    tape = tape if tape is not None else load_tape(config)
    signed = sign_tape(tape, config.lr_delay_ns)
    if config.write_signed:
        write_csv(signed_trades_frame(tape, signed), out / "signed_trades.csv")
    counts: dict = {}
    orders = detect_hidden_orders(tape, signed, config.seg_params, config.activity, config.n_workers, counts)
    df = orders_frame(orders)
    write_csv(df, out / "hidden_orders.csv")
    fallback = sum(s.n_unclassifiable for s in signed.values())
    Manifest(out, config).record(
        "detect", time.perf_counter() - t0,
        {"trades": tape.n_trades, "rejected_rows": tape.report.n_rejected, "hidden_orders": len(df)},
        seeds={"seg_seed": config.seg_seed},
        extra={"counts": dict(sorted(counts.items())), "unclassifiable_trades": fallback})
    return df


def stage_metrics(config: RunConfig, tape: Optional[Tape] = None) -> pd.DataFrame:
    """Compute f_mo and alpha for every detected order; writes orders_metrics.csv."""
    out = _prepare_out(config)
    t0 = time.perf_counter()
    odf = read_artifact(_orders_path(config, "hidden_orders.csv"), HIDDEN_ORDER_COLUMNS, prefix_ok=True)
    orders = orders_from_frame(odf[list(HIDDEN_ORDER_COLUMNS)])
    tape = tape if tape is not None else load_tape(config)
    signed = sign_tape(tape, config.lr_delay_ns)
    items = compute_all_metrics(tape, signed, orders)
    df = metrics_frame(items)
    write_csv(df, out / "orders_metrics.csv")
    Manifest(out, config).record("metrics", time.perf_counter() - t0, {"orders": len(df)})
    return df


def _load_metrics(config: RunConfig):
    path = Path(config.orders) if config.orders else Path(config.out) / "orders_metrics.csv"
    df = read_artifact(path, METRIC_COLUMNS)
    return metrics_from_frame(df)


def _filtered(config: RunConfig, items, tape: Tape) -> Tuple[list, dict]:
    report: dict = {}
    kept = apply_filters(items, config.filters, tape.calendar, report)
    if not kept:
        raise InsufficientDataError("no orders left after filtering")
    return kept, report


def _soft_fit(fits: dict, name: str, compute):
    """Store ``compute()`` under ``name``; too little data is recorded, not raised.

    A tape can be valid yet too small for a given curve, and one thin curve
    should not sink the rest of the run.
    """
    try:
        fits[name] = compute()
    except InsufficientDataError as exc:
        log.warning("%s skipped: %s", name, exc)
        fits[name] = {"status": "insufficient_data", "reason": str(exc)}
        return None
    return fits[name]


def stage_impact(config: RunConfig, tape: Optional[Tape] = None) -> dict:
    """Impact per order, <R|N> curve and fit, impact path profile, reversion, ensemble stats.

    Writes order_impacts.csv, impact_curve.csv, impact_path.csv,
    stats.json and (with an index file) index_comparison.csv, and merges
    its fits into fits.json.
    """
    out = _prepare_out(config)
    t0 = time.perf_counter()
    items = _load_metrics(config)
    tape = tape if tape is not None else load_tape(config)
    kept, report = _filtered(config, items, tape)
    spreads = {}
    for stock in sorted({m.order.stock for m in kept}):
        for year, s in yearly_relative_spreads(tape, stock).items():
            spreads[(stock, year)] = s
    counts: dict = {}
    grid = config.grid
    imps = order_impacts([m.order for m in kept], tape, spreads, grid, counts)
    R = np.array([i.R if i is not None else np.nan for i in imps])

    rows = []
    for m, i in zip(kept, imps):
        row = m.as_row()
        row.update(r=i.r if i else np.nan, R=i.R if i else np.nan, truncated=bool(i.truncated) if i else True)
        rows.append(row)
    write_csv(pd.DataFrame(rows, columns=list(ORDER_IMPACT_COLUMNS)), out / "order_impacts.csv")

    ok = np.isfinite(R)
    N = np.array([m.order.n_trades for m in kept], dtype=np.float64)
    f = np.array([m.f_mo for m in kept])
    fits: dict = {}
    curve = impact_vs_N(N[ok], R[ok], bins_per_decade=config.bins_per_decade, min_bin_count=config.min_bin_count)
    write_csv(curve.frame(), out / "impact_curve.csv")
    _soft_fit(fits, "impact_vs_N",
              lambda: dict(fit_powerlaw(curve, config.fit_weight).as_dict(), weight=config.fit_weight))
    for name, band in (("impact_vs_N_fmo_high", (config.f_mo_threshold, 1.0)), ("impact_vs_N_fmo_low", (0.0, 0.2))):
        def band_fit(name=name, band=band):
            c = impact_vs_N(N[ok], R[ok], f[ok], band, config.bins_per_decade, config.min_bin_count)
            write_csv(c.frame(), out / f"{name[len('impact_vs_N_'):]}_impact_curve.csv")
            return dict(fit_powerlaw(c, config.fit_weight).as_dict(), weight=config.fit_weight, f_mo_band=list(band))
        _soft_fit(fits, name, band_fit)

    paths = np.array([i.path for i in imps if i is not None]).reshape(-1, len(grid))
    prof = profile_from_paths(paths, grid)
    write_csv(prof.frame("mean_R"), out / "impact_path.csv")
    beta = _soft_fit(fits, "impact_path", lambda: impact_path_profile(paths, grid)[1].as_dict())
    if beta is not None:
        _soft_fit(fits, "reversion",
                  lambda: reversion_ratio(prof, beta["gamma"], config.perm_window).as_dict())

    if config.index:
        idx = pd.read_csv(_need(config.index, "index file"), float_precision="round_trip")
        if list(idx.columns) != ["timestamp_ns", "level"]:
            raise SchemaError(config.index, ["timestamp_ns", "level"], list(idx.columns))
        T = np.array([m.order.T_seconds for m in kept])
        table = impact_vs_T_with_index(T[ok], R[ok], idx["timestamp_ns"].to_numpy(np.int64),
                                       idx["level"].to_numpy(np.float64), tape.calendar,
                                       config.index_bins_per_decade, 1, config.index_windows, config.index_seed)
        write_csv(table, out / "index_comparison.csv")

    stats = ensemble_stats(kept, R, config.f_mo_threshold)
    _dump_json(dict(stats.as_dict(), filters_removed=report, no_quote=counts.get("no_quote", 0)),
               out / "stats.json")
    merge_json(out / "fits.json", fits)
    Manifest(out, config).record("impact", time.perf_counter() - t0,
                                 {"orders_in": len(items), "orders_kept": len(kept), "with_impact": int(ok.sum()),
                                  "curve_bins": len(curve.center)},
                                 seeds={"index_seed": config.index_seed}, extra={"filters_removed": report})
    return fits


def stage_pca(config: RunConfig, tape: Optional[Tape] = None) -> dict:
    """PCA exponents g1, g2, g3 with bootstrap CIs, merged into fits.json."""
    out = _prepare_out(config)
    t0 = time.perf_counter()
    items = _load_metrics(config)
    cal = tape.calendar if tape is not None else read_calendar(_need(config.calendar, "calendar file"))
    items = apply_filters(items, config.filters, cal)
    if len(items) < config.pca_min_orders:
        raise InsufficientDataError(
            f"pca needs at least {config.pca_min_orders} orders, got {len(items)}")
    V = [m.order.signed_volume for m in items]
    N = [m.order.n_trades for m in items]
    T = [m.order.T_seconds for m in items]
    res = pca_exponents(V, N, T, config.n_boot, config.boot_seed, config.ci_level, config.pca_min_orders)
    fits = {f"pca_{k}": v.as_dict() for k, v in res.items()}
    fits["pca_consistency"] = {"g1": res["g1"].g, "g2_times_g3": res["g2"].g * res["g3"].g}
    merge_json(out / "fits.json", fits)
    Manifest(out, config).record("pca", time.perf_counter() - t0, {"orders": len(items)},
                                 seeds={"boot_seed": config.boot_seed})
    return fits


def stage_profile(config: RunConfig, tape: Optional[Tape] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Trading profile (own and concurrent volume) and start/end time histograms."""
    out = _prepare_out(config)
    t0 = time.perf_counter()
    items = _load_metrics(config)
    tape = tape if tape is not None else load_tape(config)
    kept, _ = _filtered(config, items, tape)
    orders = [m.order for m in kept]
    signed = sign_tape(tape, config.lr_delay_ns)
    series = series_lookup(tape, signed, orders)
    own, mkt = trading_profile(orders, tape, series, config.profile_bins)
    parts = []
    for name, c in (("own", own), ("market", mkt)):
        df = c.frame("mean_volume")
        df.insert(0, "curve", name)
        parts.append(df)
    profile = pd.concat(parts, ignore_index=True)
    write_csv(profile, out / "profile.csv")
    edges, h_start, h_end = start_end_distributions(orders, tape.calendar, config.timing_bins)
    timing = pd.concat([
        pd.DataFrame({"kind": k, "bin_lo": edges[:-1], "bin_hi": edges[1:], "probability": h})
        for k, h in (("start", h_start), ("end", h_end))
    ], ignore_index=True)
    write_csv(timing, out / "timing_hist.csv")
    Manifest(out, config).record("profile", time.perf_counter() - t0, {"orders": len(orders)})
    return profile, timing


def stage_score(config: RunConfig) -> dict:
    """Precision, recall and boundary error of hidden_orders.csv against ground truth."""
    out = _prepare_out(config)
    t0 = time.perf_counter()
    truth = read_artifact(_need(config.truth, "ground truth file"), GROUND_TRUTH_COLUMNS)
    det = read_artifact(_orders_path(config, "hidden_orders.csv"), HIDDEN_ORDER_COLUMNS, prefix_ok=True)
    score = score_detection(truth, det, config.match_threshold).as_dict()
    _dump_json(score, out / "score.json")
    Manifest(out, config).record("score", time.perf_counter() - t0, {"true": len(truth), "detected": len(det)})
    return score


def run_pipeline(config: RunConfig) -> Path:
    """detect -> metrics -> impact -> pca -> profile (-> score with ground truth)."""
    out = _prepare_out(config)
    t0 = time.perf_counter()
    tape = load_tape(config)
    load_s = time.perf_counter() - t0
    staged = RunConfig(**{f.name: getattr(config, f.name) for f in fields(config)})
    staged.orders = None
    stage_detect(staged, tape)
    stage_metrics(staged, tape)
    stage_impact(staged, tape)
    stage_pca(staged, tape)
    stage_profile(staged, tape)
    if config.truth:
        stage_score(staged)
    Manifest(out, config).record("ingest", load_s, {"trades": tape.n_trades,
                                                    "quotes": int(sum(len(tape[s].quote_ts) for s in tape.stocks))})
    return out
