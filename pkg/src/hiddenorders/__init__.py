"""Reconstruction and impact analysis of hidden orders in member-labelled trade tapes."""

__version__ = "0.1.0"

from .errors import InsufficientDataError
from .impact import (FitResult, ImpactCurve, OrderImpact, ProfileCurve, fit_power_law, fit_powerlaw,
                     impact_path_profile, impact_vs_N, impact_vs_T_with_index, order_impact, order_impacts,
                     pca_exponents, pca_fit, reversion_ratio, start_end_distributions, trading_profile)
from .metrics import (EnsembleStats, Filters, OrderMetrics, apply_filters, compute_alpha, compute_all_metrics,
                      compute_f_mo, ensemble_stats)
from .segmentation import (ActivityFilter, HiddenOrder, MemberSeries, Segment, SegParams, build_member_series,
                           detect_hidden_orders, extract_hidden_orders, segment_series)
from .signing import SignedTrade, sign_tape, sign_trades
from .synth import SynthConfig, generate, impact_study_config, score_detection
from .tape import (Aggressor, NoQuoteError, QuoteSnapshot, SchemaError, Tape, TapeError, Trade, TradingCalendar,
                   UnorderedTimestampsError, ingest_tape, mean_relative_spread, midprice_at)
