"""Synthetic market generator and detection scoring."""

import filecmp

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from hiddenorders.impact import DEFAULT_GRID, order_impact, start_end_distributions, trading_profile
from hiddenorders.metrics import compute_all_metrics, ensemble_stats, series_lookup
from hiddenorders.segmentation import HiddenOrder
from hiddenorders.signing import sign_tape
from hiddenorders.synth import (GROUND_TRUTH_COLUMNS, SynthConfig, generate, ground_truth_frame, impact_study_config,
                                score_detection, truth_as_hidden_orders)
from hiddenorders.tape import ingest_tape


@pytest.fixture(scope="module")
def market():
    return generate(SynthConfig(n_stocks=4, n_sessions=100, n_orders=400, seed=7))


def single_order(beta, reversion, seed=1):
    cfg = SynthConfig(n_stocks=1, n_sessions=5, n_orders=1, sigma=0.0, impact_A=1.0, impact_beta=beta,
                      impact_gamma=0.0, reversion=reversion, n_min=200, n_max=200, seed=seed)
    return cfg, generate(cfg)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=1.0), dict(alpha=0.95), dict(n_stocks=0), dict(reversion="linear"),
                                    dict(n_min=1), dict(n_max=5, n_min=10), dict(broker_bg_share=1.5),
                                    dict(sigma=-1.0)])
    def test_infeasible(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)

    def test_text_round_trip(self):
        cfg = SynthConfig(seed=3, f_mo_levels=(0.1, 0.9), f_mo_weights=(0.5, 0.5), reversion="none")
        values = dict(line.split(" = ", 1) for line in cfg.to_text().splitlines())
        assert SynthConfig.from_mapping(values) == cfg

    def test_unknown_option(self):
        with pytest.raises(KeyError):
            SynthConfig.from_mapping({"colour": "red"})


class TestClosedForms:
    def test_noise_free_final_move(self):
        cfg, m = single_order(0.5, "none")
        t = m.truth[0]
        lm = np.log(m.tape["S00"].mid)
        assert (lm[-1] - lm[0]) == pytest.approx(t.epsilon * cfg.spread, rel=1e-5)

    @pytest.mark.parametrize("beta,reversion", [(0.5, "none"), (0.71, "to-vwap"), (0.62, "to-vwap")])
    def test_measured_path_matches_programmed(self, beta, reversion):
        cfg, m = single_order(beta, reversion)
        o = truth_as_hidden_orders(m.truth)[0]
        path = order_impact(o, m.tape, cfg.spread).path
        g = DEFAULT_GRID
        after = 1 / (1 + beta) if reversion == "to-vwap" else 1.0
        expected = np.where(g <= 1, g**beta, after)
        ok = np.isfinite(path) & (g > 0)
        assert ok.sum() >= 29
        assert np.max(np.abs(path[ok] / expected[ok] - 1)) <= 0.02

    def test_vwap_plateau_exact(self):
        cfg, m = single_order(0.71, "to-vwap")
        t = m.truth[0]
        lm = np.log(m.tape["S00"].mid)
        k_peak = m.tape["S00"].quote_index(t.end_ts)
        peak, plateau = lm[k_peak] - lm[0], lm[-1] - lm[0]
        assert plateau / peak == pytest.approx(1 / 1.71, rel=1e-5)


class TestTape:
    def test_passes_tape_invariants(self, market, tmp_path):
        paths = market.write(tmp_path)
        tape = ingest_tape(paths["trades"], paths["quotes"], paths["calendar"])
        assert tape == market.tape and tape.report.n_rejected == 0
        assert tape.report.no_prevailing_quote == 0

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_stocks=2, n_sessions=10, n_orders=20, seed=11)
        a = generate(cfg).write(tmp_path / "a")
        b = generate(cfg).write(tmp_path / "b")
        for k in a:
            assert filecmp.cmp(a[k], b[k], shallow=False), k

    def test_truth_indices_reference_rows(self, market):
        for t in market.truth:
            st = market.tape[t.stock]
            code = market.tape.member_code(t.member)
            assert t.last_idx < st.n_trades
            side = st.buyer[t.trade_idx] if t.epsilon > 0 else st.seller[t.trade_idx]
            assert np.all(side == code) and len(t.trade_idx) == t.N

    def test_ground_truth_schema(self, market):
        assert tuple(ground_truth_frame(market.truth).columns) == GROUND_TRUTH_COLUMNS


class TestEnsembleTargets:
    def test_f_mo_within_3se(self, market):
        f = np.array([t.f_mo for t in market.truth])
        se = f.std(ddof=1) / np.sqrt(len(f))
        assert abs(f.mean() - market.config.f_mo_target) <= 3 * se

    def test_sparse_orders_hit_alpha_target(self):
        # orders that rarely overlap and brokers with no background trading:
        # the concurrent volume is then background flow only
        m = generate(SynthConfig(n_stocks=4, n_sessions=400, n_orders=200, broker_bg_share=0.0, seed=1))
        a = np.array([t.alpha for t in m.truth])
        assert abs(a.mean() - 0.2) <= 3 * a.std(ddof=1) / np.sqrt(len(a))
        mean, se = ensemble_stats(compute_all_metrics(m.tape, sign_tape(m.tape), truth_as_hidden_orders(m.truth))).mean_alpha
        assert abs(mean - 0.2) <= 3 * se

    def test_dense_orders_dilute_each_other(self, market):
        a = np.array([t.alpha for t in market.truth])
        target = np.array([t.target_alpha for t in market.truth])
        assert a.mean() < target.mean()

    def test_pipeline_alpha_bounds_child_alpha(self, market):
        # same window, but the member's other trades in it add to the numerator
        items = compute_all_metrics(market.tape, sign_tape(market.tape), truth_as_hidden_orders(market.truth))
        child = np.array([t.alpha for t in market.truth])
        assert np.all(np.array([m.alpha for m in items]) >= child - 1e-12)

    def test_uniform_start_times(self, market):
        orders = truth_as_hidden_orders(market.truth)
        _, h_start, _ = start_end_distributions(orders, market.tape.calendar, 10)
        counts = h_start * len(orders)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_concurrent_volume_u_shape(self):
        cfg = SynthConfig(n_stocks=2, n_sessions=40, n_orders=20, u_shape=0.0, size_u_shape=1.5, seed=5)
        m = generate(cfg)
        cal = m.tape.calendar
        # one pseudo-order per stock and session spanning open to close
        orders = []
        for stock in m.tape.stocks:
            st = m.tape[stock]
            member = m.tape.members[st.buyer[0]]
            for o, c in zip(cal.open_ns, cal.close_ns):
                lo, hi = np.searchsorted(st.ts, [o, c])
                orders.append(HiddenOrder(stock, member, 1, int(st.ts[lo]), int(st.ts[hi - 1]), 10, 1.0,
                                          float(cal.trading_seconds_between(st.ts[lo], st.ts[hi - 1])), 1.0,
                                          int(lo), int(hi - 1)))
        series = series_lookup(m.tape, sign_tape(m.tape), orders)
        _, mkt = trading_profile(orders, m.tape, series, 10)
        edges = np.linspace(0, 1, 11)
        U = cfg.size_u_shape
        # bin average of (1 + U (2x - 1)^2) / (1 + U / 3)
        prim = lambda x: x + U * (2 * x - 1) ** 3 / 6
        programmed = (prim(edges[1:]) - prim(edges[:-1])) / np.diff(edges) / (1 + U / 3)
        assert np.all(np.abs(mkt.mean - programmed) <= 3 * mkt.se)


def test_impact_study_preset():
    cfg = impact_study_config(seed=2)
    assert cfg.n_orders == 2000 and cfg.child_size_ratio == 1.0
    assert impact_study_config(n_orders=10).n_orders == 10


class TestScore:
    truth = pd.DataFrame({"stock": ["X", "X", "Y"], "member": ["A", "B", "A"], "first_idx": [0, 50, 10],
                          "last_idx": [19, 99, 29]})

    def test_exact(self):
        s = score_detection(self.truth, self.truth)
        assert (s.precision, s.recall, s.boundary_error) == (1.0, 1.0, 0.0)

    def test_nothing_detected(self):
        s = score_detection(self.truth, self.truth.iloc[:0])
        assert s.recall == 0 and s.as_dict()["precision"] == "NA"

    def test_split_in_halves(self):
        det = pd.DataFrame({"stock": ["X", "X"], "member": ["B", "B"], "first_idx": [50, 75], "last_idx": [74, 99]})
        s = score_detection(self.truth.iloc[[1]], det)
        # each half overlaps with Jaccard exactly 0.5, but only one can match
        assert s.n_matched <= 1 and s.precision <= 0.5

    def test_member_and_stock_must_agree(self):
        det = self.truth.assign(member="Z")
        assert score_detection(self.truth, det).n_matched == 0

    def test_greedy_best_overlap_wins(self):
        det = pd.DataFrame({"stock": ["X", "X"], "member": ["A", "A"], "first_idx": [0, 2], "last_idx": [15, 19]})
        s = score_detection(self.truth.iloc[[0]], det)
        assert s.n_matched == 1 and s.start_offset == 2 and s.end_offset == 0

    def test_threshold(self):
        det = pd.DataFrame({"stock": ["X"], "member": ["A"], "first_idx": [10], "last_idx": [19]})
        assert score_detection(self.truth.iloc[[0]], det).n_matched == 1
        assert score_detection(self.truth.iloc[[0]], det, threshold=0.51).n_matched == 0
