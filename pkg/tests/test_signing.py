"""Trade signing: recorded flags pass through, Lee-Ready for the rest."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SEC, make_tape
from hiddenorders.signing import classify, sign_tape, sign_trades, signed_trades_frame, tick_direction
from hiddenorders.tape import Aggressor

FIXTURE = Path(__file__).parent / "data" / "lee_ready_50.csv"


def load_fixture():
    df = pd.read_csv(FIXTURE, dtype=str, keep_default_na=False)
    trades = df[df.kind == "T"]
    quotes = df[df.kind == "Q"]
    tape = make_tape(
        [(float(r.t), float(r.price), 100, "A", "B", r.aggressor) for r in trades.itertuples()],
        [(float(r.t), float(r.bid), float(r.ask)) for r in quotes.itertuples()],
    )
    return tape, trades.reset_index(drop=True)


def test_hand_labelled_fixture():
    tape, labels = load_fixture()
    signed = sign_trades(tape, "X")
    got = [s.initiator.code for s in signed]
    wrong = [(i, labels.branch[i], labels.expected[i], g) for i, g in enumerate(got) if g != labels.expected[i]]
    assert not wrong
    assert [s.inferred for s in signed] == list(labels.aggressor == "U")


def test_fixture_fallback_count():
    tape, labels = load_fixture()
    res = classify(tape["X"])
    assert res.n_unclassifiable == (labels.branch == "fallback").sum() == 2


@pytest.mark.parametrize("price,expected", [(100.5, Aggressor.BUYER), (99.5, Aggressor.SELLER)])
def test_quote_rule(price, expected):
    tape = make_tape([(5, price, 10, "A", "B", "U")], [(0, 99.0, 101.0)])
    s = sign_trades(tape, "X")[0]
    assert s.initiator == expected and s.inferred


def test_at_mid_tick_test():
    # prior prices (..., 99.5, 100) and a trade at mid 100 -> uptick buyer
    tape = make_tape([(1, 99.5, 10, "A", "B", "S"), (2, 100.0, 10, "A", "B", "S"), (3, 100.0, 10, "A", "B", "U")],
                     [(0, 99.0, 101.0)])
    assert sign_trades(tape, "X")[2].initiator == Aggressor.BUYER


def test_flag_passthrough():
    tape = make_tape([(1, 150.0, 10, "A", "B", "S")], [(0, 99.0, 101.0)])
    s = sign_trades(tape, "X")[0]
    assert s.initiator == Aggressor.SELLER and not s.inferred


def test_quote_delay():
    # the quote at t=10 moves the mid from 100 to 102; a 2 s delay uses the old one
    tape = make_tape([(11, 101.0, 10, "A", "B", "U")], [(0, 99.0, 101.0), (10, 101.0, 103.0)])
    assert classify(tape["X"]).initiator[0] == -1
    assert classify(tape["X"], lr_delay_ns=2 * SEC).initiator[0] == 1


def test_tick_direction_carries_last_change():
    p = np.array([5.0, 5.0, 6.0, 6.0, 6.0, 4.0, 4.0])
    assert tick_direction(p).tolist() == [0, 0, 1, 1, 1, -1, -1]


def test_signed_trades_frame():
    tape, _ = load_fixture()
    df = signed_trades_frame(tape, sign_tape(tape))
    assert list(df.columns[-2:]) == ["initiator", "inferred"]
    assert set(df.initiator) <= {"B", "S"}


trade_rows = st.lists(st.tuples(st.integers(90, 110), st.sampled_from("BSU")), min_size=1, max_size=40)
quote_rows = st.lists(st.tuples(st.integers(90, 110), st.integers(0, 6)), min_size=0, max_size=8)


def build(trades, quotes, reflect=None):
    """Integer prices keep the reflection p -> 2c - p exact."""
    flip = {"B": "S", "S": "B", "U": "U"}
    rows, qs = [], []
    for i, (p, a) in enumerate(trades):
        if reflect is not None:
            p, a = 2 * reflect - p, flip[a]
        rows.append((i + 1, float(p), 10, "A", "B", a))
    for j, (b, w) in enumerate(quotes):
        bid, ask = b, b + w
        if reflect is not None:
            bid, ask = 2 * reflect - ask, 2 * reflect - bid
        qs.append((3 * j + 0.5, float(bid), float(ask)))
    return make_tape(rows, qs)


@settings(max_examples=80, deadline=None)
@given(trades=trade_rows, quotes=quote_rows, c=st.integers(100, 200))
def test_mirror_symmetry(trades, quotes, c):
    a = classify(build(trades, quotes)["X"])
    b = classify(build(trades, quotes, reflect=c)["X"])
    assert np.array_equal(a.fallback, b.fallback)
    informative = ~a.fallback
    assert np.array_equal(a.initiator[informative], -b.initiator[informative])
    assert np.array_equal(a.inferred, b.inferred)


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_off_mid_never_uses_tick(data):
    n = data.draw(st.integers(1, 30))
    offs = data.draw(st.lists(st.sampled_from([-3, -2, -1, 1, 2, 3]), min_size=n, max_size=n))
    tape = make_tape([(i + 1, 100.0 + o, 10, "A", "B", "U") for i, o in enumerate(offs)], [(0, 99.0, 101.0)])
    res = classify(tape["X"])
    assert res.initiator.tolist() == [1 if o > 0 else -1 for o in offs]
    assert res.n_unclassifiable == 0


@settings(max_examples=30, deadline=None)
@given(trades=trade_rows, quotes=quote_rows)
def test_initiator_never_unknown_and_deterministic(trades, quotes):
    tape = build(trades, quotes)
    a, b = classify(tape["X"]), classify(tape["X"])
    assert set(a.initiator.tolist()) <= {-1, 1}
    assert np.array_equal(a.initiator, b.initiator)
    flagged = tape["X"].aggressor != 0
    assert np.array_equal(a.initiator[flagged], tape["X"].aggressor[flagged])
