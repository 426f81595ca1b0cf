import datetime as dt

import numpy as np
import pytest

from hiddenorders.tape import Aggressor, QuoteSnapshot, Tape, Trade, TradingCalendar

SEC = 1_000_000_000
DAY0 = 1_041_494_400 * SEC  # 2003-01-02 08:00 UTC


def calendar(n_sessions=3, seconds=1000):
    """Sessions of ``seconds`` each, one per calendar day from 2003-01-02."""
    rows = []
    for k in range(n_sessions):
        o = DAY0 + k * 86_400 * SEC
        rows.append(((dt.date(2003, 1, 2) + dt.timedelta(days=k)).isoformat(), o, o + seconds * SEC))
    return TradingCalendar.from_sessions(rows)


def make_tape(trades, quotes=(), cal=None, stock="X"):
    """Tape from tuples.

    ``trades``: (t_seconds, price, shares, buyer, seller, aggressor code);
    ``quotes``: (t_seconds, bid, ask).  Times are offsets from the first
    session open.
    """
    cal = cal if cal is not None else calendar()
    t0 = int(cal.open_ns[0])
    tr = [Trade(t0 + int(round(t * SEC)), stock, p, s, b, sl, Aggressor.from_code(a))
          for t, p, s, b, sl, a in trades]
    qs = [QuoteSnapshot(t0 + int(round(t * SEC)), stock, b, a) for t, b, a in quotes]
    return Tape.from_records(tr, qs, cal)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once at the end of the session
ACCEPTANCE = {}


def record_criterion(number, title, ok, detail=""):
    prev = ACCEPTANCE.get(number)
    if prev is not None:
        ok = ok and prev[1]
        detail = "; ".join(d for d in (prev[2], detail) if d)
    ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
