"""Detect hidden orders on a small synthetic market and score them.

    python demos/detect_synthetic.py [n_sessions]
"""

import sys

from hiddenorders.segmentation import ActivityFilter, SegParams, detect_hidden_orders, orders_frame
from hiddenorders.signing import sign_tape
from hiddenorders.synth import SynthConfig, generate, ground_truth_frame, score_detection

n_sessions = int(sys.argv[1]) if len(sys.argv) > 1 else 60

cfg = SynthConfig(n_stocks=3, n_sessions=n_sessions, n_orders=n_sessions, seed=1)
market = generate(cfg)
print(f"{market.tape.n_trades} trades, {len(market.truth)} embedded orders")

# fewer sessions than the default activity filter expects, so scale it down
signed = sign_tape(market.tape)
activity = ActivityFilter(min_sessions=n_sessions // 2, min_trades=100)
orders = detect_hidden_orders(market.tape, signed, SegParams(), activity)
score = score_detection(ground_truth_frame(market.truth), orders_frame(orders))
print(f"detected {len(orders)}: precision {score.precision:.3f}, recall {score.recall:.3f}, "
      f"mean boundary error {score.boundary_error:.1f} trades")
