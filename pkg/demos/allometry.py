"""Scaling between volume V, trade count N and duration T of detected orders.

    python demos/allometry.py
"""

from hiddenorders.impact import pca_exponents
from hiddenorders.segmentation import ActivityFilter, SegParams, detect_hidden_orders
from hiddenorders.signing import sign_tape
from hiddenorders.synth import SynthConfig, generate

market = generate(SynthConfig(n_stocks=4, n_sessions=100, n_orders=300, seed=5))
orders = detect_hidden_orders(market.tape, sign_tape(market.tape), SegParams(), ActivityFilter(50, 200))
fits = pca_exponents([o.signed_volume for o in orders], [o.n_trades for o in orders],
                     [o.T_seconds for o in orders], n_boot=500)
labels = {"g1": "N ~ V^g1", "g2": "T ~ V^g2", "g3": "N ~ T^g3"}
for k, f in fits.items():
    print(f"{labels[k]}: {f.g:.3f}  95% CI [{f.ci[0]:.3f}, {f.ci[1]:.3f}]  variance explained {f.variance_explained:.3f}")
