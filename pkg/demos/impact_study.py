"""Impact against order size and the post-completion reversion, on true orders.

    python demos/impact_study.py [gamma] [beta]
"""

import sys

import numpy as np

from hiddenorders.impact import (fit_powerlaw, impact_path_profile, impact_vs_N, order_impacts,
                                 reversion_ratio)
from hiddenorders.synth import generate, impact_study_config, truth_as_hidden_orders
from hiddenorders.tape import yearly_relative_spreads

gamma = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
beta = float(sys.argv[2]) if len(sys.argv) > 2 else 0.7

market = generate(impact_study_config(impact_gamma=gamma, impact_beta=beta, seed=3))
tape = market.tape
spreads = {(s, y): v for s in tape.stocks for y, v in yearly_relative_spreads(tape, s).items()}
imps = [i for i in order_impacts(truth_as_hidden_orders(market.truth), tape, spreads) if i is not None]

curve = impact_vs_N([i.order.n_trades for i in imps], [i.R for i in imps])
fit = fit_powerlaw(curve)
print(f"{len(imps)} orders; R ~ N^gamma with gamma = {fit.gamma:.3f} (programmed {gamma})")
for x, y, se in zip(curve.center, curve.mean, curve.se):
    print(f"  N ~ {x:7.1f}   <R> = {y:6.2f} +- {se:.2f}")

profile, shape = impact_path_profile(np.array([i.path for i in imps]))
rev = reversion_ratio(profile, shape.gamma)
print(f"path exponent {shape.gamma:.3f} (programmed {beta}); "
      f"permanent/temporary {rev.ratio:.3f} vs 1/(1+beta) = {rev.predicted_ratio:.3f}")
