"""
Trained versus untrained
========================

Evaluate trained weights (S) and a freshly initialised network of the same
shape (U) on identical preset episodes and print the comparison table.
Run ``demo_03_train.py`` first, or pass a weights file as the argument.
"""

import sys

from highway_dqn import nn
from highway_dqn.evaluation import compare_standard_untrained, find_preset, format_table

path = sys.argv[1] if len(sys.argv) > 1 else "demo_weights.bin"
with open(path, "rb") as fh:
    trained = nn.deserialize_params(fh.read())

# a small slice of the suite keeps this quick; every density appears once
suite = [find_preset(name) for name in ("preset01/none", "preset04/regular", "preset06/dense")]
report = compare_standard_untrained(trained, trained.spec, suite, episodes_per_preset=10, seed=0)
print(format_table(report))

s, u = report.total("S"), report.total("U")
print(f"collision rate {s.collision_rate:.2f} vs {u.collision_rate:.2f}; "
      f"reward {s.mean_total_reward:.2f} vs {u.mean_total_reward:.2f}")
