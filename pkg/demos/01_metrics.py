"""Group fairness metrics on a small scored predictor, and where MUC breaks.

Run: python demos/01_metrics.py
"""

import numpy as np

from fairbound.core import Predictions
from fairbound.data import synth_muc_counterexample
from fairbound.metrics import balanced_accuracy, fairness_report, muc, tvd_histogram

rng = np.random.default_rng(0)
n = 20_000
s = rng.integers(0, 2, n)
# group 1 has a lower positive rate, and the score leans on y plus a little on s
y = (rng.random(n) < np.where(s == 1, 0.2, 0.4)).astype(int)
score = np.clip(0.3 + 0.4 * y + 0.1 * s + rng.normal(0, 0.15, n), 0, 1)
preds = Predictions(s, y, score=score)

rep = fairness_report(preds)
print("balanced accuracy of the score:", round(balanced_accuracy(preds), 3))
for name, value in rep.notions().items():
    print(f"  {name:6s} {value:.3f}")
floor = 0.5 * abs(y[s == 0].mean() - y[s == 1].mean())
print(f"no predictor gets DPC/DNC/DC below half the base-rate gap: {floor:.3f}")

# Two groups whose codes look alike to a histogram, yet every occupied
# score bin is perfectly miscalibrated across the groups.
records, z = synth_muc_counterexample(100_000, 0.01, seed=0)
print()
print("counterexample: muc", muc(records).value,
      "| balanced accuracy", round(balanced_accuracy(records), 3),
      "| histogram tvd between groups", round(tvd_histogram(z[records.s == 0], z[records.s == 1]), 3))
