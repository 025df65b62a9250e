"""Worst-case disparities implied by a representation's (alpha, beta).

An adversary's balanced accuracy BA at predicting the sensitive attribute
gives alpha = 2*BA - 1; a task classifier's BA gives beta = 2*(1 - BA).
Every downstream predictor built on the representation then has disparity
at most the guarantee below.

Run: python demos/02_guarantees.py
"""

from fairbound.bounds import NOTIONS, bound_curve, calibration_lower_bound, guarantee_report
from fairbound.core import BaseRates

rates = BaseRates(r=0.33, a=0.316, b=0.121)  # census income, women as group 1

print("adversary BA  task BA  " + "  ".join(f"{n:>5s}" for n in NOTIONS))
for adv, task in [(0.846, 0.811), (0.667, 0.648), (0.573, 0.681)]:
    rep = guarantee_report(rates, 2 * adv - 1, 2 * (1 - task))
    print(f"{adv:12.3f} {task:8.3f}  " + "  ".join(f"{rep.bounds[n]:5.3f}" for n in NOTIONS))
print(f"calibration floor for these rates: {calibration_lower_bound(rates):.4f}")

print()
print("DR guarantee along the diagonal alpha = beta = t:")
curve = bound_curve("dr", rates, [(t / 10, t / 10) for t in range(3, 11)])
for al, _, v in curve.rows():
    print(f"  t={al:.1f}  {v:.3f}")
