"""Train a fair encoder on synthetic data and read off its guarantees.

Targets t1..t3 are drawn with P(t1=1 | s) = p1 or p2.  When p1 == p2 the
sensitive bit can be removed at almost no cost.  With a gap, hiding s
means hiding t1 too; the small MMD tolerance of the synthetic profile
then loses out to reconstruction, and the guarantees say so.

Run: python demos/04_synthetic_training.py   (about a minute)
"""

from fairbound.bounds import guarantee_report, tradeoff_beta_lower_bound
from fairbound.core import InfeasibleCoefficients, base_rates
from fairbound.data import synth_correlated
from fairbound.learn import PROFILES, evaluate_representation, three_way_split, train_fair_encoder

for p1, p2 in [(0.5, 0.5), (0.7, 0.3)]:
    d = synth_correlated(30_000, p1, p2, seed=0)
    own, tr, te = three_way_split(d.n, seed=0)
    model = train_fair_encoder(d.subset(own), PROFILES["synthetic"])
    ev = evaluate_representation(model, d.subset(tr), d.subset(te))[0]
    rates = base_rates(d.subset(te), "t1")
    print(f"p1={p1} p2={p2}: alpha {ev.alpha_hat:.3f}, beta {ev.beta_hat:.3f} "
          f"(beta can be no lower than {tradeoff_beta_lower_bound(rates, ev.alpha_hat):.3f})")
    print("  measured sp {:.3f}, dopp {:.3f}, dpc {:.3f}".format(ev.metrics.sp, ev.metrics.dopp, ev.metrics.dpc))
    try:
        rep = guarantee_report(rates, ev.alpha_hat, ev.beta_hat)
        print("  guaranteed sp {:.3f}, dopp {:.3f}, dpc {:.3f}".format(*(rep.bounds[k] for k in ("sp", "dopp", "dpc"))))
    except InfeasibleCoefficients as err:  # estimates can fall just short of attainable
        print("  no guarantee:", err)
