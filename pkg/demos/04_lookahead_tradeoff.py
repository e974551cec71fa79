"""How the lookahead weight trades the current patient against the next.

At weight 0 the rule is the plain safety quantile.  As the weight grows, the
selected dose drifts toward values whose outcome will sharpen the posterior
for the patient who follows — the individual-vs-collective dial.
"""

import numpy as np

from dosefind import DoseSpace, History, Prior, build_grid_posterior
from dosefind.designs import ewoc_dose, lookahead_dose
from dosefind.losses import Ewoc as EwocLoss

space = DoseSpace(140.0, 425.0)
prior = Prior.uniform(space, 1 / 3)

print("fresh trial (flat prior): myopic quantile vs lookahead dose")
gp = build_grid_posterior(prior, History())
myopic = ewoc_dose(gp, 0.25)
print(f"  myopic dose = {myopic:.2f}")
for lam in (0.0, 0.1, 0.4, 1.0, 2.0):
    dose = lookahead_dose(gp, EwocLoss(0.25), lam)
    print(f"  weight {lam:4.1f} -> {dose:7.2f}  (shift {dose - myopic:+.2f})")

print("\nmid-trial posterior (5 observations):")
history = History.from_pairs([(211.25, 0), (262.0, 0), (305.0, 1), (281.0, 1), (255.0, 0)])
gp = build_grid_posterior(prior, history)
myopic = ewoc_dose(gp, 0.25)
print(f"  myopic dose = {myopic:.2f}")
for lam in (0.0, 0.1, 0.4, 1.0, 2.0):
    dose = lookahead_dose(gp, EwocLoss(0.25), lam)
    print(f"  weight {lam:4.1f} -> {dose:7.2f}  (shift {dose - myopic:+.2f})")

print("\nonce the posterior is nearly settled the lookahead term goes flat")
print("(long histories price candidates with a shared particle set, hence the rng):")
doses = np.linspace(180, 380, 300)
rng = np.random.default_rng(3)
from dosefind.model import NaturalParams, toxicity_prob

truth = NaturalParams(0.15, 290.0, 1 / 3)
ys = (rng.random(300) < toxicity_prob(doses, truth, space)).astype(int)
gp_sharp = build_grid_posterior(prior, History.from_pairs(zip(doses, (int(y) for y in ys))))
myopic = ewoc_dose(gp_sharp, 0.25)
for lam in (0.0, 0.4, 2.0):
    dose = lookahead_dose(
        gp_sharp, EwocLoss(0.25), lam, n_particles=20_000, rng=np.random.default_rng(9), n_grid=115
    )
    print(f"  weight {lam:4.1f} -> {dose:7.2f}  (myopic {myopic:.2f})")
