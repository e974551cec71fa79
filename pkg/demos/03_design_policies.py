"""Every dose-selection rule on the same posterior, and what coherence does.

The rules differ in which functional of the MTD posterior they chase: its
mean, a safety quantile, an escalating quantile, the probability-scale
minimizer, an optimal-design criterion, or a lookahead-corrected quantile.
"""

import numpy as np

from dosefind import DoseSpace, History, Prior, build_grid_posterior
from dosefind.designs import (
    ConstrainedOptimal,
    Crm,
    DesignPolicy,
    DesignState,
    Ewoc,
    EwocStar,
    Ivoc,
    Lookahead,
    next_dose,
)
from dosefind.losses import DesignCriterion, Ewoc as EwocLoss

space = DoseSpace(140.0, 425.0)
prior = Prior.uniform(space, 1 / 3)
history = History.from_pairs([(211.25, 0), (262.0, 0), (305.0, 1), (281.0, 1), (255.0, 0)])
gp = build_grid_posterior(prior, history)
state = DesignState.from_history(history)
rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(1)))

policies = [
    ("posterior mean (CRM)", DesignPolicy(Crm())),
    ("25% quantile (EWOC)", DesignPolicy(Ewoc(0.25))),
    ("escalating bound, patient 6 of 24", DesignPolicy(EwocStar(0.25, 0.5, 24))),
    ("probability-scale minimizer (IVOC)", DesignPolicy(Ivoc(0.25))),
    ("D-optimal under overdose constraint", DesignPolicy(ConstrainedOptimal(DesignCriterion("D"), q=0.4))),
    ("lookahead EWOC, weight 0.4", DesignPolicy(Lookahead(EwocLoss(0.25), 0.4))),
]
print(f"history: {list(history.observations)}\n")
print("next dose under each rule:")
for label, pol in policies:
    print(f"  {label:38s} -> {next_dose(pol, gp, state, rng):7.2f}")

# coherence: the last patient had no toxicity at 255, so a coherent rule may
# not go below 255; enforcement projects any rule onto that constraint
print("\nwith coherence enforced (last outcome y=0 at 255):")
for label, pol in policies[:4]:
    enforced = DesignPolicy(pol.variant, enforce_coherence=True)
    print(f"  {label:38s} -> {next_dose(enforced, gp, state, rng):7.2f}")
