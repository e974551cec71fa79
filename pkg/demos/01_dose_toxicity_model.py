"""The two-parameter logistic dose-toxicity curve and its two coordinate systems.

A curve can be described by (alpha, beta) — intercept and slope on the log-odds
scale — or by the clinically meaningful pair (rho, eta): the toxicity
probability at the lowest dose, and the MTD (the dose whose toxicity
probability equals the target rate p).
"""

import numpy as np

from dosefind import DoseSpace, NaturalParams, fisher_info, mtd, to_canonical, toxicity_prob

space = DoseSpace(140.0, 425.0)  # the 5-FU colon-cancer trial dose range, mg/m^2
p = 1 / 3  # acceptable proportion of dose-limiting toxicities

# A curve with 19% toxicity at the lowest dose and MTD at 269.1 mg/m^2
nat = NaturalParams(rho=0.19, eta=269.1, target_p=p)
cp = to_canonical(nat, space)
print(f"canonical coordinates: alpha={cp.alpha:.4f}, beta={cp.beta:.6f}")

# the anchor identities that define the reparameterization
print(f"F(x_min) = {toxicity_prob(space.x_min, cp):.4f}  (rho = {nat.rho})")
print(f"F(eta)   = {toxicity_prob(nat.eta, cp):.4f}  (target p = {p:.4f})")
print(f"recovered MTD = {mtd(cp, p):.1f}")

# the curve is strictly increasing in dose
doses = np.linspace(140, 425, 8)
print("\ndose -> toxicity probability")
for x, f in zip(doses, toxicity_prob(doses, cp)):
    print(f"  {x:6.1f} -> {f:.3f}")

# a single observation is most informative where the curve is steepest
print("\nper-dose information (determinant is zero: one dose never identifies two parameters)")
for x in (180.0, 269.1, 400.0):
    m = fisher_info(cp, x)
    print(f"  x={x:6.1f}  weight={m[0, 0]:.4f}  det={np.linalg.det(m):.2e}")

two_dose = 0.5 * (fisher_info(cp, 180.0) + fisher_info(cp, 360.0))
print(f"two distinct doses averaged: det = {np.linalg.det(two_dose):.4f} > 0")
