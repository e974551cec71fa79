"""Posterior inference over (rho, eta) as trial data accumulate.

Starting from the flat prior on [0, p] x [x_min, x_max], each (dose, outcome)
pair reweights the quadrature grid; the MTD marginal is what the designs
consume.  A self-normalized importance sample gives an independent route to
the same expectations.
"""

import numpy as np

from dosefind import (
    DoseSpace,
    History,
    Prior,
    build_grid_posterior,
    draw_importance_sample,
    marginal_eta,
    posterior_mean_eta,
    posterior_quantile_eta,
    predictive_dlt_prob,
)

space = DoseSpace(140.0, 425.0)
prior = Prior.uniform(space, 1 / 3)

gp = build_grid_posterior(prior, History())
print("before any data (flat prior):")
print(f"  mean MTD      = {posterior_mean_eta(gp):.2f}")
print(f"  25% quantile  = {posterior_quantile_eta(gp, 0.25):.2f}")
print(f"  P(DLT at 211) = {predictive_dlt_prob(gp, 211.25):.3f}")

print("\nupdating one patient at a time:")
outcomes = [(211.25, 0), (262.0, 0), (305.0, 1), (281.0, 1), (255.0, 0)]
for dose, y in outcomes:
    gp = gp.updated(dose, y)
    marg = marginal_eta(gp)
    print(
        f"  after ({dose:6.2f}, y={y}): mean={marg.mean():7.2f} "
        f"sd={marg.sd():6.2f}  q25={marg.quantile(0.25):7.2f}"
    )

# cross-check the quadrature answers with importance sampling
rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
ws = draw_importance_sample(prior, History.from_pairs(outcomes), 100_000, rng)
print(f"\nimportance sample (B=100k, effective size {ws.ess:,.0f}):")
print(f"  mean MTD      = {posterior_mean_eta(ws):.2f}  (grid {posterior_mean_eta(gp):.2f})")
print(f"  25% quantile  = {posterior_quantile_eta(ws, 0.25):.2f}")

# the marginal density on a fixed dose grid (what the dashboard plots)
grid = space.grid(9)
dens = marginal_eta(gp).density_on(grid)
print("\nMTD marginal density on a coarse grid:")
for x, d in zip(grid, dens):
    print(f"  {x:6.1f}  {'#' * int(400 * d)}")
