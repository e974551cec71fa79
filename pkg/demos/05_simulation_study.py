"""A desk-scale operating-characteristics study (the full-size configs live
in configs/).

Four designs run against the same simulated truths and patients (common
random numbers), then the metric table compares cumulative patient losses,
estimation error, and toxicity/overdose/coherence rates.

Takes a couple of minutes at 200 replications on one core.
"""

from dosefind import DoseSpace, Prior
from dosefind.designs import Crm, DesignPolicy, EwocStar, Ivoc, Lookahead
from dosefind.losses import Ewoc as EwocLoss
from dosefind.simulator import BayesianDraw, ScenarioSpec, run_study

space = DoseSpace(140.0, 425.0)
prior = Prior.uniform(space, 1 / 3)

scenario = ScenarioSpec(
    name="bayes-demo",
    truth=BayesianDraw(prior),  # fresh truth per replication
    n_patients=24,
    replications=200,
    p=1 / 3,
    seed=2026,
)

policies = [
    ("ewoc_star", DesignPolicy(EwocStar(0.25, 0.5, 24))),
    ("ivoc", DesignPolicy(Ivoc(0.25))),
    ("crm", DesignPolicy(Crm())),
    ("ewoc_plus", DesignPolicy(Lookahead(EwocLoss(0.25), 0.4))),
]

report = run_study(policies, scenario)
print(report.table())

print("\nmachine-readable rows (first 6):")
for row in report.rows()[:6]:
    print(f"  {row}")
