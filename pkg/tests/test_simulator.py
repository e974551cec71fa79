"""Tests for trial simulation and the metric suite."""

import math

import numpy as np
import pytest

from dosefind.designs import Crm, DesignPolicy, Ewoc, EwocStar, Lookahead
from dosefind.losses import Ewoc as EwocLoss
from dosefind.model import DoseSpace, NaturalParams
from dosefind.posterior import History, Prior
from dosefind.simulator import (
    BayesianDraw,
    FREQ_TRUTHS,
    FixedTruth,
    MetricsReport,
    ScenarioSpec,
    StudyReport,
    TrialResult,
    coherence_violation_rate,
    risk1,
    risk2,
    run_study,
    simulate_trial,
)

SPACE = DoseSpace(140.0, 425.0)
P = 1.0 / 3.0
PRIOR = Prior.uniform(SPACE, P)


def rng_of(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def make_result(doses, outcomes, truth=(0.15, 300.0)):
    doses = np.asarray(doses, dtype=float)
    outcomes = np.asarray(outcomes, dtype=int)
    viol = ((outcomes[:-1] == 0) & (doses[1:] < doses[:-1])) | (
        (outcomes[:-1] == 1) & (doses[1:] > doses[:-1])
    )
    nat = NaturalParams(truth[0], truth[1], P)
    from dosefind.losses import dose_scale_loss, prob_scale_loss
    from dosefind.model import toxicity_prob

    return TrialResult(
        doses=doses,
        outcomes=outcomes,
        truth=nat,
        eta_hat=280.0,
        per_patient_loss_ewoc=np.asarray(dose_scale_loss(EwocLoss(0.25), nat.eta, doses)),
        per_patient_loss_inverted=np.asarray(
            prob_scale_loss(0.25, toxicity_prob(doses, nat, SPACE), P)
        ),
        coherence_flags=viol,
    )


class TestSimulateTrial:
    def test_single_patient_ewoc(self):
        truth = NaturalParams(0.19, 269.1, P)
        res = simulate_trial(DesignPolicy(Ewoc(0.25)), truth, PRIOR, 1, rng_of(0))
        assert res.doses.shape == (1,)
        assert res.doses[0] == pytest.approx(211.25, abs=1e-3)
        assert res.outcomes[0] in (0, 1)
        assert res.coherence_flags.size == 0

    def test_no_toxicity_limit_doses_nondecreasing(self):
        # a curve that essentially never produces a toxicity: coherent
        # policies may only escalate
        truth = NaturalParams(1e-6, SPACE.x_max, P)
        for variant in (Crm(), Ewoc(0.25)):
            res = simulate_trial(DesignPolicy(variant), truth, PRIOR, 12, rng_of(1))
            assert res.outcomes.sum() == 0
            assert np.all(np.diff(res.doses) >= -1e-9)

    def test_bit_identical_reruns(self):
        truth = NaturalParams(0.19, 269.1, P)
        pol = DesignPolicy(EwocStar(0.25, 0.5, 8))
        a = simulate_trial(pol, truth, PRIOR, 8, rng_of(7), policy_rng=rng_of((7, 1)))
        b = simulate_trial(pol, truth, PRIOR, 8, rng_of(7), policy_rng=rng_of((7, 1)))
        assert np.array_equal(a.doses, b.doses)
        assert np.array_equal(a.outcomes, b.outcomes)
        assert a.eta_hat == b.eta_hat

    def test_error_carries_patient_index(self):
        truth = NaturalParams(0.19, 269.1, P)
        # lookahead beyond the grid-history switch without a policy rng fails
        pol = DesignPolicy(Lookahead(EwocLoss(0.25), 0.4))
        with pytest.raises(RuntimeError, match="patient 32"):
            simulate_trial(pol, truth, PRIOR, 40, rng_of(2), policy_rng=None)


class TestRiskMetrics:
    def test_all_doses_at_mtd_zero_risk(self):
        res = make_result([300.0] * 5, [0, 1, 0, 0, 1])
        assert risk1(res) == 0.0
        assert risk2(res) == pytest.approx(0.0, abs=1e-12)

    def test_single_overdose_arithmetic(self):
        res = make_result([340.0], [1])
        assert risk1(res) == pytest.approx(0.75 * 40)

    def test_against_per_term_oracle(self):
        rng = rng_of(3)
        doses = rng.uniform(150, 420, 24)
        res = make_result(doses, rng.integers(0, 2, 24))
        eta = res.truth.eta
        oracle1 = sum(
            0.25 * (eta - d) if d <= eta else 0.75 * (d - eta) for d in doses
        )
        assert risk1(res) == pytest.approx(oracle1, rel=1e-12)
        from dosefind.model import toxicity_prob

        oracle2 = sum(
            0.25 * (P - f) if f <= P else 0.75 * (f - P)
            for f in (toxicity_prob(d, res.truth, SPACE) for d in doses)
        )
        assert risk2(res) == pytest.approx(oracle2, rel=1e-12)


class TestCoherenceViolationRate:
    def test_hand_built_single_violation(self):
        # first transition violates (de-escalation after no toxicity), second
        # does not: rate 1/2 for this trial
        res = make_result([200.0, 180.0, 170.0], [0, 1, 0])
        assert coherence_violation_rate([res]) == 0.5

    def test_equal_doses_never_violate(self):
        res = make_result([200.0, 200.0, 200.0], [1, 0, 1])
        assert coherence_violation_rate([res]) == 0.0

    def test_crm_coherent_over_many_trials(self):
        results = []
        for rep in range(60):
            rng = rng_of((9, rep))
            rho, eta = PRIOR.sample(1, rng)
            truth = NaturalParams(float(rho[0]), float(eta[0]), P)
            results.append(simulate_trial(DesignPolicy(Crm()), truth, PRIOR, 8, rng))
        assert coherence_violation_rate(results) == 0.0


class TestRunStudy:
    SCEN = ScenarioSpec(
        name="mini", truth=FREQ_TRUTHS["freq2"], n_patients=6, replications=8, p=P, seed=99
    )

    def test_single_replication_no_se(self):
        sc = ScenarioSpec(
            name="one", truth=FixedTruth(0.19, 269.1), n_patients=4, replications=1, p=P, seed=5
        )
        rep = run_study([("ewoc", DesignPolicy(Ewoc(0.25)))], sc, prior=PRIOR)
        m = rep.metrics["ewoc"]
        assert m.risk1[1] is None
        assert m.replications == 1

    def test_same_seed_identical_reports(self):
        pols = [("crm", DesignPolicy(Crm())), ("ewoc", DesignPolicy(Ewoc(0.25)))]
        a = run_study(pols, self.SCEN, prior=PRIOR)
        b = run_study(pols, self.SCEN, prior=PRIOR)
        assert a.rows() == b.rows()
        assert a.table() == b.table()

    def test_worker_count_invariance(self):
        pols = [("ewoc", DesignPolicy(Ewoc(0.25)))]
        a = run_study(pols, self.SCEN, prior=PRIOR, workers=1)
        b = run_study(pols, self.SCEN, prior=PRIOR, workers=2)
        assert a.rows() == b.rows()

    def test_common_random_numbers_pair_policies(self):
        # replication streams are keyed by (seed, rep) alone, so the same
        # policy listed twice sees identical truths and outcomes, and any two
        # policies face the same simulated patients
        sc = ScenarioSpec(
            name="bayes", truth=BayesianDraw(PRIOR), n_patients=4, replications=5, p=P, seed=77
        )
        rep = run_study(
            [("ewoc_a", DesignPolicy(Ewoc(0.25))), ("ewoc_b", DesignPolicy(Ewoc(0.25)))],
            sc,
            keep_replications=True,
        )
        assert np.array_equal(rep.replication_stats["ewoc_a"], rep.replication_stats["ewoc_b"])

    def test_rmse_consistency(self):
        rep = run_study(
            [("ewoc", DesignPolicy(Ewoc(0.25)))],
            ScenarioSpec(
                name="bayes", truth=BayesianDraw(PRIOR), n_patients=6, replications=40, p=P, seed=13
            ),
            keep_replications=True,
        )
        m = rep.metrics["ewoc"]
        stats = rep.replication_stats["ewoc"]
        bias_mean = stats[:, 2].mean()
        var = stats[:, 2].var()
        assert m.rmse[0] ** 2 == pytest.approx(bias_mean**2 + var, rel=1e-10)

    def test_rows_structure(self):
        rep = run_study([("crm", DesignPolicy(Crm()))], self.SCEN, prior=PRIOR)
        rows = rep.rows()
        assert len(rows) == 8
        assert {r["metric"] for r in rows} == {
            "risk1", "risk2", "bias", "rmse", "dlt_rate", "od_rate", "od_star", "chv",
        }
        assert all(r["scenario"] == "mini" and r["policy"] == "crm" for r in rows)

    def test_duplicate_policy_names_rejected(self):
        with pytest.raises(ValueError):
            run_study(
                [("a", DesignPolicy(Crm())), ("a", DesignPolicy(Ewoc(0.25)))],
                self.SCEN,
                prior=PRIOR,
            )

    def test_fixed_truth_needs_prior(self):
        with pytest.raises(ValueError):
            run_study([("crm", DesignPolicy(Crm()))], self.SCEN)

    def test_failure_budget_aborts(self):
        # a lookahead policy past the grid switch with no rng fails every
        # replication, far beyond the 0.1% budget
        sc = ScenarioSpec(
            name="bad", truth=FixedTruth(0.19, 269.1), n_patients=35, replications=3, p=P, seed=3
        )

        class NoRngLookahead(DesignPolicy):
            pass

        bad = DesignPolicy(Lookahead(EwocLoss(0.25), 0.4))
        import dosefind.simulator as sim

        orig = sim._policy_rng
        sim._policy_rng = lambda seed, rep: None
        try:
            with pytest.raises(RuntimeError):
                run_study([("bad", bad)], sc, prior=PRIOR)
        finally:
            sim._policy_rng = orig
