"""Monte Carlo trial simulation and operating-characteristic metrics.

A study runs each policy through many simulated trials against either a
fixed true curve or a fresh draw from the prior per replication, then
summarizes cumulative patient-level losses, estimation error of the final
MTD estimate, toxicity/overdose rates, and the coherence violation rate.

Replication ``r`` of a study with seed ``s`` always consumes the random
streams keyed ``(s, r, ...)``, so results are identical for any worker
count and any subset ordering, and all policies in a study face the same
simulated truths and patient susceptibilities (common random numbers).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .designs import DesignPolicy, DesignState, next_dose
from .losses import DesignMeasure, Ewoc as EwocLoss, dose_scale_loss, prob_scale_loss
from .model import NaturalParams, toxicity_prob
from .posterior import GridPosterior, History, Prior, build_grid_posterior, posterior_mean_eta

DEFAULT_RESOLUTION = (128, 128)


@dataclass(frozen=True)
class BayesianDraw:
    """Redraw the true curve from the prior for every replication."""

    prior: Prior


@dataclass(frozen=True)
class FixedTruth:
    """One fixed true curve for all replications."""

    rho: float
    eta: float


@dataclass(frozen=True)
class ScenarioSpec:
    """What a study simulates: truth process, trial size, and scale."""

    name: str
    truth: BayesianDraw | FixedTruth
    n_patients: int
    replications: int
    p: float
    seed: int
    risk_underdose_weight: float = 0.25  # dose-scale loss weight for Risk 1
    risk_prob_weight: float = 0.25  # probability-scale loss weight for Risk 2

    def __post_init__(self) -> None:
        if self.n_patients < 1:
            raise ValueError("need at least one patient per trial")
        if self.replications < 1:
            raise ValueError("need at least one replication")


@dataclass(frozen=True)
class TrialResult:
    """One simulated trial, with everything the metrics need."""

    doses: np.ndarray
    outcomes: np.ndarray
    truth: NaturalParams
    eta_hat: float
    per_patient_loss_ewoc: np.ndarray
    per_patient_loss_inverted: np.ndarray
    coherence_flags: np.ndarray  # True where a transition violates coherence


@lru_cache(maxsize=8)
def _prior_grid(prior: Prior, resolution: tuple[int, int]) -> GridPosterior:
    return build_grid_posterior(prior, History(), resolution)


def simulate_trial(
    policy: DesignPolicy,
    truth: NaturalParams,
    prior: Prior,
    n_patients: int,
    rng: np.random.Generator,
    policy_rng: np.random.Generator | None = None,
    risk_underdose_weight: float = 0.25,
    risk_prob_weight: float = 0.25,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
) -> TrialResult:
    """Run one sequential trial: dose, observe, update, repeat.

    ``rng`` drives only the simulated patient outcomes; any randomness a
    policy itself needs comes from ``policy_rng`` so that outcome streams
    stay aligned across policies.
    """
    space = prior.space
    post = _prior_grid(prior, resolution)
    doses = np.empty(n_patients)
    outcomes = np.empty(n_patients, dtype=int)
    xi = DesignMeasure.empty()
    last_dose: float | None = None
    last_outcome: int | None = None
    for i in range(n_patients):
        state = DesignState(
            patient_index=i + 1, last_dose=last_dose, last_outcome=last_outcome, xi=xi
        )
        try:
            dose = next_dose(policy, post, state, policy_rng)
        except Exception as exc:
            raise RuntimeError(f"dose selection failed at patient {i + 1}: {exc}") from exc
        p_tox = toxicity_prob(dose, truth, space)
        y = int(rng.random() < p_tox)
        doses[i] = dose
        outcomes[i] = y
        post = post.updated(dose, y)
        xi = xi.add(dose)
        last_dose, last_outcome = dose, y

    eta_hat = posterior_mean_eta(post)
    f_true = toxicity_prob(doses, truth, space)
    loss_dose = dose_scale_loss(EwocLoss(risk_underdose_weight), truth.eta, doses)
    loss_prob = prob_scale_loss(risk_prob_weight, f_true, prior.p)
    viol = (outcomes[:-1] == 0) & (doses[1:] < doses[:-1]) | (
        (outcomes[:-1] == 1) & (doses[1:] > doses[:-1])
    )
    return TrialResult(
        doses=doses,
        outcomes=outcomes,
        truth=truth,
        eta_hat=eta_hat,
        per_patient_loss_ewoc=np.asarray(loss_dose, dtype=float),
        per_patient_loss_inverted=np.asarray(loss_prob, dtype=float),
        coherence_flags=viol,
    )


def risk1(result: TrialResult) -> float:
    """Cumulative dose-scale loss of the trial at the true curve."""
    return float(result.per_patient_loss_ewoc.sum())


def risk2(result: TrialResult) -> float:
    """Cumulative probability-scale loss of the trial at the true curve."""
    return float(result.per_patient_loss_inverted.sum())


def coherence_violation_rate(results: list[TrialResult]) -> float:
    """Fraction of patient transitions that escalate after a toxicity or
    de-escalate after a non-toxicity (strict dose moves only)."""
    if not results:
        return 0.0
    return float(
        np.mean([r.coherence_flags.mean() if r.coherence_flags.size else 0.0 for r in results])
    )


# ---------------------------------------------------------------------------
# Study-level aggregation
# ---------------------------------------------------------------------------


_METRICS = ("risk1", "risk2", "bias", "rmse", "dlt_rate", "od_rate", "od_star", "chv")


@dataclass(frozen=True)
class MetricsReport:
    """Point estimates and Monte Carlo standard errors for one policy."""

    risk1: tuple[float, float | None]
    risk2: tuple[float, float | None]
    bias: tuple[float, float | None]
    rmse: tuple[float, float | None]
    dlt_rate: tuple[float, float | None]
    od_rate: tuple[float, float | None]
    od_star: tuple[float, float | None]
    chv: tuple[float, float | None]
    replications: int

    def as_dict(self) -> dict[str, tuple[float, float | None]]:
        return {m: getattr(self, m) for m in _METRICS}


@dataclass(frozen=True)
class StudyReport:
    scenario: ScenarioSpec
    policies: tuple[str, ...]
    metrics: dict[str, MetricsReport]
    failures: tuple[tuple[str, int, str], ...] = ()
    # per-replication stat matrix (reps x 8, columns ordered as _METRICS with
    # squared error in place of rmse) per policy, kept on request so paired
    # policy comparisons can use common-random-number standard errors
    replication_stats: dict[str, np.ndarray] | None = None

    def rows(self) -> list[dict]:
        out = []
        for pol in self.policies:
            for m, (mean, se) in self.metrics[pol].as_dict().items():
                out.append(
                    {
                        "scenario": self.scenario.name,
                        "policy": pol,
                        "metric": m,
                        "mean": mean,
                        "se": se,
                    }
                )
        return out

    def table(self) -> str:
        """Human-readable table, policies as columns."""
        width = max(len(p) for p in self.policies) + 2
        header = "metric".ljust(10) + "".join(p.rjust(width + 14) for p in self.policies)
        lines = [f"scenario: {self.scenario.name}   replications: {self.scenario.replications}", header]
        for m in _METRICS:
            cells = []
            for pol in self.policies:
                mean, se = getattr(self.metrics[pol], m)
                se_txt = "--" if se is None else f"{se:.4g}"
                cells.append(f"{mean:.6g} ({se_txt})".rjust(width + 14))
            lines.append(m.ljust(10) + "".join(cells))
        return "\n".join(lines)


def _outcome_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, rep, 0))))


def _policy_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, rep, 1))))


def _scenario_prior(scenario: ScenarioSpec, prior: Prior | None) -> Prior:
    if isinstance(scenario.truth, BayesianDraw):
        return scenario.truth.prior
    if prior is None:
        raise ValueError("fixed-truth scenarios need the prior the designs will use")
    return prior


def _truth_for_rep(scenario: ScenarioSpec, prior: Prior, rng: np.random.Generator) -> NaturalParams:
    if isinstance(scenario.truth, BayesianDraw):
        rho, eta = scenario.truth.prior.sample(1, rng)
        return NaturalParams(rho=float(rho[0]), eta=float(eta[0]), target_p=scenario.p)
    return NaturalParams(
        rho=scenario.truth.rho, eta=scenario.truth.eta, target_p=scenario.p
    )


def _run_replication(
    policy: DesignPolicy,
    scenario: ScenarioSpec,
    prior: Prior,
    rep: int,
    resolution: tuple[int, int],
) -> tuple:
    rng = _outcome_rng(scenario.seed, rep)
    truth = _truth_for_rep(scenario, prior, rng)
    res = simulate_trial(
        policy,
        truth,
        prior,
        scenario.n_patients,
        rng,
        policy_rng=_policy_rng(scenario.seed, rep),
        risk_underdose_weight=scenario.risk_underdose_weight,
        risk_prob_weight=scenario.risk_prob_weight,
        resolution=resolution,
    )
    space = prior.space
    f_true = toxicity_prob(res.doses, truth, space)
    return (
        risk1(res),
        risk2(res),
        res.eta_hat - truth.eta,
        (res.eta_hat - truth.eta) ** 2,
        float(res.outcomes.mean()),
        float((res.doses > truth.eta).mean()),
        float(np.maximum(f_true - scenario.p, 0.0).mean()),
        float(res.coherence_flags.mean()) if res.coherence_flags.size else 0.0,
    )


def _replication_batch(args) -> list[tuple[int, tuple | None, str | None]]:
    policy, scenario, prior, reps, resolution = args
    out = []
    for rep in reps:
        try:
            out.append((rep, _run_replication(policy, scenario, prior, rep, resolution), None))
        except Exception as exc:  # recorded; study aborts only past the failure budget
            out.append((rep, None, f"{type(exc).__name__}: {exc}"))
    return out


def _mean_se(values: np.ndarray) -> tuple[float, float | None]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, None
    return mean, float(values.std(ddof=1) / math.sqrt(values.size))


def run_study(
    policies: list[tuple[str, DesignPolicy]],
    scenario: ScenarioSpec,
    prior: Prior | None = None,
    workers: int = 1,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    keep_replications: bool = False,
) -> StudyReport:
    """Simulate every policy through the scenario and tabulate the metrics.

    ``prior`` is the prior the designs update; for Bayesian-truth scenarios
    it defaults to the truth-generating prior.
    """
    prior = _scenario_prior(scenario, prior)
    names = tuple(name for name, _ in policies)
    if len(set(names)) != len(names):
        raise ValueError("policy names must be unique")
    metrics: dict[str, MetricsReport] = {}
    failures: list[tuple[str, int, str]] = []
    kept: dict[str, np.ndarray] = {}
    reps = list(range(scenario.replications))
    for name, policy in policies:
        rows: list[tuple | None] = [None] * scenario.replications
        if workers <= 1:
            batches = [_replication_batch((policy, scenario, prior, reps, resolution))]
        else:
            chunks = [reps[i::workers] for i in range(workers)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                batches = list(
                    pool.map(
                        _replication_batch,
                        [(policy, scenario, prior, c, resolution) for c in chunks if c],
                    )
                )
        for batch in batches:
            for rep, stats, err in batch:
                if err is not None:
                    failures.append((name, rep, err))
                else:
                    rows[rep] = stats
        ok = [r for r in rows if r is not None]
        n_fail = scenario.replications - len(ok)
        if n_fail > max(0.001 * scenario.replications, 0):
            raise RuntimeError(
                f"{n_fail} of {scenario.replications} replications failed for "
                f"policy {name}: {failures[:3]}"
            )
        arr = np.array(ok)
        if keep_replications:
            kept[name] = arr
        sqerr_mean, sqerr_se = _mean_se(arr[:, 3])
        rmse = math.sqrt(max(sqerr_mean, 0.0))
        rmse_se = None if sqerr_se is None else sqerr_se / (2.0 * rmse) if rmse > 0 else 0.0
        metrics[name] = MetricsReport(
            risk1=_mean_se(arr[:, 0]),
            risk2=_mean_se(arr[:, 1]),
            bias=_mean_se(arr[:, 2]),
            rmse=(rmse, rmse_se),
            dlt_rate=_mean_se(arr[:, 4]),
            od_rate=_mean_se(arr[:, 5]),
            od_star=_mean_se(arr[:, 6]),
            chv=_mean_se(arr[:, 7]),
            replications=len(ok),
        )
    return StudyReport(
        scenario=scenario,
        policies=names,
        metrics=metrics,
        failures=tuple(failures),
        replication_stats=kept if keep_replications else None,
    )


# Fixed truths used throughout the comparison study.
FREQ_TRUTHS = {
    "freq1": FixedTruth(rho=0.07, eta=403.9),
    "freq2": FixedTruth(rho=0.19, eta=269.1),
    "freq3": FixedTruth(rho=0.30, eta=226.7),
}
