"""Dose-selection policies.

Every policy maps the current posterior (plus a little trial state) to the
next dose.  The myopic families are:

* ``Crm`` — posterior mean of the MTD;
* ``Ewoc`` — fixed feasibility-bound quantile of the MTD;
* ``EwocStar`` — quantile with the bound escalated linearly across the trial;
* ``Ivoc`` — grid minimizer of the expected probability-scale loss;
* ``ConstrainedOptimal`` — optimal-design criterion minimized under a
  chance constraint on overdosing.

``Lookahead`` perturbs a myopic rule by adding ``future_weight`` times the
expected myopic loss of the next patient, computed under the posterior
updated with each possible outcome of the candidate dose.

Coherence (never escalate after a toxicity, never de-escalate after a
non-toxicity) can be enforced for any policy by restricting the argmin to
the allowed side of the previous dose.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .losses import (
    DesignCriterion,
    DesignMeasure,
    Ewoc as EwocLoss,
    Inverted,
    LossSpec,
    SingularInformationError,
    SquaredError,
    dose_scale_loss,
    mtd_gradient,
    prob_scale_loss,
)
from .model import DoseSpace, NaturalParams, log_odds, to_canonical
from .posterior import (
    GridPosterior,
    WeightedSample,
    _gauss_legendre,
    _quantile_from_density,
    draw_importance_sample,
    posterior_mean_eta,
    posterior_quantile_eta,
    weighted_quantile,
)

DEFAULT_GRID_POINTS = 571  # 0.5-unit steps on the reference [140, 425] space
GRID_SWITCH_HISTORY = 30  # above this, lookahead falls back to particle updates


class InfeasibleConstraintError(RuntimeError):
    """No dose satisfies the overdose chance constraint."""


# ---------------------------------------------------------------------------
# Policy variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Crm:
    """Dose at the posterior mean of the MTD."""


@dataclass(frozen=True)
class Ewoc:
    """Dose at a fixed feasibility-bound quantile of the MTD."""

    feasibility_bound: float

    def __post_init__(self) -> None:
        if not 0.0 < self.feasibility_bound < 0.5:
            raise ValueError(
                f"feasibility bound must satisfy 0 < w < 1/2, got {self.feasibility_bound}"
            )


@dataclass(frozen=True)
class EwocStar:
    """Quantile dosing with the bound escalated linearly patient by patient."""

    start_bound: float
    end_bound: float
    n_patients: int

    def __post_init__(self) -> None:
        if not 0.0 < self.start_bound < 0.5:
            raise ValueError(f"start bound must be in (0, 1/2), got {self.start_bound}")
        if not self.start_bound <= self.end_bound <= 0.5:
            raise ValueError(f"end bound must be in [start, 1/2], got {self.end_bound}")
        if self.n_patients < 2:
            raise ValueError("escalating schedule needs at least 2 patients")


@dataclass(frozen=True)
class Ivoc:
    """Minimize expected probability-scale loss over the dose grid."""

    weight: float

    def __post_init__(self) -> None:
        if not 0.0 < self.weight < 0.5:
            raise ValueError(f"weight must be in (0, 1/2), got {self.weight}")


@dataclass(frozen=True)
class ConstrainedOptimal:
    """Optimal-design dosing under a chance constraint on overdosing.

    Minimizes the expected criterion of the augmented dose measure subject to
    the posterior probability of the dose exceeding the ``q``-target dose
    staying below ``feasibility_bound``.  Needs an initial sample spanning
    two distinct doses before the information matrix is nonsingular.
    """

    criterion: DesignCriterion = field(default_factory=DesignCriterion)
    q: float | None = None  # None means the target rate itself
    feasibility_bound: float = 0.25
    initial_count: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.feasibility_bound < 1.0:
            raise ValueError("feasibility bound must be in (0, 1)")


@dataclass(frozen=True)
class Lookahead:
    """Myopic rule plus a weighted one-patient-ahead term."""

    base_loss: LossSpec
    future_weight: float
    n_particles: int = 20_000
    grid_points: int = DEFAULT_GRID_POINTS
    refine: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.base_loss, DesignCriterion):
            raise ValueError("lookahead base loss must be a patient-level loss")
        if self.future_weight < 0.0:
            raise ValueError(f"future weight must be >= 0, got {self.future_weight}")
        if self.n_particles < 1000:
            raise ValueError("lookahead needs at least 1000 particles")


Variant = Crm | Ewoc | EwocStar | Ivoc | ConstrainedOptimal | Lookahead


@dataclass(frozen=True)
class DesignPolicy:
    """A dose-selection rule, optionally projected onto coherent moves."""

    variant: Variant
    enforce_coherence: bool = False


@dataclass(frozen=True)
class DesignState:
    """What a policy may look at besides the posterior."""

    patient_index: int  # 1-based index of the patient about to be dosed
    last_dose: float | None = None
    last_outcome: int | None = None
    xi: DesignMeasure = field(default_factory=DesignMeasure.empty)

    @classmethod
    def initial(cls) -> "DesignState":
        return cls(patient_index=1)

    @classmethod
    def from_history(cls, history) -> "DesignState":
        n = len(history)
        if n == 0:
            return cls.initial()
        last_dose, last_outcome = history.observations[-1]
        return cls(
            patient_index=n + 1,
            last_dose=last_dose,
            last_outcome=last_outcome,
            xi=DesignMeasure.of(history.doses),
        )


# ---------------------------------------------------------------------------
# Myopic selectors
# ---------------------------------------------------------------------------


def _clamp(x: float, bounds: tuple[float, float] | None) -> float:
    if bounds is None:
        return x
    return min(max(x, bounds[0]), bounds[1])


def crm_dose(post, bounds: tuple[float, float] | None = None) -> float:
    """Posterior-mean dose; an interval restriction just clips (the expected
    squared error is convex in the dose)."""
    return _clamp(posterior_mean_eta(post), bounds)


def ewoc_dose(
    post, feasibility_bound: float, bounds: tuple[float, float] | None = None
) -> float:
    """Feasibility-quantile dose; clips under restriction (convex loss)."""
    return _clamp(posterior_quantile_eta(post, feasibility_bound), bounds)


def ewoc_star_bound(patient_index: int, policy: EwocStar) -> float:
    """Feasibility bound for the (1-based) patient under linear escalation."""
    if patient_index < 1:
        raise ValueError("patient index is 1-based")
    frac = min(patient_index - 1, policy.n_patients - 1) / (policy.n_patients - 1)
    return policy.start_bound + frac * (policy.end_bound - policy.start_bound)


def _candidate_grid(post, n_points: int, bounds: tuple[float, float] | None) -> np.ndarray:
    grid = post.space.grid(n_points)
    if bounds is not None:
        lo, hi = bounds
        inside = grid[(grid >= lo) & (grid <= hi)]
        grid = np.unique(np.concatenate((inside, [lo, hi])))
    return grid


def ivoc_dose(
    post,
    weight: float,
    bounds: tuple[float, float] | None = None,
    n_grid: int = DEFAULT_GRID_POINTS,
) -> float:
    """Grid argmin of the expected probability-scale loss, ties toward the
    smaller dose."""
    grid = _candidate_grid(post, n_grid, bounds)
    values = _expected_prob_loss_on_grid(post, weight, grid)
    return float(grid[int(np.argmin(values))])


def _expected_prob_loss_on_grid(post, weight: float, grid: np.ndarray) -> np.ndarray:
    if isinstance(post, GridPosterior):
        kit = _kernel_for(post, grid)
        if kit is not None:
            return kit.inv_loss(weight, post.p) @ post.node_masses.ravel()
        out = np.empty(grid.size)
        for k, x in enumerate(grid):
            f = post.tox_prob_at_nodes(float(x))
            out[k] = float(np.sum(post.node_masses * prob_scale_loss(weight, f, post.p)))
        return out
    out = np.empty(grid.size)
    for k, x in enumerate(grid):
        f = expit(log_odds(float(x), post.rho, post.eta, post.p, post.space.x_min))
        out[k] = float(np.sum(post.weights * prob_scale_loss(weight, f, post.p)))
    return out


# ---------------------------------------------------------------------------
# Shared dose/node kernel (cached per grid geometry)
# ---------------------------------------------------------------------------


class _DoseKernel:
    """Toxicity probabilities of every node curve at every candidate dose,
    precomputed once per grid geometry and reused across selections."""

    def __init__(self, x_min, x_max, p, n_rho, n_eta, n_grid):
        from .model import clipped_support

        space = DoseSpace(x_min, x_max)
        rlo, rhi, elo, ehi = clipped_support(space, p)
        self.rho_nodes, self.rho_w = _gauss_legendre(n_rho, rlo, rhi)
        self.eta_nodes, self.eta_w = _gauss_legendre(n_eta, elo, ehi)
        self.candidates = space.grid(n_grid)
        lr = np.log1p(-self.rho_nodes) - np.log(self.rho_nodes)
        lp = math.log1p(-p) - math.log(p)
        x = self.candidates[:, None, None]
        z = ((x - self.eta_nodes[None, None, :]) * lr[None, :, None] - (x - x_min) * lp) / (
            self.eta_nodes[None, None, :] - x_min
        )
        f = expit(z)  # (C, R, E)
        # layout (E, C, R) with rho quadrature weights folded in, for batched
        # matmul against posterior density columns
        self._a = np.ascontiguousarray(np.transpose(f, (2, 0, 1)) * self.rho_w[None, None, :])
        self._f_flat: np.ndarray | None = None
        self._inv_losses: dict[tuple[float, float], np.ndarray] = {}

    def tox_flat(self) -> np.ndarray:
        """(C, n_rho * n_eta) toxicity probabilities."""
        if self._f_flat is None:
            f = np.transpose(self._a / self.rho_w[None, None, :], (1, 2, 0))
            self._f_flat = np.ascontiguousarray(f.reshape(f.shape[0], -1))
        return self._f_flat

    def updated_marginals(self, dens: np.ndarray) -> np.ndarray:
        """Unnormalized marginal MTD densities after observing a toxicity at
        each candidate dose; shape (C, n_eta)."""
        out = np.matmul(self._a, dens.T[:, :, None])[:, :, 0]  # (E, C)
        return np.ascontiguousarray(out.T)

    def inv_loss(self, weight: float, p: float) -> np.ndarray:
        """Probability-scale loss at every (candidate, node); (C, R*E)."""
        key = (weight, p)
        if key not in self._inv_losses:
            self._inv_losses[key] = prob_scale_loss(weight, self.tox_flat(), p)
        return self._inv_losses[key]


@lru_cache(maxsize=4)
def _kernel_cache(x_min, x_max, p, n_rho, n_eta, n_grid) -> _DoseKernel:
    return _DoseKernel(x_min, x_max, p, n_rho, n_eta, n_grid)


def _kernel_for(gp: GridPosterior, grid: np.ndarray) -> _DoseKernel | None:
    """Cached kernel when the candidate grid is the standard equispaced grid
    of this dose space; None for restricted or unusual grids."""
    space = gp.space
    std = space.grid(grid.size)
    if grid.shape != std.shape or not np.array_equal(grid, std):
        return None
    return _kernel_cache(
        space.x_min, space.x_max, gp.p, gp.rho_nodes.size, gp.eta_nodes.size, grid.size
    )


# ---------------------------------------------------------------------------
# Constrained optimal design
# ---------------------------------------------------------------------------


def _target_dose_nodes(gp: GridPosterior, q: float) -> np.ndarray:
    """Dose at which each node curve reaches toxicity probability q."""
    lr = gp.log_odds_rho[:, None]
    lp = math.log1p(-gp.p) - math.log(gp.p)
    lq = math.log1p(-q) - math.log(q)
    eta = gp.eta_nodes[None, :]
    x_min = gp.space.x_min
    return (eta * lr - x_min * lp - lq * (eta - x_min)) / (lr - lp)


def constrained_optimal_dose(
    post: GridPosterior,
    xi: DesignMeasure,
    crit: DesignCriterion,
    q: float | None,
    feasibility_bound: float,
    bounds: tuple[float, float] | None = None,
    n_grid: int = DEFAULT_GRID_POINTS,
) -> float:
    """Minimize the expected augmented-design criterion over the doses
    satisfying the overdose chance constraint."""
    if len({round(d, 12) for d in xi.support_doses}) < 2:
        raise SingularInformationError(
            "constrained optimal design needs an initial sample spanning two distinct doses"
        )
    space = post.space
    q = post.p if q is None else q
    if q < post.p:
        raise ValueError(f"constraint target q={q} must be >= the target rate {post.p}")
    if q == post.p:
        feasible_hi = posterior_quantile_eta(post, feasibility_bound)
    else:
        tdose = _target_dose_nodes(post, q)
        feasible_hi = weighted_quantile(
            tdose.ravel(), post.node_masses.ravel(), feasibility_bound
        )
    if feasible_hi < space.x_min:
        raise InfeasibleConstraintError("no dose satisfies the overdose constraint")
    feasible_hi = min(feasible_hi, space.x_max)
    lo = space.x_min if bounds is None else bounds[0]
    hi = min(space.x_max if bounds is None else bounds[1], feasible_hi)
    if hi < lo:
        # coherence restriction conflicts with the chance constraint; stay on
        # the coherent side, as close to feasible as allowed
        return lo
    grid = _candidate_grid(post, n_grid, (lo, hi))
    values = _expected_design_loss(post, xi, crit, grid)
    return float(grid[int(np.argmin(values))])


def _expected_design_loss(
    post: GridPosterior, xi: DesignMeasure, crit: DesignCriterion, grid: np.ndarray
) -> np.ndarray:
    """Posterior expectation of the augmented-measure criterion per dose."""
    lr = post.log_odds_rho[:, None]
    lp = math.log1p(-post.p) - math.log(post.p)
    eta = post.eta_nodes[None, :]
    x_min = post.space.x_min
    denom = eta - x_min
    alpha = ((x_min * lp - eta * lr) / denom).ravel()
    beta = ((lr - lp) / denom).ravel()
    masses = post.node_masses.ravel()

    k = xi.count
    m11 = np.zeros_like(alpha)
    m12 = np.zeros_like(alpha)
    m22 = np.zeros_like(alpha)
    for dose in xi.support_doses:
        f = expit(alpha + beta * dose)
        w = f * (1.0 - f)
        m11 += w
        m12 += w * dose
        m22 += w * dose * dose
    m11 /= k
    m12 /= k
    m22 /= k

    c1 = c2 = 0.0
    if crit.kind == "c":
        c1, c2 = crit.c_vector if crit.c_vector is not None else _default_c_vector(post)

    out = np.empty(grid.size)
    for i, x in enumerate(grid):
        f = expit(alpha + beta * x)
        w = f * (1.0 - f)
        a = (k * m11 + w) / (k + 1)
        b = (k * m12 + w * x) / (k + 1)
        d = (k * m22 + w * x * x) / (k + 1)
        det = np.maximum(a * d - b * b, 1e-300)
        with np.errstate(divide="ignore", over="ignore"):
            if crit.kind == "D":
                vals = -np.log(det)
            else:
                vals = (c1 * c1 * d - 2.0 * c1 * c2 * b + c2 * c2 * a) / det
        out[i] = float(np.sum(masses * vals))
    return out


def _default_c_vector(post: GridPosterior) -> tuple[float, float]:
    """MTD gradient at the posterior-mean curve."""
    mean_rho = float(np.sum(post.node_masses * post.rho_nodes[:, None]))
    mean_eta = posterior_mean_eta(post)
    nat = NaturalParams(
        rho=min(max(mean_rho, 1e-9), post.p - 1e-9),
        eta=max(mean_eta, post.space.eta_floor),
        target_p=post.p,
    )
    return mtd_gradient(to_canonical(nat, post.space), post.p)


# ---------------------------------------------------------------------------
# One-step lookahead
# ---------------------------------------------------------------------------


def _myopic_dose_for(
    post, spec: LossSpec, bounds=None, n_grid: int = DEFAULT_GRID_POINTS
) -> float:
    if isinstance(spec, SquaredError):
        return crm_dose(post, bounds)
    if isinstance(spec, EwocLoss):
        return ewoc_dose(post, spec.feasibility_bound, bounds)
    if isinstance(spec, Inverted):
        return ivoc_dose(post, spec.weight, bounds, n_grid)
    raise TypeError(f"no myopic rule for {type(spec).__name__}")


def lookahead_dose(
    post,
    base_loss: LossSpec,
    future_weight: float,
    n_particles: int = 20_000,
    rng: np.random.Generator | None = None,
    bounds: tuple[float, float] | None = None,
    n_grid: int = DEFAULT_GRID_POINTS,
    refine: bool = True,
) -> float:
    """Dose minimizing the myopic expected loss plus ``future_weight`` times
    the expected myopic loss of the following patient.

    The future term averages, over the two possible outcomes at the candidate
    dose (weighted by their posterior-predictive probabilities), the expected
    loss of dosing the next patient myopically under the correspondingly
    updated posterior.  With a grid posterior every expectation is quadrature
    and the selection is deterministic; with a weighted sample (or a history
    too long for the grid) one shared particle set prices all candidates, so
    the objective is a fixed function of the candidate per draw.

    ``future_weight = 0`` collapses to the myopic rule exactly.
    """
    if future_weight == 0.0:
        return _myopic_dose_for(post, base_loss, bounds, n_grid)
    grid = _candidate_grid(post, n_grid, bounds)
    if isinstance(post, GridPosterior) and len(post.history) <= GRID_SWITCH_HISTORY:
        values, value_at = _lookahead_values_grid(post, base_loss, future_weight, grid, n_grid)
    else:
        ws = post if isinstance(post, WeightedSample) else _sample_from(post, n_particles, rng)
        values, value_at = _lookahead_values_sample(ws, base_loss, future_weight, grid)
    best = int(np.argmin(values))
    dose = float(grid[best])
    if not refine or grid.size < 3:
        return dose
    lo, hi = float(grid[max(best - 1, 0)]), float(grid[min(best + 1, grid.size - 1)])
    if hi - lo < 1e-9:
        return dose
    res = minimize_scalar(value_at, bounds=(lo, hi), method="bounded", options={"xatol": 5e-3})
    if res.success and res.fun < values[best]:
        return float(res.x)
    return dose


def _sample_from(gp: GridPosterior, n_particles: int, rng) -> WeightedSample:
    if rng is None:
        raise ValueError("particle-based lookahead needs an rng")
    return draw_importance_sample(gp.prior, gp.history, n_particles, rng)


def _lookahead_values_grid(gp: GridPosterior, spec, lam, grid, n_grid):
    """Quadrature lookahead objective on all candidate doses, plus a scalar
    evaluator for refinement."""
    dens = np.exp(gp.log_weights - gp.log_norm_const)  # (R, E)
    eta = gp.eta_nodes
    eta_w = gp.eta_quad_weights
    lo, hi = gp.prior.bounds[2], gp.prior.bounds[3]
    marg_dens = gp.rho_quad_weights @ dens  # (E,)
    marg_mass = eta_w * marg_dens

    if isinstance(spec, Inverted):
        return _lookahead_values_grid_probscale(gp, spec, lam, grid, n_grid, dens)

    def branch_sum(margs: np.ndarray) -> np.ndarray:
        """Future loss contribution of one outcome branch; rows are already
        scaled by the branch's predictive probability."""
        xprime = _inner_doses(margs, spec, eta, eta_w, lo, hi)
        hmat = dose_scale_loss(spec, eta[None, :], xprime[:, None])
        return np.sum(margs * eta_w[None, :] * hmat, axis=1)

    kit = _kernel_for(gp, grid)
    if kit is not None:
        marg_tox = kit.updated_marginals(dens)
    else:
        marg_tox = np.empty((grid.size, eta.size))
        for i, x in enumerate(grid):
            marg_tox[i] = gp.rho_quad_weights @ (dens * gp.tox_prob_at_nodes(float(x)))
    marg_safe = marg_dens[None, :] - marg_tox

    myop = dose_scale_loss(spec, eta[None, :], grid[:, None]) @ marg_mass
    values = myop + lam * (branch_sum(marg_safe) + branch_sum(marg_tox))

    def value_at(x: float) -> float:
        x = float(x)
        fx = gp.tox_prob_at_nodes(x)
        mt = (gp.rho_quad_weights @ (dens * fx))[None, :]
        ms = marg_dens[None, :] - mt
        myo = float(dose_scale_loss(spec, eta, x) @ marg_mass)
        return myo + lam * float(branch_sum(ms)[0] + branch_sum(mt)[0])

    return values, value_at


def _inner_doses(margs, spec, eta_nodes, eta_w, lo, hi) -> np.ndarray:
    """Myopic dose of each updated posterior, one per marginal-density row."""
    if isinstance(spec, SquaredError):
        mass = margs * eta_w[None, :]
        return (mass @ eta_nodes) / np.maximum(mass.sum(axis=1), 1e-300)
    return _quantile_from_density(margs, eta_nodes, lo, hi, spec.feasibility_bound)


def _lookahead_values_grid_probscale(gp, spec: Inverted, lam, grid, n_grid, dens):
    """Probability-scale base loss: the inner rule needs the joint updated
    posterior, so candidates are priced one at a time (heavier)."""
    kit = _kernel_for(gp, gp.space.grid(n_grid))
    inner_grid = gp.space.grid(n_grid)
    qw = gp.quadrature_weights
    masses = gp.node_masses

    def value_at(x: float) -> float:
        x = float(x)
        fx = gp.tox_prob_at_nodes(x)
        myo = float(np.sum(masses * prob_scale_loss(spec.weight, fx, gp.p)))
        fut = 0.0
        for branch_f in (1.0 - fx, fx):
            branch_mass = masses * branch_f  # unnormalized; total = branch prob
            total = float(branch_mass.sum())
            if total <= 1e-300:
                continue
            if kit is not None:
                vals = kit.inv_loss(spec.weight, gp.p) @ (branch_mass.ravel() / total)
            else:
                vals = np.empty(inner_grid.size)
                for k2, x2 in enumerate(inner_grid):
                    f2 = gp.tox_prob_at_nodes(float(x2))
                    vals[k2] = float(
                        np.sum(branch_mass / total * prob_scale_loss(spec.weight, f2, gp.p))
                    )
            x_inner = float(inner_grid[int(np.argmin(vals))])
            f_inner = gp.tox_prob_at_nodes(x_inner)
            fut += float(np.sum(branch_mass * prob_scale_loss(spec.weight, f_inner, gp.p)))
        return myo + lam * fut

    values = np.array([value_at(float(x)) for x in grid])
    return values, value_at


def _lookahead_values_sample(ws: WeightedSample, spec, lam, grid):
    """Particle-set lookahead objective (one shared set for all candidates)."""
    order = np.argsort(ws.eta, kind="stable")
    eta_sorted = ws.eta[order]
    lr = np.log1p(-ws.rho) - np.log(ws.rho)
    lp = math.log1p(-ws.p) - math.log(ws.p)
    denom = ws.eta - ws.space.x_min
    inner_grid = ws.space.grid(115)
    f_cache: dict[float, np.ndarray] = {}

    def tox_at(x: float) -> np.ndarray:
        if x not in f_cache:
            z = ((x - ws.eta) * lr - (x - ws.space.x_min) * lp) / denom
            f_cache[x] = expit(z)
        return f_cache[x]

    def inner_dose(w_branch: np.ndarray) -> float:
        total = w_branch.sum()
        if total <= 0:
            return float(ws.space.x_min)
        if isinstance(spec, SquaredError):
            return float(np.sum(w_branch * ws.eta) / total)
        if isinstance(spec, EwocLoss):
            wb = w_branch[order]
            cdf = (np.cumsum(wb) - 0.5 * wb) / total
            return float(np.interp(spec.feasibility_bound, cdf, eta_sorted))
        vals = np.array(
            [
                float(np.sum(w_branch * prob_scale_loss(spec.weight, tox_at(float(x2)), ws.p)))
                for x2 in inner_grid
            ]
        )
        return float(inner_grid[int(np.argmin(vals))])

    def branch_loss(w_branch: np.ndarray) -> float:
        if w_branch.sum() <= 0:
            return 0.0
        xp = inner_dose(w_branch)
        if isinstance(spec, (SquaredError, EwocLoss)):
            return float(np.sum(w_branch * dose_scale_loss(spec, ws.eta, xp)))
        return float(np.sum(w_branch * prob_scale_loss(spec.weight, tox_at(xp), ws.p)))

    def value_at(x: float) -> float:
        x = float(x)
        f = tox_at(x)
        if isinstance(spec, (SquaredError, EwocLoss)):
            myo = float(np.sum(ws.weights * dose_scale_loss(spec, ws.eta, x)))
        else:
            myo = float(np.sum(ws.weights * prob_scale_loss(spec.weight, f, ws.p)))
        w1 = ws.weights * f
        w0 = ws.weights - w1
        return myo + lam * (branch_loss(w0) + branch_loss(w1))

    values = np.array([value_at(float(x)) for x in grid])
    return values, value_at


# ---------------------------------------------------------------------------
# Coherence and dispatch
# ---------------------------------------------------------------------------


def coherence_bounds(
    space: DoseSpace, last_dose: float | None, last_outcome: int | None
) -> tuple[float, float]:
    """Interval of doses that keep the next move coherent."""
    if last_dose is None or last_outcome is None:
        return (space.x_min, space.x_max)
    if last_outcome == 1:
        return (space.x_min, min(last_dose, space.x_max))
    return (max(last_dose, space.x_min), space.x_max)


def enforce_coherent(
    select, last_dose: float | None, last_outcome: int | None, space: DoseSpace
) -> float:
    """Run a selector restricted to the coherent side of the last move.

    ``select`` maps an ``(lo, hi)`` interval to the dose minimizing the
    policy's objective over it; with no previous observation the whole space
    is passed through.
    """
    return select(coherence_bounds(space, last_dose, last_outcome))


def next_dose(
    policy: DesignPolicy,
    post,
    state: DesignState | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Next recommended dose under a policy given the current posterior."""
    state = DesignState.initial() if state is None else state
    space = post.space
    bounds: tuple[float, float] | None = None
    if policy.enforce_coherence:
        bounds = coherence_bounds(space, state.last_dose, state.last_outcome)

    v = policy.variant
    if isinstance(v, Crm):
        return crm_dose(post, bounds)
    if isinstance(v, Ewoc):
        return ewoc_dose(post, v.feasibility_bound, bounds)
    if isinstance(v, EwocStar):
        w = min(ewoc_star_bound(state.patient_index, v), 0.5 - 1e-12)
        return ewoc_dose(post, w, bounds)
    if isinstance(v, Ivoc):
        return ivoc_dose(post, v.weight, bounds)
    if isinstance(v, ConstrainedOptimal):
        if state.patient_index <= v.initial_count:
            raise ValueError(
                f"constrained optimal design starts after {v.initial_count} initial patients"
            )
        try:
            return constrained_optimal_dose(
                post, state.xi, v.criterion, v.q, v.feasibility_bound, bounds
            )
        except InfeasibleConstraintError:
            warnings.warn("overdose constraint infeasible; recommending x_min")
            return space.x_min
    if isinstance(v, Lookahead):
        return lookahead_dose(
            post,
            v.base_loss,
            v.future_weight,
            v.n_particles,
            rng,
            bounds,
            v.grid_points,
            v.refine,
        )
    raise TypeError(f"unknown policy variant {type(v).__name__}")
