"""Posterior inference for the natural curve parameters given trial history.

Two interchangeable representations are provided:

* :class:`GridPosterior` — tensor-product Gauss-Legendre quadrature over the
  clipped (rho, eta) rectangle.  Deterministic, spectrally accurate for the
  smooth integrands that arise here, and cheap to update one observation at
  a time.
* :class:`WeightedSample` — self-normalized importance sampling from the
  uniform proposal over the same rectangle.  Used where a Monte Carlo route
  is wanted (large histories, independent cross-checks).

Both answer the same queries: mean and quantiles of the MTD, expected losses,
and the predictive toxicity probability at a dose.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .model import DoseSpace, NaturalParams, clipped_support, log_odds

DEFAULT_RESOLUTION = (128, 128)
MIN_RESOLUTION = 32
ESS_WARN_FRACTION = 0.01


class DegeneratePosteriorError(ArithmeticError):
    """All quadrature mass underflowed; the history is inconsistent with the support."""


class SampleDegeneracyWarning(UserWarning):
    """Importance weights collapsed onto very few particles."""


@dataclass(frozen=True)
class Prior:
    """Prior over (rho, eta) with support on [0, p] x [x_min, x_max].

    The default is the flat prior.  A custom (already normalized) density over
    the same rectangle may be supplied; it is evaluated pointwise on the
    clipped support.
    """

    space: DoseSpace
    p: float
    kind: str = "uniform"
    density_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"target rate p must be in (0, 1), got {self.p}")
        if self.kind not in ("uniform", "custom-density"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "custom-density" and self.density_fn is None:
            raise ValueError("custom-density prior requires density_fn")

    @classmethod
    def uniform(cls, space: DoseSpace, p: float) -> "Prior":
        return cls(space=space, p=p)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(rho_lo, rho_hi, eta_lo, eta_hi) of the clipped support."""
        return clipped_support(self.space, self.p)

    def log_density(self, rho, eta):
        rho = np.asarray(rho, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if self.kind == "uniform":
            rlo, rhi, elo, ehi = self.bounds
            val = -math.log((rhi - rlo) * (ehi - elo))
            return np.broadcast_to(val, np.broadcast_shapes(rho.shape, eta.shape)).copy()
        with np.errstate(divide="ignore"):
            return np.log(self.density_fn(rho, eta))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw (rho, eta) pairs from the prior restricted to the clipped support."""
        rlo, rhi, elo, ehi = self.bounds
        if self.kind == "uniform":
            return rng.uniform(rlo, rhi, n), rng.uniform(elo, ehi, n)
        # Rejection from the uniform envelope; the density bound is estimated
        # on a coarse grid and padded.
        rg = np.linspace(rlo, rhi, 101)
        eg = np.linspace(elo, ehi, 101)
        dmax = 1.5 * float(np.exp(self.log_density(rg[:, None], eg[None, :])).max())
        rhos = np.empty(n)
        etas = np.empty(n)
        got = 0
        while got < n:
            m = max(n - got, 1024)
            r = rng.uniform(rlo, rhi, m)
            e = rng.uniform(elo, ehi, m)
            keep = rng.uniform(0.0, dmax, m) < np.exp(self.log_density(r, e))
            k = min(int(keep.sum()), n - got)
            rhos[got : got + k] = r[keep][:k]
            etas[got : got + k] = e[keep][:k]
            got += k
        return rhos, etas


@dataclass(frozen=True)
class History:
    """Ordered dose/outcome pairs, outcome 1 = dose-limiting toxicity."""

    observations: tuple[tuple[float, int], ...] = ()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, int]]) -> "History":
        obs = []
        for dose, outcome in pairs:
            if outcome not in (0, 1):
                raise ValueError(f"outcome must be 0 or 1, got {outcome}")
            obs.append((float(dose), int(outcome)))
        return cls(tuple(obs))

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def doses(self) -> np.ndarray:
        return np.array([d for d, _ in self.observations], dtype=float)

    @property
    def outcomes(self) -> np.ndarray:
        return np.array([y for _, y in self.observations], dtype=int)

    def append(self, dose: float, outcome: int) -> "History":
        if outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {outcome}")
        return History(self.observations + ((float(dose), int(outcome)),))

    def validate_in(self, space: DoseSpace) -> None:
        for dose, _ in self.observations:
            if not space.contains(dose):
                raise ValueError(f"dose {dose} outside [{space.x_min}, {space.x_max}]")


def log_likelihood(history: History, nat: NaturalParams, space: DoseSpace) -> float:
    """Bernoulli log likelihood of the history under one curve."""
    if len(history) == 0:
        return 0.0
    z = log_odds(history.doses, nat.rho, nat.eta, nat.target_p, space.x_min)
    y = history.outcomes
    return float(np.sum(np.where(y == 1, log_expit(z), log_expit(-z))))


@lru_cache(maxsize=16)
def _gauss_legendre(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return mid + half * nodes, half * weights


def _loglik_on_mesh(
    history: History, rho: np.ndarray, eta: np.ndarray, space: DoseSpace, p: float
) -> np.ndarray:
    """Log likelihood at every (rho_i, eta_j) node; shape (len(rho), len(eta))."""
    out = np.zeros((rho.size, eta.size))
    if len(history) == 0:
        return out
    lr = (np.log1p(-rho) - np.log(rho))[:, None]  # log(1/rho - 1)
    lp = math.log1p(-p) - math.log(p)
    denom = (eta - space.x_min)[None, :]
    for dose, outcome in history.observations:
        z = ((dose - eta[None, :]) * lr - (dose - space.x_min) * lp) / denom
        out += log_expit(z) if outcome == 1 else log_expit(-z)
    return out


@dataclass(frozen=True)
class GridPosterior:
    """Quadrature representation of the (rho, eta) posterior.

    ``log_weights`` holds the unnormalized log posterior density at the tensor
    nodes; ``quadrature_weights`` the matching Gauss-Legendre tensor weights;
    ``norm_const`` the integral of the unnormalized density (so normalized
    node masses are ``quadrature_weights * exp(log_weights) / norm_const``).
    """

    rho_nodes: np.ndarray
    eta_nodes: np.ndarray
    log_weights: np.ndarray
    quadrature_weights: np.ndarray
    rho_quad_weights: np.ndarray
    eta_quad_weights: np.ndarray
    log_norm_const: float
    prior: Prior
    history: History

    @property
    def space(self) -> DoseSpace:
        return self.prior.space

    @property
    def p(self) -> float:
        return self.prior.p

    @property
    def norm_const(self) -> float:
        return math.exp(self.log_norm_const)

    @cached_property
    def node_masses(self) -> np.ndarray:
        """Normalized posterior mass attached to each node; sums to 1."""
        return self.quadrature_weights * np.exp(self.log_weights - self.log_norm_const)

    @cached_property
    def log_odds_rho(self) -> np.ndarray:
        """log(1/rho - 1) per rho node, the curve steepness ingredient."""
        return np.log1p(-self.rho_nodes) - np.log(self.rho_nodes)

    def tox_prob_at_nodes(self, x: float) -> np.ndarray:
        """Toxicity probability at dose x for every node curve; shape of mesh."""
        lp = math.log1p(-self.p) - math.log(self.p)
        z = (
            (x - self.eta_nodes[None, :]) * self.log_odds_rho[:, None]
            - (x - self.space.x_min) * lp
        ) / (self.eta_nodes[None, :] - self.space.x_min)
        return expit(z)

    def updated(self, dose: float, outcome: int) -> "GridPosterior":
        """Posterior after appending one observation (same grid, reweighted)."""
        if outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {outcome}")
        f = self.tox_prob_at_nodes(dose)
        with np.errstate(divide="ignore"):
            delta = np.log(f) if outcome == 1 else np.log1p(-f)
        lw = self.log_weights + delta
        return GridPosterior(
            rho_nodes=self.rho_nodes,
            eta_nodes=self.eta_nodes,
            log_weights=lw,
            quadrature_weights=self.quadrature_weights,
            rho_quad_weights=self.rho_quad_weights,
            eta_quad_weights=self.eta_quad_weights,
            log_norm_const=_normalize(lw, self.quadrature_weights),
            prior=self.prior,
            history=self.history.append(dose, outcome),
        )


def _normalize(log_weights: np.ndarray, quadrature_weights: np.ndarray) -> float:
    logz = float(logsumexp(log_weights + np.log(quadrature_weights)))
    if not math.isfinite(logz):
        raise DegeneratePosteriorError("posterior mass underflowed on the whole grid")
    return logz


def build_grid_posterior(
    prior: Prior,
    history: History,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
) -> GridPosterior:
    """Evaluate the posterior on a Gauss-Legendre tensor grid."""
    n_rho, n_eta = resolution
    if n_rho < MIN_RESOLUTION or n_eta < MIN_RESOLUTION:
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION} per axis")
    history.validate_in(prior.space)
    rlo, rhi, elo, ehi = prior.bounds
    rho, wr = _gauss_legendre(n_rho, rlo, rhi)
    eta, we = _gauss_legendre(n_eta, elo, ehi)
    qw = wr[:, None] * we[None, :]
    lw = prior.log_density(rho[:, None], eta[None, :]) + _loglik_on_mesh(
        history, rho, eta, prior.space, prior.p
    )
    return GridPosterior(
        rho_nodes=rho,
        eta_nodes=eta,
        log_weights=lw,
        quadrature_weights=qw,
        rho_quad_weights=wr,
        eta_quad_weights=we,
        log_norm_const=_normalize(lw, qw),
        prior=prior,
        history=history,
    )


# ---------------------------------------------------------------------------
# Marginal distribution of the MTD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EtaMarginal:
    """One-dimensional MTD marginal: density values at quadrature nodes.

    Between nodes the density is treated as piecewise linear (extended as
    constant to the support edges), which makes the CDF piecewise quadratic
    and lets quantiles be solved exactly.  For a flat posterior this
    reproduces uniform quantiles to machine precision.
    """

    nodes: np.ndarray
    density: np.ndarray  # normalized so that quadrature over nodes gives 1
    weights: np.ndarray  # Gauss-Legendre weights matching nodes
    lo: float
    hi: float

    @cached_property
    def _cdf_grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xs = np.concatenate(([self.lo], self.nodes, [self.hi]))
        fs = np.concatenate(([self.density[0]], self.density, [self.density[-1]]))
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs))))
        return xs, fs, cum

    def mean(self) -> float:
        return float(np.sum(self.weights * self.nodes * self.density))

    def sd(self) -> float:
        m = self.mean()
        var = float(np.sum(self.weights * self.density * (self.nodes - m) ** 2))
        return math.sqrt(max(var, 0.0))

    def cdf(self, x) -> np.ndarray | float:
        xs, fs, cum = self._cdf_grid
        total = cum[-1]
        xa = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        k = np.clip(np.searchsorted(xs, xa, side="right") - 1, 0, xs.size - 2)
        t = xa - xs[k]
        h = xs[k + 1] - xs[k]
        slope = np.where(h > 0, (fs[k + 1] - fs[k]) / np.where(h > 0, h, 1.0), 0.0)
        val = (cum[k] + fs[k] * t + 0.5 * slope * t * t) / total
        return float(val) if np.ndim(x) == 0 else val

    def quantile(self, w: float) -> float:
        if not 0.0 < w < 1.0:
            raise ValueError(f"quantile level must be in (0, 1), got {w}")
        return float(
            _quantile_from_density(self.density[None, :], self.nodes, self.lo, self.hi, w)[0]
        )

    def density_on(self, grid: np.ndarray) -> np.ndarray:
        """Piecewise-linear density evaluated on an arbitrary dose grid."""
        return np.interp(grid, self.nodes, self.density)


def _quantile_from_density(
    dens_rows: np.ndarray, nodes: np.ndarray, lo: float, hi: float, w: float
) -> np.ndarray:
    """Quantiles of piecewise-linear densities given by node values.

    ``dens_rows`` has one (possibly unnormalized) density per row; the
    density is extended as constant from the outer nodes to the support
    edges, making each CDF piecewise quadratic and exactly invertible.
    """
    d = np.atleast_2d(np.asarray(dens_rows, dtype=float))
    xs = np.concatenate(([lo], nodes, [hi]))
    fs = np.concatenate((d[:, :1], d, d[:, -1:]), axis=1)
    dx = np.diff(xs)
    seg = 0.5 * (fs[:, 1:] + fs[:, :-1]) * dx
    cum = np.concatenate((np.zeros((d.shape[0], 1)), np.cumsum(seg, axis=1)), axis=1)
    target = w * cum[:, -1]
    k = np.minimum((cum[:, 1:] < target[:, None]).sum(axis=1), dx.size - 1)
    rows = np.arange(d.shape[0])
    f0 = fs[rows, k]
    f1 = fs[rows, k + 1]
    need = target - cum[rows, k]
    h = dx[k]
    a = 0.5 * (f1 - f0) / h
    with np.errstate(invalid="ignore", divide="ignore"):
        t_quad = (-f0 + np.sqrt(np.maximum(f0 * f0 + 4.0 * a * need, 0.0))) / (2.0 * a)
        t_lin = np.where(f0 > 0, need / np.where(f0 > 0, f0, 1.0), 0.0)
    t = np.clip(np.where(np.abs(a) < 1e-300, t_lin, t_quad), 0.0, h)
    return xs[k] + t


def marginal_eta(gp: GridPosterior) -> EtaMarginal:
    """Integrate rho out of the grid posterior."""
    dens = np.exp(gp.log_weights - gp.log_norm_const)
    density = gp.rho_quad_weights @ dens
    return EtaMarginal(
        nodes=gp.eta_nodes,
        density=density,
        weights=gp.eta_quad_weights,
        lo=gp.prior.bounds[2],
        hi=gp.prior.bounds[3],
    )


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedSample:
    """Self-normalized importance-sampling representation of the posterior."""

    rho: np.ndarray
    eta: np.ndarray
    weights: np.ndarray
    ess: float
    space: DoseSpace
    p: float

    def __len__(self) -> int:
        return self.rho.size


def draw_importance_sample(
    prior: Prior, history: History, n_particles: int, rng: np.random.Generator
) -> WeightedSample:
    """Particles from the uniform proposal over the clipped support, weighted
    by prior density times likelihood (self-normalized)."""
    if n_particles < 1000:
        raise ValueError(f"need at least 1000 particles, got {n_particles}")
    history.validate_in(prior.space)
    rlo, rhi, elo, ehi = prior.bounds
    rho = rng.uniform(rlo, rhi, n_particles)
    eta = rng.uniform(elo, ehi, n_particles)
    logw = prior.log_density(rho, eta)  # proposal log-density is a constant: drop it
    if len(history) > 0:
        lr = np.log1p(-rho) - np.log(rho)
        lp = math.log1p(-prior.p) - math.log(prior.p)
        denom = eta - prior.space.x_min
        for dose, outcome in history.observations:
            z = ((dose - eta) * lr - (dose - prior.space.x_min) * lp) / denom
            logw += log_expit(z) if outcome == 1 else log_expit(-z)
    logw -= logsumexp(logw)
    w = np.exp(logw)
    ess = 1.0 / float(np.sum(w * w))
    if ess < ESS_WARN_FRACTION * n_particles:
        warnings.warn(
            f"effective sample size {ess:.1f} below 1% of {n_particles} particles",
            SampleDegeneracyWarning,
        )
    return WeightedSample(rho=rho, eta=eta, weights=w, ess=ess, space=prior.space, p=prior.p)


def weighted_quantile(values: np.ndarray, weights: np.ndarray, w: float) -> float:
    """Quantile of a weighted sample (midpoint CDF convention, interpolated)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    ww = weights[order]
    cdf = np.cumsum(ww) - 0.5 * ww
    cdf /= ww.sum()
    return float(np.interp(w, cdf, v))


def posterior_mean_eta(post: GridPosterior | WeightedSample) -> float:
    """Posterior mean of the MTD."""
    if isinstance(post, GridPosterior):
        return marginal_eta(post).mean()
    return float(np.sum(post.weights * post.eta))


def posterior_quantile_eta(post: GridPosterior | WeightedSample, w: float) -> float:
    """Posterior quantile of the MTD (smallest interpolated dose with CDF >= w)."""
    if isinstance(post, GridPosterior):
        return marginal_eta(post).quantile(w)
    return weighted_quantile(post.eta, post.weights, w)


def predictive_dlt_prob(post: GridPosterior | WeightedSample, x: float) -> float:
    """Posterior-predictive probability of a toxicity at dose x."""
    if isinstance(post, GridPosterior):
        return float(np.sum(post.node_masses * post.tox_prob_at_nodes(x)))
    z = log_odds(x, post.rho, post.eta, post.p, post.space.x_min)
    return float(np.sum(post.weights * expit(z)))


def expected_loss(post: GridPosterior | WeightedSample, spec, x: float) -> float:
    """Posterior expectation of a loss at candidate dose ``x``.

    Dose-scale losses integrate over the MTD marginal; probability-scale
    losses integrate the toxicity probability at ``x`` over the full joint.
    Design criteria are rejected (they need the running dose measure).
    """
    from .losses import DesignCriterion, Ewoc, Inverted, SquaredError, dose_scale_loss, prob_scale_loss

    if isinstance(spec, DesignCriterion):
        raise TypeError("design criteria need a dose measure; use designs instead")
    if isinstance(post, GridPosterior):
        if isinstance(spec, (SquaredError, Ewoc)):
            marg = marginal_eta(post)
            return float(np.sum(marg.weights * marg.density * dose_scale_loss(spec, marg.nodes, x)))
        assert isinstance(spec, Inverted)
        f = post.tox_prob_at_nodes(x)
        return float(np.sum(post.node_masses * prob_scale_loss(spec.weight, f, post.p)))
    if isinstance(spec, (SquaredError, Ewoc)):
        return float(np.sum(post.weights * dose_scale_loss(spec, post.eta, x)))
    assert isinstance(spec, Inverted)
    z = log_odds(x, post.rho, post.eta, post.p, post.space.x_min)
    return float(np.sum(post.weights * prob_scale_loss(spec.weight, expit(z), post.p)))
