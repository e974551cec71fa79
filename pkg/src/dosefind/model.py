"""Two-parameter logistic dose-toxicity model.

The curve is parameterized two ways:

* canonical ``(alpha, beta)``: toxicity probability at dose ``x`` is
  ``expit(alpha + beta * x)`` with ``beta > 0``;
* natural ``(rho, eta)``: ``rho`` is the toxicity probability at the lowest
  dose and ``eta`` is the MTD, the dose whose toxicity probability equals the
  target rate ``p``.

The natural coordinates are the ones priors are placed on; they are bounded
and directly interpretable.  The map between the two breaks down on the
boundary (``rho in {0, p}`` or ``eta = x_min``), so all inference clips the
natural support slightly inside the rectangle ``(0, p] x [x_min, x_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# Support clipping: keeps log(1/rho - 1) and 1/(eta - x_min) finite.
RHO_CLIP = 1e-6
ETA_CLIP_FRACTION = 1e-6


class SingularTransformError(ValueError):
    """The (rho, eta) -> (alpha, beta) map is undefined at these values."""


@dataclass(frozen=True)
class DoseSpace:
    """Closed dose interval [x_min, x_max]; units are whatever the trial uses."""

    x_min: float
    x_max: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ValueError("dose bounds must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min must be < x_max, got [{self.x_min}, {self.x_max}]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def eta_floor(self) -> float:
        """Smallest MTD value kept inside the clipped support."""
        return self.x_min + ETA_CLIP_FRACTION * self.width

    def contains(self, x: float) -> bool:
        return self.x_min <= x <= self.x_max

    def grid(self, n: int = 571) -> np.ndarray:
        """Equally spaced search grid over the interval (571 points = 0.5-unit
        steps on the reference [140, 425] space)."""
        return np.linspace(self.x_min, self.x_max, n)


@dataclass(frozen=True)
class CanonicalParams:
    """Intercept/slope of the logistic curve on the dose scale."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


@dataclass(frozen=True)
class NaturalParams:
    """Curve described by (toxicity at x_min, MTD) for a target rate.

    ``rho`` must lie in (0, target_p]; ``eta`` is a dose.  ``rho = target_p``
    is a valid point of the parameter space but is singular for conversion to
    canonical coordinates (it forces a flat curve).
    """

    rho: float
    eta: float
    target_p: float

    def __post_init__(self) -> None:
        if not 0.0 < self.target_p < 1.0:
            raise ValueError(f"target_p must be in (0, 1), got {self.target_p}")
        if not 0.0 < self.rho <= self.target_p:
            raise ValueError(f"rho must be in (0, target_p], got {self.rho}")


def clipped_support(space: DoseSpace, p: float) -> tuple[float, float, float, float]:
    """Rectangle [rho_lo, rho_hi] x [eta_lo, eta_hi] the engine integrates over."""
    return (RHO_CLIP, p - RHO_CLIP, space.eta_floor, space.x_max)


def log_odds(x, rho, eta, p, x_min):
    """Log odds of toxicity at dose ``x`` in natural coordinates.

    Equals ``alpha + beta * x`` of the corresponding canonical parameters.
    Broadcasts over any mix of array arguments.
    """
    lr = np.log1p(-np.asarray(rho)) - np.log(rho)  # log(1/rho - 1)
    lp = math.log1p(-p) - math.log(p)
    return ((x - eta) * lr - (x - x_min) * lp) / (eta - x_min)


def _check_transformable(nat: NaturalParams, space: DoseSpace) -> None:
    if nat.eta <= space.x_min:
        raise SingularTransformError(
            f"eta={nat.eta} must exceed x_min={space.x_min} for a finite slope"
        )
    if nat.rho >= nat.target_p:
        raise SingularTransformError(
            f"rho={nat.rho} at the target rate gives a flat curve (beta=0)"
        )


def to_canonical(nat: NaturalParams, space: DoseSpace) -> CanonicalParams:
    """Convert natural (rho, eta) to canonical (alpha, beta) coordinates."""
    _check_transformable(nat, space)
    lr = math.log(1.0 / nat.rho - 1.0)
    lp = math.log(1.0 / nat.target_p - 1.0)
    denom = nat.eta - space.x_min
    alpha = (space.x_min * lp - nat.eta * lr) / denom
    beta = (lr - lp) / denom
    return CanonicalParams(alpha=alpha, beta=beta)


def linear_predictor(x: float, nat: NaturalParams, space: DoseSpace) -> float:
    """alpha + beta * x evaluated directly from natural coordinates."""
    _check_transformable(nat, space)
    return float(log_odds(x, nat.rho, nat.eta, nat.target_p, space.x_min))


def toxicity_prob(
    x, params: CanonicalParams | NaturalParams, space: DoseSpace | None = None
):
    """Probability of a dose-limiting toxicity at dose ``x``.

    Natural-coordinate parameters need the dose space to anchor the curve.
    Accepts scalar or array ``x``.
    """
    if isinstance(params, CanonicalParams):
        z = params.alpha + params.beta * np.asarray(x, dtype=float)
    else:
        if space is None:
            raise ValueError("toxicity_prob with NaturalParams requires the dose space")
        _check_transformable(params, space)
        z = log_odds(x, params.rho, params.eta, params.target_p, space.x_min)
    out = expit(z)
    return float(out) if np.ndim(x) == 0 else out


def mtd(params: CanonicalParams, p: float) -> float:
    """Dose with toxicity probability exactly ``p`` (inverse of the curve)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    return (math.log(p / (1.0 - p)) - params.alpha) / params.beta


def fisher_info(params: CanonicalParams, x: float) -> np.ndarray:
    """Single-observation information matrix of (alpha, beta) at dose ``x``.

    Rank one: ``w(x) * [[1, x], [x, x^2]]`` with the logistic variance weight
    ``w(x) = F(x) * (1 - F(x))``.
    """
    f = expit(params.alpha + params.beta * x)
    w = f * (1.0 - f)
    return w * np.array([[1.0, x], [x, x * x]])
