"""Loss functions that drive dose selection.

Four families:

* squared error on the dose scale (posterior-mean dosing);
* asymmetric linear loss on the dose scale with overdose weight ``1 - w``
  (feasibility-quantile dosing);
* asymmetric linear loss on the probability scale, measuring how far the
  achieved toxicity probability lands from the target rate;
* experimental-design criteria (D- and c-optimality) evaluated on the
  information matrix of the dose measure augmented with the candidate dose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CanonicalParams, DoseSpace, NaturalParams, to_canonical, toxicity_prob, fisher_info

DET_FLOOR = 1e-12  # below this the information matrix is treated as singular


class SingularInformationError(ArithmeticError):
    """Information matrix spans fewer than two distinct doses."""


@dataclass(frozen=True)
class SquaredError:
    """(eta - x)^2; symmetric, minimized by the posterior mean."""


@dataclass(frozen=True)
class Ewoc:
    """Asymmetric linear loss on the dose scale.

    Underdosing by one unit costs ``feasibility_bound``; overdosing costs
    ``1 - feasibility_bound``.  Minimized by the feasibility-bound quantile.
    The boundary value 1/2 (symmetric absolute error) is admitted because
    escalating-bound schedules finish there.
    """

    feasibility_bound: float

    def __post_init__(self) -> None:
        if not 0.0 < self.feasibility_bound <= 0.5:
            raise ValueError(
                f"feasibility bound must be in (0, 1/2], got {self.feasibility_bound}"
            )


@dataclass(frozen=True)
class Inverted:
    """Asymmetric linear loss on the probability scale.

    Penalizes the gap between the toxicity probability at the dose given and
    the target rate, weighting overshoot by ``1 - weight``.
    """

    weight: float

    def __post_init__(self) -> None:
        if not 0.0 < self.weight < 0.5:
            raise ValueError(f"weight must be in (0, 1/2), got {self.weight}")


@dataclass(frozen=True)
class DesignCriterion:
    """Optimal-design objective on the 2x2 information matrix.

    ``kind="D"`` is log-determinant based; ``kind="c"`` targets the variance
    of a linear combination ``c`` of the curve parameters (defaulting, where
    a posterior is available, to the MTD gradient).
    """

    kind: str = "D"
    c_vector: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("D", "c"):
            raise ValueError(f"criterion kind must be 'D' or 'c', got {self.kind!r}")


LossSpec = SquaredError | Ewoc | Inverted | DesignCriterion


@dataclass(frozen=True)
class DesignMeasure:
    """Multiset of administered doses (the empirical design measure)."""

    support_doses: tuple[float, ...] = ()

    @classmethod
    def empty(cls) -> "DesignMeasure":
        return cls(())

    @classmethod
    def of(cls, doses) -> "DesignMeasure":
        return cls(tuple(float(d) for d in doses))

    @property
    def count(self) -> int:
        return len(self.support_doses)

    def add(self, x: float) -> "DesignMeasure":
        return DesignMeasure(self.support_doses + (float(x),))


# ---------------------------------------------------------------------------
# Pointwise losses
# ---------------------------------------------------------------------------


def dose_scale_loss(spec: SquaredError | Ewoc, eta, x):
    """Vectorized loss on the dose scale; broadcasts eta against x."""
    eta = np.asarray(eta, dtype=float)
    diff = eta - x
    if isinstance(spec, SquaredError):
        return diff * diff
    w = spec.feasibility_bound
    return w * np.maximum(diff, 0.0) + (1.0 - w) * np.maximum(-diff, 0.0)


def prob_scale_loss(weight: float, tox_prob, p: float):
    """Vectorized probability-scale loss given toxicity probabilities."""
    f = np.asarray(tox_prob, dtype=float)
    return weight * np.maximum(p - f, 0.0) + (1.0 - weight) * np.maximum(f - p, 0.0)


def eval_loss(
    spec: LossSpec,
    nat: NaturalParams,
    x: float,
    space: DoseSpace,
    p: float | None = None,
) -> float:
    """Loss of giving dose ``x`` when the true curve is ``nat``.

    Design criteria need the running dose measure and are rejected here; use
    :func:`design_loss` for those.
    """
    if isinstance(spec, DesignCriterion):
        raise TypeError("design criteria need a dose measure; use design_loss")
    if not space.contains(x):
        raise ValueError(f"dose {x} outside [{space.x_min}, {space.x_max}]")
    if p is None:
        p = nat.target_p
    if isinstance(spec, (SquaredError, Ewoc)):
        return float(dose_scale_loss(spec, nat.eta, x))
    f = toxicity_prob(x, nat, space)
    return float(prob_scale_loss(spec.weight, f, p))


# ---------------------------------------------------------------------------
# Information-based design losses
# ---------------------------------------------------------------------------


def info_matrix(xi: DesignMeasure, params: CanonicalParams) -> np.ndarray:
    """Average single-dose information over the measure's support."""
    if xi.count < 1:
        raise ValueError("information matrix of the zero measure is undefined")
    out = np.zeros((2, 2))
    for dose in xi.support_doses:
        out += fisher_info(params, dose)
    return out / xi.count


def criterion(crit: DesignCriterion, m: np.ndarray) -> float:
    """Scalar design objective of a 2x2 information matrix (smaller = better)."""
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det <= DET_FLOOR:
        raise SingularInformationError(
            f"information matrix is singular (det={det:.3e}); "
            "designs need at least two distinct doses"
        )
    if crit.kind == "D":
        return -math.log(det)
    if crit.c_vector is None:
        raise ValueError("c-optimality requires a c_vector")
    c = np.asarray(crit.c_vector, dtype=float)
    minv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    return float(c @ minv @ c)


def mtd_gradient(params: CanonicalParams, p: float) -> tuple[float, float]:
    """Gradient of the MTD with respect to (alpha, beta); the standard
    c-vector when the design targets MTD estimation."""
    eta = (math.log(p / (1.0 - p)) - params.alpha) / params.beta
    return (-1.0 / params.beta, -eta / params.beta)


def design_loss(
    spec: DesignCriterion,
    nat: NaturalParams,
    x: float,
    xi: DesignMeasure,
    space: DoseSpace,
) -> float:
    """Criterion value after adding dose ``x`` to the measure."""
    if not space.contains(x):
        raise ValueError(f"dose {x} outside [{space.x_min}, {space.x_max}]")
    params = to_canonical(nat, space)
    m_new = fisher_info(params, x)
    if xi.count > 0:
        m_new = (xi.count * info_matrix(xi, params) + fisher_info(params, x)) / (
            xi.count + 1
        )
    return criterion(spec, m_new)
