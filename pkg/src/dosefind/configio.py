"""Shared parsing of trial/study configuration mappings.

Both the HTTP service (JSON bodies) and the batch runner (YAML files) accept
the same nested key/value layout; this module turns those mappings into
engine objects with strict unknown-key rejection and field-level errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from .designs import (
    ConstrainedOptimal,
    Crm,
    DesignPolicy,
    Ewoc,
    EwocStar,
    Ivoc,
    Lookahead,
)
from .losses import DesignCriterion, Ewoc as EwocLoss, Inverted, SquaredError
from .model import DoseSpace
from .posterior import Prior


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _require(mapping: Mapping, key: str, ctx: str):
    if key not in mapping:
        raise ConfigError(f"missing required key '{key}'", field=f"{ctx}.{key}".lstrip("."))
    return mapping[key]


def _reject_unknown(mapping: Mapping, allowed: set[str], ctx: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(
            f"unknown key '{name}' (allowed: {', '.join(sorted(allowed))})",
            field=f"{ctx}.{name}".lstrip("."),
        )


def dose_space_from(mapping: Mapping, ctx: str = "dose_space") -> DoseSpace:
    _reject_unknown(mapping, {"x_min", "x_max"}, ctx)
    try:
        return DoseSpace(float(_require(mapping, "x_min", ctx)), float(_require(mapping, "x_max", ctx)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=ctx) from exc


def _base_loss_from(kind: str, mapping: Mapping, ctx: str):
    if kind == "ewoc":
        return EwocLoss(float(mapping.get("feasibility_bound", 0.25)))
    if kind == "inverted":
        return Inverted(float(mapping.get("weight", 0.25)))
    if kind == "squared_error":
        return SquaredError()
    raise ConfigError(
        f"unknown base loss '{kind}' (allowed: ewoc, inverted, squared_error)",
        field=f"{ctx}.base_loss",
    )


_POLICY_KEYS = {
    "crm": {"kind", "enforce_coherence"},
    "ewoc": {"kind", "feasibility_bound", "enforce_coherence"},
    "ewoc_star": {"kind", "start_bound", "end_bound", "schedule_patients", "enforce_coherence"},
    "ivoc": {"kind", "weight", "enforce_coherence"},
    "lookahead": {
        "kind",
        "base_loss",
        "feasibility_bound",
        "weight",
        "future_weight",
        "n_particles",
        "enforce_coherence",
    },
    "constrained_optimal": {
        "kind",
        "criterion",
        "c_vector",
        "q",
        "feasibility_bound",
        "initial_count",
        "enforce_coherence",
    },
}


def policy_from(mapping: Mapping, n_patients: int, ctx: str = "policy") -> DesignPolicy:
    """Build a dose-selection policy from its mapping form.

    ``n_patients`` supplies the default escalation-schedule length for the
    escalating-bound variant.
    """
    kind = str(_require(mapping, "kind", ctx))
    if kind not in _POLICY_KEYS:
        raise ConfigError(
            f"unknown policy kind '{kind}' (allowed: {', '.join(sorted(_POLICY_KEYS))})",
            field=f"{ctx}.kind",
        )
    _reject_unknown(mapping, _POLICY_KEYS[kind], ctx)
    enforce = bool(mapping.get("enforce_coherence", False))
    try:
        if kind == "crm":
            variant = Crm()
        elif kind == "ewoc":
            variant = Ewoc(float(mapping.get("feasibility_bound", 0.25)))
        elif kind == "ewoc_star":
            variant = EwocStar(
                start_bound=float(mapping.get("start_bound", 0.25)),
                end_bound=float(mapping.get("end_bound", 0.5)),
                n_patients=int(mapping.get("schedule_patients", n_patients)),
            )
        elif kind == "ivoc":
            variant = Ivoc(float(mapping.get("weight", 0.25)))
        elif kind == "lookahead":
            base = _base_loss_from(str(mapping.get("base_loss", "ewoc")), mapping, ctx)
            variant = Lookahead(
                base_loss=base,
                future_weight=float(_require(mapping, "future_weight", ctx)),
                n_particles=int(mapping.get("n_particles", 20_000)),
            )
        else:
            crit_kind = str(mapping.get("criterion", "D"))
            c_vec = mapping.get("c_vector")
            variant = ConstrainedOptimal(
                criterion=DesignCriterion(
                    kind=crit_kind,
                    c_vector=tuple(float(c) for c in c_vec) if c_vec is not None else None,
                ),
                q=float(mapping["q"]) if "q" in mapping and mapping["q"] is not None else None,
                feasibility_bound=float(mapping.get("feasibility_bound", 0.25)),
                initial_count=int(mapping.get("initial_count", 2)),
            )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=ctx) from exc
    return DesignPolicy(variant=variant, enforce_coherence=enforce)


def policy_label(policy: DesignPolicy) -> str:
    v = policy.variant
    if isinstance(v, Crm):
        return "crm"
    if isinstance(v, Ewoc):
        return f"ewoc({v.feasibility_bound:g})"
    if isinstance(v, EwocStar):
        return f"ewoc_star({v.start_bound:g}->{v.end_bound:g}/{v.n_patients})"
    if isinstance(v, Ivoc):
        return f"ivoc({v.weight:g})"
    if isinstance(v, Lookahead):
        base = type(v.base_loss).__name__.lower()
        return f"lookahead({base},{v.future_weight:g})"
    return "constrained_optimal"


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to conduct or replay one trial."""

    space: DoseSpace
    p: float
    n_patients: int
    policy: DesignPolicy
    seed: int
    raw: dict

    @property
    def prior(self) -> Prior:
        return Prior.uniform(self.space, self.p)


_TRIAL_KEYS = {"dose_space", "target_rate", "n_patients", "policy", "seed", "prior"}


def trial_config_from(mapping: Mapping[str, Any]) -> TrialConfig:
    _reject_unknown(mapping, _TRIAL_KEYS, "")
    space = dose_space_from(_require(mapping, "dose_space", ""), "dose_space")
    try:
        p = float(_require(mapping, "target_rate", ""))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="target_rate") from exc
    if not 0.0 < p < 1.0:
        raise ConfigError(f"target_rate must be in (0, 1), got {p}", field="target_rate")
    try:
        n = int(_require(mapping, "n_patients", ""))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="n_patients") from exc
    if n < 1:
        raise ConfigError("n_patients must be >= 1", field="n_patients")
    prior_kind = mapping.get("prior", "uniform")
    if prior_kind != "uniform":
        raise ConfigError("only the uniform prior is configurable", field="prior")
    policy = policy_from(_require(mapping, "policy", ""), n)
    seed = int(mapping.get("seed", 0))
    raw = {
        "dose_space": {"x_min": space.x_min, "x_max": space.x_max},
        "target_rate": p,
        "n_patients": n,
        "prior": "uniform",
        "policy": dict(mapping["policy"]),
        "seed": seed,
    }
    return TrialConfig(space=space, p=p, n_patients=n, policy=policy, seed=seed, raw=raw)
