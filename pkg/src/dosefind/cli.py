"""Batch entry points.

``dosefind study <config>``     run a simulation study, write report files
``dosefind posterior <history>`` summarize one posterior from a history file
``dosefind serve``              run the trial-conduct HTTP service

Study configs are YAML (nested key/value sections) with strict unknown-key
rejection; see ``configs/`` for annotated examples.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import yaml

from . import __version__
from .configio import ConfigError, dose_space_from, policy_from, policy_label
from .posterior import History, Prior, build_grid_posterior, marginal_eta
from .simulator import BayesianDraw, FixedTruth, FREQ_TRUTHS, ScenarioSpec, run_study

_STUDY_KEYS = {
    "dose_space",
    "target_rate",
    "n_patients",
    "replications",
    "seed",
    "scenario",
    "policies",
    "risk_weights",
    "resolution",
    "output_dir",
    "workers",
}
_POSTERIOR_KEYS = {"dose_space", "target_rate", "resolution", "quantile"}


def _load_yaml(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    return data


def _reject_unknown(mapping: dict, allowed: set[str], what: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key '{unknown[0]}' in {what} (allowed: {', '.join(sorted(allowed))})",
            field=unknown[0],
        )


def _scenario_from(cfg: dict, seed: int, replications: int) -> tuple[ScenarioSpec, Prior]:
    space = dose_space_from(cfg.get("dose_space", {}), "dose_space")
    p = float(cfg.get("target_rate", 1 / 3))
    prior = Prior.uniform(space, p)
    raw = cfg.get("scenario", "bayes")
    weights = cfg.get("risk_weights", {}) or {}
    _reject_unknown(weights, {"underdose", "prob"}, "risk_weights")
    if isinstance(raw, str):
        name = raw
        if raw == "bayes":
            truth = BayesianDraw(prior)
        elif raw in FREQ_TRUTHS:
            truth = FREQ_TRUTHS[raw]
        else:
            raise ConfigError(
                f"unknown scenario '{raw}' (allowed: bayes, freq1, freq2, freq3, "
                "or a mapping with rho/eta)",
                field="scenario",
            )
    else:
        _reject_unknown(raw, {"name", "rho", "eta"}, "scenario")
        try:
            truth = FixedTruth(rho=float(raw["rho"]), eta=float(raw["eta"]))
        except KeyError as exc:
            raise ConfigError(f"scenario mapping needs key {exc}", field="scenario")
        name = str(raw.get("name", f"fixed(rho={truth.rho:g},eta={truth.eta:g})"))
    spec = ScenarioSpec(
        name=name,
        truth=truth,
        n_patients=int(cfg.get("n_patients", 24)),
        replications=replications,
        p=p,
        seed=seed,
        risk_underdose_weight=float(weights.get("underdose", 0.25)),
        risk_prob_weight=float(weights.get("prob", 0.25)),
    )
    return spec, prior


def cmd_study(args: argparse.Namespace) -> int:
    cfg = _load_yaml(Path(args.config))
    _reject_unknown(cfg, _STUDY_KEYS, "study config")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    reps = args.reps if args.reps is not None else int(cfg.get("replications", 1000))
    workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
    scenario, prior = _scenario_from(cfg, seed, reps)
    res = cfg.get("resolution", [128, 128])
    resolution = (int(res[0]), int(res[1]))
    policy_cfgs = cfg.get("policies")
    if not policy_cfgs:
        raise ConfigError("study config needs a non-empty 'policies' list", field="policies")
    policies = []
    for i, pc in enumerate(policy_cfgs):
        pc = dict(pc)
        display = pc.pop("name", None)  # optional label, not a policy field
        pol = policy_from(pc, scenario.n_patients, ctx=f"policies[{i}]")
        policies.append((str(display) if display else policy_label(pol), pol))

    out_dir = Path(args.out or cfg.get("output_dir", "dosefind-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    report = run_study(policies, scenario, prior=prior, workers=workers, resolution=resolution)
    elapsed = time.time() - started

    table_path = out_dir / "table.txt"
    table_path.write_text(report.table() + "\n", encoding="utf-8")
    rows_path = out_dir / "rows.csv"
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scenario", "policy", "metric", "mean", "se"])
        writer.writeheader()
        writer.writerows(report.rows())
    manifest = {
        "command": "study",
        "version": __version__,
        "config": cfg,
        "seed": seed,
        "replications": reps,
        "workers": workers,
        "elapsed_seconds": elapsed,
        "outputs": [str(table_path), str(rows_path)],
        "failures": list(report.failures),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(report.table())
    print(f"\nwrote {table_path}, {rows_path}, {manifest_path}  ({elapsed:.1f}s)")
    return 0


def _load_history(path: Path) -> list[tuple[float, int]]:
    if not path.exists():
        raise ConfigError(f"history file not found: {path}")
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        return [(float(r["dose"]), int(r["outcome"])) for r in data]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"dose", "outcome"} <= set(reader.fieldnames):
            raise ConfigError("history CSV needs 'dose' and 'outcome' columns")
        return [(float(r["dose"]), int(r["outcome"])) for r in reader]


def cmd_posterior(args: argparse.Namespace) -> int:
    cfg = _load_yaml(Path(args.config)) if args.config else {
        "dose_space": {"x_min": 140.0, "x_max": 425.0},
        "target_rate": 1 / 3,
    }
    _reject_unknown(cfg, _POSTERIOR_KEYS, "posterior config")
    space = dose_space_from(cfg.get("dose_space", {}), "dose_space")
    p = float(cfg.get("target_rate", 1 / 3))
    res = cfg.get("resolution", [128, 128])
    quantile = float(cfg.get("quantile", 0.25))
    prior = Prior.uniform(space, p)
    pairs = _load_history(Path(args.history))
    for dose, _ in pairs:
        if not space.contains(dose):
            raise ConfigError(
                f"dose {dose} outside [{space.x_min}, {space.x_max}]", field="history"
            )
    history = History.from_pairs(pairs)
    gp = build_grid_posterior(prior, history, (int(res[0]), int(res[1])))
    marg = marginal_eta(gp)
    summary = {
        "observations": len(history),
        "dlt_count": int(history.outcomes.sum()) if len(history) else 0,
        "mean_mtd": marg.mean(),
        "sd_mtd": marg.sd(),
        "quantile_level": quantile,
        "quantile_mtd": marg.quantile(quantile),
        "median_mtd": marg.quantile(0.5),
        "interval_90": [marg.quantile(0.05), marg.quantile(0.95)],
    }
    print(json.dumps(summary, indent=2))
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        grid = space.grid(200)
        dens = marg.density_on(grid)
        with open(out_dir / "density.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dose", "density"])
            writer.writerows(zip(grid.tolist(), dens.tolist()))
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out_dir / 'density.csv'}, {out_dir / 'summary.json'}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import os

    from .service import serve

    host, port = args.host, args.port
    bind = os.environ.get("DOSEFIND_BIND")
    if bind and args.host is None and args.port is None:
        host, _, port_s = bind.rpartition(":")
        port = int(port_s)
    host = host or "127.0.0.1"
    port = port if port is not None else 8765
    try:
        serve(host=host, port=port, data_dir=args.data_dir)
    except OSError as exc:
        print(f"error: cannot bind {host}:{port}: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dosefind", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_study = sub.add_parser("study", help="run a simulation study from a config file")
    p_study.add_argument("config", help="YAML study config")
    p_study.add_argument("--seed", type=int, default=None, help="override config seed")
    p_study.add_argument("--reps", type=int, default=None, help="override replications")
    p_study.add_argument("--workers", type=int, default=None, help="parallel workers")
    p_study.add_argument("--out", default=None, help="output directory")
    p_study.set_defaults(func=cmd_study)

    p_post = sub.add_parser("posterior", help="summarize the posterior for a history file")
    p_post.add_argument("history", help="CSV (dose,outcome) or JSON history file")
    p_post.add_argument("--config", default=None, help="YAML posterior config")
    p_post.add_argument("--out", default=None, help="directory for density dump")
    p_post.set_defaults(func=cmd_posterior)

    p_serve = sub.add_parser("serve", help="run the trial-conduct HTTP service")
    p_serve.add_argument("--host", default=None, help="bind host (or DOSEFIND_BIND=host:port)")
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--data-dir", default=None, help="event-log directory")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        field = f" (field: {exc.field})" if exc.field else ""
        print(f"error: {exc}{field}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
