"""Interactive trial-conduct service.

One trial = one append-only event log on disk (JSON lines).  The in-memory
session and every posterior summary are derived by replaying that log, never
stored authoritatively, so a restart (or an auditor) reconstructs the exact
same recommendations: dose selection is a pure function of the recorded
history plus the seed captured at creation.

HTTP surface (JSON, snake_case):

* ``POST /trials`` — create a trial, returns the first recommendation
* ``GET /trials/{id}`` — full snapshot with posterior summaries
* ``POST /trials/{id}/outcomes`` — record one patient's outcome
* ``GET /trials/{id}/recommendation`` — current recommendation only
* ``GET /healthz``

Configuration comes from the environment: ``DOSEFIND_DATA_DIR`` for the log
directory, ``DOSEFIND_TOKEN`` for an optional static bearer token.
"""

import json
import os
import threading
import uuid
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .configio import ConfigError, TrialConfig, trial_config_from
from .designs import DesignState, coherence_bounds, next_dose
from .posterior import GridPosterior, History, build_grid_posterior, marginal_eta

DENSITY_GRID_POINTS = 200


class TrialNotFound(KeyError):
    pass


class OutcomeConflict(ValueError):
    """Out-of-order or contradictory outcome submission."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class Event:
    event: str
    payload: dict
    timestamp: str


@dataclass(frozen=True)
class TrialSession:
    """Derived view of one trial's event log."""

    id: str
    config: TrialConfig
    history: History
    created_at: str
    updated_at: str
    event_log: tuple[Event, ...]

    @property
    def status(self) -> str:
        return "complete" if len(self.history) >= self.config.n_patients else "active"

    @property
    def patients_enrolled(self) -> int:
        return len(self.history)


def _policy_rng(seed: int, patient_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, patient_index))))


class TrialStore:
    """Event-sourced store of trial sessions, one JSONL file per trial."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, TrialSession] = {}
        self._posteriors: dict[str, GridPosterior] = {}  # derived cache
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        for path in sorted(self.data_dir.glob("*.jsonl")):
            session = self._replay_file(path)
            self._sessions[session.id] = session

    # -- log plumbing -----------------------------------------------------

    def _log_path(self, trial_id: str) -> Path:
        return self.data_dir / f"{trial_id}.jsonl"

    def _append(self, trial_id: str, event: Event) -> None:
        with open(self._log_path(trial_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": event.event, "payload": event.payload, "timestamp": event.timestamp}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay_file(self, path: Path) -> TrialSession:
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    events.append(Event(rec["event"], rec["payload"], rec["timestamp"]))
        return _session_from_events(events)

    def _lock_for(self, trial_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(trial_id, threading.Lock())

    # -- queries ----------------------------------------------------------

    def get(self, trial_id: str) -> TrialSession:
        try:
            return self._sessions[trial_id]
        except KeyError:
            raise TrialNotFound(trial_id) from None

    def replay(self, trial_id: str) -> TrialSession:
        """Rebuild the session purely from its on-disk log."""
        path = self._log_path(trial_id)
        if not path.exists():
            raise TrialNotFound(trial_id)
        return self._replay_file(path)

    def posterior(self, session: TrialSession) -> GridPosterior:
        cached = self._posteriors.get(session.id)
        if cached is not None and cached.history == session.history:
            return cached
        gp = build_grid_posterior(session.config.prior, session.history)
        self._posteriors[session.id] = gp
        return gp

    def recommend(self, session: TrialSession) -> dict | None:
        """Next recommendation, or None once the trial is complete."""
        if session.status == "complete":
            return None
        gp = self.posterior(session)
        state = DesignState.from_history(session.history)
        dose = next_dose(
            session.config.policy,
            gp,
            state,
            _policy_rng(session.config.seed, state.patient_index),
        )
        flag = False
        if state.last_dose is not None and not session.config.policy.enforce_coherence:
            lo, hi = coherence_bounds(session.config.space, state.last_dose, state.last_outcome)
            flag = not (lo <= dose <= hi)
        return {
            "patient_index": state.patient_index,
            "dose": dose,
            "coherence_flag": flag,
        }

    # -- mutations ----------------------------------------------------------

    def create(self, config_mapping: dict) -> TrialSession:
        config = trial_config_from(config_mapping)
        trial_id = uuid.uuid4().hex
        event = Event("trial_created", {"id": trial_id, "config": config.raw}, _now())
        session = _session_from_events([event])
        # the log is authoritative: persist before exposing the session
        self._append(trial_id, event)
        with self._registry_lock:
            self._sessions[trial_id] = session
        return session

    def record_outcome(
        self, trial_id: str, patient_index: int, dose_given: float, outcome: int
    ) -> tuple[TrialSession, bool]:
        """Record one outcome; returns (session, was_duplicate).

        The submission must carry the next patient index; resubmitting the
        previous index with an identical payload is acknowledged without a
        second update.
        """
        lock = self._lock_for(trial_id)
        with lock:
            session = self.get(trial_id)
            expected = session.patients_enrolled + 1
            if patient_index == expected - 1 and session.patients_enrolled > 0:
                last_dose, last_outcome = session.history.observations[-1]
                if last_dose == float(dose_given) and last_outcome == int(outcome):
                    return session, True
                raise OutcomeConflict(
                    f"patient {patient_index} already recorded with a different payload"
                )
            if patient_index != expected:
                raise OutcomeConflict(
                    f"expected patient_index {expected}, got {patient_index}"
                )
            if session.status == "complete":
                raise OutcomeConflict("trial already complete")
            if not session.config.space.contains(float(dose_given)):
                raise ConfigError(
                    f"dose {dose_given} outside "
                    f"[{session.config.space.x_min}, {session.config.space.x_max}]",
                    field="dose_given",
                )
            if int(outcome) not in (0, 1):
                raise ConfigError("outcome must be 0 or 1", field="outcome")
            event = Event(
                "outcome_recorded",
                {
                    "patient_index": patient_index,
                    "dose_given": float(dose_given),
                    "outcome": int(outcome),
                },
                _now(),
            )
            updated = replace(
                session,
                history=session.history.append(float(dose_given), int(outcome)),
                updated_at=event.timestamp,
                event_log=session.event_log + (event,),
            )
            self._append(trial_id, event)  # durable before visible
            self._sessions[trial_id] = updated
            return updated, False

    # -- snapshots ----------------------------------------------------------

    def snapshot(self, session: TrialSession) -> dict:
        gp = self.posterior(session)
        marg = marginal_eta(gp)
        grid = session.config.space.grid(DENSITY_GRID_POINTS)
        rec = self.recommend(session)
        return {
            "id": session.id,
            "status": session.status,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
            "config": session.config.raw,
            "patients_enrolled": session.patients_enrolled,
            "n_patients": session.config.n_patients,
            "history": [
                {"patient_index": i + 1, "dose": d, "outcome": y}
                for i, (d, y) in enumerate(session.history.observations)
            ],
            "dlt_count": int(sum(y for _, y in session.history.observations)),
            "posterior": {
                "mean_mtd": marg.mean(),
                "sd_mtd": marg.sd(),
                "interval_90": [marg.quantile(0.05), marg.quantile(0.95)],
                "density_grid": [float(x) for x in grid],
                "density": [float(v) for v in marg.density_on(grid)],
            },
            "eta_hat": marg.mean(),
            "recommendation": rec,
        }


def _session_from_events(events: list[Event]) -> TrialSession:
    if not events or events[0].event != "trial_created":
        raise ValueError("event log must start with trial_created")
    created = events[0]
    config = trial_config_from(created.payload["config"])
    history = History()
    for ev in events[1:]:
        if ev.event != "outcome_recorded":
            raise ValueError(f"unknown event type {ev.event!r}")
        history = history.append(ev.payload["dose_given"], ev.payload["outcome"])
    return TrialSession(
        id=created.payload["id"],
        config=config,
        history=history,
        created_at=created.timestamp,
        updated_at=events[-1].timestamp,
        event_log=tuple(events),
    )


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


try:  # pydantic is only needed once the HTTP layer is used
    from pydantic import BaseModel

    class OutcomeBody(BaseModel):
        patient_index: int
        dose_given: float
        outcome: int

except ImportError:  # pragma: no cover - engine usable without the web stack
    OutcomeBody = None


def create_app(store: TrialStore | None = None, token: str | None = None):
    from fastapi import FastAPI, Header, Request
    from fastapi.responses import JSONResponse

    if store is None:
        store = TrialStore(os.environ.get("DOSEFIND_DATA_DIR", "./dosefind-data"))
    if token is None:
        token = os.environ.get("DOSEFIND_TOKEN") or None

    app = FastAPI(title="dosefind trial conduct", version="0.1.0")
    app.state.store = store

    def _err(status: int, code: str, message: str, field: str | None = None):
        body: dict[str, Any] = {"code": code, "message": message}
        if field:
            body["field"] = field
        return JSONResponse(status_code=status, content=body)

    def _check_auth(authorization: str | None) -> JSONResponse | None:
        if token and authorization != f"Bearer {token}":
            return _err(401, "unauthorized", "missing or invalid bearer token")
        return None

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        return _err(422, "invalid_config", str(exc), exc.field)

    @app.exception_handler(TrialNotFound)
    async def _not_found(request: Request, exc: TrialNotFound):
        return _err(404, "not_found", f"unknown trial {exc.args[0]}")

    @app.exception_handler(OutcomeConflict)
    async def _conflict(request: Request, exc: OutcomeConflict):
        return _err(409, "conflict", str(exc))

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/trials", status_code=201)
    async def create_trial(body: dict, authorization: str | None = Header(default=None)):
        if (resp := _check_auth(authorization)) is not None:
            return resp
        session = store.create(body)
        return store.snapshot(session)

    @app.get("/trials/{trial_id}")
    async def get_trial(trial_id: str, authorization: str | None = Header(default=None)):
        if (resp := _check_auth(authorization)) is not None:
            return resp
        return store.snapshot(store.get(trial_id))

    @app.get("/trials/{trial_id}/recommendation")
    async def get_recommendation(
        trial_id: str, authorization: str | None = Header(default=None)
    ):
        if (resp := _check_auth(authorization)) is not None:
            return resp
        session = store.get(trial_id)
        rec = store.recommend(session)
        return {"id": session.id, "status": session.status, "recommendation": rec}

    @app.post("/trials/{trial_id}/outcomes")
    async def record_outcome(
        trial_id: str, body: OutcomeBody, authorization: str | None = Header(default=None)
    ):
        if (resp := _check_auth(authorization)) is not None:
            return resp
        session, duplicate = store.record_outcome(
            trial_id, body.patient_index, body.dose_given, body.outcome
        )
        rec = store.recommend(session)
        return {
            "id": session.id,
            "status": session.status,
            "patients_enrolled": session.patients_enrolled,
            "duplicate": duplicate,
            "recommendation": rec,
            "eta_hat": marginal_eta(store.posterior(session)).mean(),
        }

    return app


def serve(host: str = "127.0.0.1", port: int = 8765, data_dir: str | None = None) -> None:
    """Run the HTTP service (blocking)."""
    import uvicorn

    store = TrialStore(data_dir or os.environ.get("DOSEFIND_DATA_DIR", "./dosefind-data"))
    uvicorn.run(create_app(store), host=host, port=port, log_level="info")
