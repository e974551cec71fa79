"""Conducting a live trial through the event-sourced store.

The same engine the HTTP service exposes: create a trial, record outcomes one
patient at a time, read recommendations and posterior summaries, then prove
the on-disk event log replays to the identical state.

(To drive this over HTTP instead: `dosefind serve` and POST the same payloads;
the dashboard under frontend/ renders this flow.)
"""

import tempfile

import numpy as np

from dosefind.service import TrialStore

config = {
    "dose_space": {"x_min": 140.0, "x_max": 425.0},
    "target_rate": 1 / 3,
    "n_patients": 8,
    "policy": {"kind": "ewoc", "feasibility_bound": 0.25},
    "seed": 20260810,
}

with tempfile.TemporaryDirectory() as data_dir:
    store = TrialStore(data_dir)
    session = store.create(config)
    print(f"trial {session.id[:8]}… created")

    rng = np.random.default_rng(7)
    rec = store.recommend(session)
    while rec is not None:
        dose = rec["dose"]
        outcome = int(rng.random() < 0.3)  # stand-in for the clinic's observation
        print(f"  patient {rec['patient_index']:2d}: recommended {dose:7.2f}, observed y={outcome}")
        session, _ = store.record_outcome(session.id, rec["patient_index"], dose, outcome)
        rec = store.recommend(session)

    snap = store.snapshot(session)
    lo, hi = snap["posterior"]["interval_90"]
    print(f"\ncomplete: {snap['dlt_count']} toxicities in {snap['patients_enrolled']} patients")
    print(f"terminal MTD estimate {snap['eta_hat']:.2f}, 90% interval [{lo:.1f}, {hi:.1f}]")

    # replay the append-only log from disk: identical history, identical estimate
    replayed = TrialStore(data_dir).replay(session.id)
    assert replayed.history == session.history
    replay_snap = store.snapshot(replayed)
    print(f"replayed terminal estimate  {replay_snap['eta_hat']:.2f}  (bit-identical: "
          f"{replay_snap['eta_hat'] == snap['eta_hat']})")
