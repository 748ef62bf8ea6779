#!/usr/bin/env python3
"""Build the committed demo artifacts from trained checkpoints.

Inputs:  artifacts/spiral.ckpt, artifacts/icu.ckpt (produced by the CLI)
Outputs: artifacts/demo_meta.json       generator configs + split sizes + picks
         artifacts/demo_patients.jsonl  the two hand-picked exemplar series
         frontend/fixtures/*.json       recorded service responses for UI tests

Patient A is a deceased-label test patient whose risk curve crosses the
threshold inside the window (latest such crossing wins); patient B is a
survivor whose curve stays lowest. Both are stored as documents so the
acceptance suite and the UI fixtures pin the exact same bytes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from odecast.checkpoint import load_checkpoint  # noqa: E402
from odecast.data import IcuGenConfig, SpiralConfig, gen_icu, gen_spirals, \
    normalize_split  # noqa: E402
from odecast.engine import EngineConfig, risk_curve  # noqa: E402
from odecast.series import series_to_document  # noqa: E402

SPIRAL_GEN = {"n_series": 300, "points_per_series": 80, "cw_ratio": 0.5,
              "noise_std": 0.03, "seed": 1}
ICU_GEN = {"n_patients": 300, "window_hours": 48.0, "death_ratio": 0.35,
           "drift_separation": 1.0, "obs_rate_scale": 1.0, "seed": 11}
SPIRAL_N_TEST = 60
ICU_N_TEST = 60
THRESHOLD = 0.5


def pick_demo_patients(params, test_split):
    best_a, best_a_key = None, (-1.0, -np.inf)
    best_b, best_b_key = None, np.inf
    curves = {}
    for series in test_split:
        points, crossing = risk_curve(series, params, threshold=THRESHOLD)
        curves[series.series_id] = {"points": points, "crossing": crossing}
        probs = [p for _, p in points]
        if series.label == 1 and crossing is not None:
            key = (crossing, probs[-1])  # latest crossing, then highest final risk
            if key > best_a_key:
                best_a_key, best_a = key, series
        if series.label == 0 and crossing is None:
            key = max(probs)
            if key < best_b_key:
                best_b_key, best_b = key, series
    if best_a is None or best_b is None:
        raise SystemExit("no suitable demo patients in the test split; retrain or reseed")
    return best_a, best_b, curves


def main() -> int:
    artifacts = ROOT / "artifacts"
    fixtures = ROOT / "frontend" / "fixtures"
    artifacts.mkdir(exist_ok=True)
    fixtures.mkdir(parents=True, exist_ok=True)

    icu_params = load_checkpoint(artifacts / "icu.ckpt")
    collection = gen_icu(IcuGenConfig(**ICU_GEN))
    test, train = collection[:ICU_N_TEST], collection[ICU_N_TEST:]
    _, test = normalize_split(train, test)

    patient_a, patient_b, curves = pick_demo_patients(icu_params, test)
    print(f"patient A = {patient_a.series_id} (crossing at "
          f"{curves[patient_a.series_id]['crossing']})")
    print(f"patient B = {patient_b.series_id} (max risk "
          f"{max(p for _, p in curves[patient_b.series_id]['points']):.3f})")

    with open(artifacts / "demo_patients.jsonl", "w", encoding="utf-8") as fh:
        for series in (patient_a, patient_b):
            fh.write(json.dumps(series_to_document(series), sort_keys=True) + "\n")

    meta = {
        "schema": "odecast.demo-meta/1",
        "spiral_gen": SPIRAL_GEN,
        "icu_gen": ICU_GEN,
        "spiral_n_test": SPIRAL_N_TEST,
        "icu_n_test": ICU_N_TEST,
        "threshold": THRESHOLD,
        "patient_a_id": patient_a.series_id,
        "patient_b_id": patient_b.series_id,
        "ensemble_seed": 2026,
        "query_seed": 7,
    }
    (artifacts / "demo_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")

    # Record service responses as UI fixtures through the real HTTP stack.
    from starlette.testclient import TestClient
    from odecast.checkpoint import checkpoint_hash
    from odecast.service import create_app

    app = create_app(icu_params, checkpoint_hash(artifacts / "icu.ckpt"),
                     config=EngineConfig())
    with TestClient(app) as client:
        ida = client.put("/series",
                         content=json.dumps(series_to_document(patient_a))).json()["id"]
        idb = client.put("/series",
                         content=json.dumps(series_to_document(patient_b))).json()["id"]
        ens_a = client.get(f"/series/{ida}/ensemble",
                           params={"k": 30, "seed": meta["ensemble_seed"]})
        ens_b = client.get(f"/series/{idb}/ensemble",
                           params={"k": 30, "seed": meta["ensemble_seed"]})
        risk_a = client.get(f"/series/{ida}/risk")
        doc_a = ens_a.json()
        t_mid = doc_a["times"][int(len(doc_a["times"]) * 0.6)]
        member_vals = [m[int(len(doc_a["times"]) * 0.6)][2] for m in doc_a["members"]]
        feasible = {"point": {"time": t_mid, "feature": 2,
                              "value": float(sum(member_vals) / len(member_vals)),
                              "tolerance": 0.5},
                    "k": 20, "seed": meta["query_seed"]}
        query_ok = client.post(f"/series/{ida}/query", content=json.dumps(feasible))
        implausible = {"point": {"time": t_mid, "feature": 2, "value": 80.0,
                                 "tolerance": 0.05},
                       "k": 20, "seed": meta["query_seed"]}
        query_bad = client.post(f"/series/{ida}/query", content=json.dumps(implausible))

    assert ens_a.status_code == 200 and ens_b.status_code == 200
    assert query_ok.status_code == 200, query_ok.text
    assert query_bad.status_code == 422, query_bad.text
    (fixtures / "ensemble_patient_a.json").write_bytes(ens_a.content)
    (fixtures / "ensemble_patient_b.json").write_bytes(ens_b.content)
    (fixtures / "risk_patient_a.json").write_bytes(risk_a.content)
    (fixtures / "query_conditioned.json").write_bytes(query_ok.content)
    (fixtures / "query_infeasible.json").write_bytes(query_bad.content)
    (fixtures / "health.json").write_bytes(
        json.dumps({"status": "ready", "version": "0.1.0",
                    "checkpoint_hash": checkpoint_hash(artifacts / "icu.ckpt"),
                    "series_count": 2, "uptime_seconds": 1.0},
                   sort_keys=True, separators=(",", ":")).encode())
    print("fixtures written to", fixtures)
    return 0


if __name__ == "__main__":
    sys.exit(main())
