/** Hand-built miniature documents for structural tests, plus loaders for
 * the recorded service fixtures committed under fixtures/. */

import { existsSync, readFileSync } from "node:fs";
import { EnsembleDocument, QueryResponse } from "../src/types";

export const FIXTURE_DIR = new URL("../fixtures/", import.meta.url).pathname;

export function loadFixture<T>(name: string): T | null {
  const path = FIXTURE_DIR + name;
  if (!existsSync(path)) return null;
  return JSON.parse(readFileSync(path, "utf-8")) as T;
}

/** Two members, six grid points, observed through t=1.0, hop at 1.4. */
export function tinyEnsemble(): EnsembleDocument {
  const times = [0.0, 0.4, 0.8, 1.0, 1.4, 1.8];
  const memberA = times.map((t) => [Math.sin(t), 1 - t * 0.3]);
  const memberB = times.map((t) => [Math.sin(t) + 0.2 * t, 1 - t * 0.42]);
  return {
    schema: "odecast.ensemble/1",
    series_id: "tiny",
    fraction: 1.0,
    observed_end: 1.0,
    feature_names: ["alpha", "beta"],
    times,
    members: [memberA, memberB],
    spread: times.map((t) => [0.1 * t, 0.2 * t]),
    hop: 1.4,
    risk_curve: [
      { duration: 0.2, probability: 0.2 },
      { duration: 0.6, probability: 0.45 },
      { duration: 1.0, probability: 0.72 },
    ],
    risk_threshold: 0.5,
    risk_first_crossing: 1.0,
    k: 2,
    seed: 9,
    dropped: 0,
    norm_stats: { mean: [10, 100], std: [2, 25], time_origin: 0, time_scale: 48 },
  };
}

export function tinyQueryResponse(): QueryResponse {
  const base = tinyEnsemble();
  return {
    conditioned: {
      ...base,
      members: base.members.map((m) => m.map((row) => [row[0] * 0.9, row[1] * 0.9])),
      query: {
        conditioned_on: { time: 1.4, feature: 0, value: 0.9, tolerance: 0.2 },
        proposals: 100,
        support: 41.5,
        best_distance: 0.01,
        mean_proposal_distance: 0.4,
        mean_selected_distance: 0.1,
      },
    },
    backward_paths: [
      { member: 0, times: [0.4, 0.8, 1.0], values: [[0.3, 0.9], [0.6, 0.8], [0.8, 0.7]] },
    ],
    seed: 9,
  };
}
