/** Wire documents as served by the trajectory API. */

export interface NormStats {
  mean: number[];
  std: number[];
  time_origin: number;
  time_scale: number;
}

export interface RiskPoint {
  duration: number;
  probability: number;
}

export interface QueryInfo {
  conditioned_on?: { time: number; feature: number; value: number; tolerance: number };
  proposals?: number;
  support?: number;
  best_distance?: number;
  mean_proposal_distance?: number;
  mean_selected_distance?: number;
}

export interface EnsembleDocument {
  schema: string;
  series_id: string | null;
  fraction: number;
  observed_end: number;
  feature_names: string[];
  times: number[];
  /** [member][time][feature], normalized units */
  members: number[][][];
  /** [time][feature] ensemble standard deviation */
  spread: number[][];
  hop: number | null;
  risk_curve: RiskPoint[];
  risk_threshold: number;
  risk_first_crossing: number | null;
  k: number;
  seed: number;
  dropped: number;
  raw?: { times: number[]; members: number[][][]; spread: number[][] };
  norm_stats?: NormStats;
  query?: QueryInfo;
}

export interface SeriesDocument {
  schema?: string;
  series_id?: string;
  feature_names: string[];
  times: number[];
  values: number[][];
  mask: number[][];
  label?: number | null;
  norm_stats?: NormStats;
}

export interface BackwardPath {
  member: number;
  times: number[];
  values: number[][];
}

export interface QueryResponse {
  conditioned: EnsembleDocument;
  backward_paths: BackwardPath[];
  seed: number;
}

export interface RiskDocument {
  series_id: string;
  threshold: number;
  points: RiskPoint[];
  first_crossing: number | null;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  best_distance?: number;
  dropped?: number;
  fields?: Record<string, string>;
}

export interface HealthDocument {
  status: string;
  version: string;
  checkpoint_hash: string;
  series_count: number;
  uptime_seconds: number;
}

export interface PlacedPoint {
  time: number;
  feature: number;
  value: number;
  tolerance: number;
}

export type Units = "normalized" | "raw";

/** Everything the view is a function of (besides server documents). */
export interface ViewState {
  seriesId: string | null;
  fraction: number;
  k: number;
  horizonMult: number;
  seed: number;
  units: Units;
  placedPoint: PlacedPoint | null;
  showBackward: boolean;
}

export function initialViewState(): ViewState {
  return {
    seriesId: null,
    fraction: 1.0,
    k: 30,
    horizonMult: 2.0,
    seed: 0,
    units: "normalized",
    placedPoint: null,
    showBackward: true,
  };
}
