/** Wire types for the three service endpoints. */

export type EsaDirection = "UP" | "STAY" | "DOWN";
export type IsDirection = "UP" | "STAY";

export interface OccasionIn {
  occasion_index: number;
  exam_date: string; // ISO date
  hb: number;
  mcv: number;
  ferritin: number | null;
  tsat: number | null;
  esa_direction: EsaDirection;
  esa_dose: number;
  is_direction: IsDirection;
  is_active_weeks: number;
}

export interface RecommendRequest {
  timeline: { patient_id: string; occasions: OccasionIn[] };
  esa_threshold?: number;
  is_threshold?: number;
}

export interface Recommendation {
  patient_id: string;
  occasion_index: number;
  esa: {
    p_up: number;
    p_stay: number;
    p_down: number;
    direction: EsaDirection;
    threshold: number;
  };
  is: {
    p_up: number;
    p_stay: number;
    direction: IsDirection;
    threshold: number;
  };
  features: number[];
  esa_model_version: string;
  is_model_version: string;
}

export interface WhatIfRequest {
  p_up: number;
  p_stay: number;
  p_down: number;
  is_p_up: number;
  is_p_stay: number;
  sweep: number[];
}

export interface SweepRow {
  t: number;
  esa_direction: EsaDirection;
  is_direction: IsDirection;
}

export interface WhatIfResponse {
  sweep: SweepRow[];
}

export interface ModelInfo {
  esa_model_version: string;
  is_model_version: string;
  config_snapshot_hash: string;
  thresholds: { esa: number; is: number };
  training_manifest: Record<string, unknown>;
  history_len: number;
}

export interface ApiErrorBody {
  category: string;
  message: string;
  detail?: Record<string, unknown>;
}
