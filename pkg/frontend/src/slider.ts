/** Threshold slider backed by a cached what-if sweep: directions at any
 * slider position are looked up from service answers, never computed here. */

import type { SweepRow } from "./types.js";

export const SWEEP_POINTS = 201;

export function sweepGrid(): number[] {
  return Array.from({ length: SWEEP_POINTS }, (_, i) => i / (SWEEP_POINTS - 1));
}

/** The cached sweep row whose threshold is closest to t. */
export function rowAt(sweep: SweepRow[], t: number): SweepRow {
  if (sweep.length === 0) throw new Error("empty sweep");
  let best = sweep[0]!;
  for (const row of sweep) {
    if (Math.abs(row.t - t) < Math.abs(best.t - t)) best = row;
  }
  return best;
}

/** Number of direction changes between consecutive sweep rows. */
export function countFlips(sweep: SweepRow[], key: "esa_direction" | "is_direction"): number {
  let flips = 0;
  for (let i = 1; i < sweep.length; i++) {
    if (sweep[i]![key] !== sweep[i - 1]![key]) flips++;
  }
  return flips;
}
