/** Client-side validation mirroring the server's record invariants.
 *
 * Everything accepted here is also accepted by the service, so a draft that
 * passes never bounces for format reasons. The server remains authoritative.
 */

import type { EsaDirection, IsDirection, OccasionIn } from "./types.js";

/** One editable row; numeric cells hold raw strings until they parse. */
export interface DraftRow {
  exam_date: string;
  hb: string;
  mcv: string;
  ferritin: string; // empty string = not measured
  tsat: string; // empty string = not measured
  esa_direction: EsaDirection;
  esa_dose: string;
  is_direction: IsDirection;
  is_active_weeks: string;
}

export interface TimelineDraft {
  patient_id: string;
  rows: DraftRow[];
}

/** Field name -> first violated rule, empty map when the row is clean. */
export type RowErrors = Partial<Record<keyof DraftRow, string>>;

/** Occasions required by the service before it can recommend. */
export const MIN_OCCASIONS_FOR_RECOMMEND = 5;

export const BAND_LOW = 10.0;
export const BAND_HIGH = 12.0;

function parseNumber(raw: string): number | null {
  const trimmed = raw.trim();
  if (trimmed === "") return null;
  const value = Number(trimmed);
  return Number.isFinite(value) ? value : null;
}

export function validateRow(row: DraftRow): RowErrors {
  const errors: RowErrors = {};

  if (!/^\d{4}-\d{2}-\d{2}$/.test(row.exam_date.trim())) {
    errors.exam_date = "date must be YYYY-MM-DD";
  }

  const hb = parseNumber(row.hb);
  if (hb === null) {
    errors.hb = "hb is required and must be a number";
  } else if (!(hb > 0 && hb < 25)) {
    errors.hb = `hb ${hb} outside (0, 25)`;
  }

  const mcv = parseNumber(row.mcv);
  if (mcv === null) {
    errors.mcv = "mcv is required and must be a number";
  } else if (!(mcv > 0)) {
    errors.mcv = `mcv ${mcv} must be positive`;
  }

  if (row.ferritin.trim() !== "") {
    const ferritin = parseNumber(row.ferritin);
    if (ferritin === null) {
      errors.ferritin = "ferritin must be a number or blank";
    } else if (ferritin < 0) {
      errors.ferritin = `ferritin ${ferritin} must be >= 0`;
    }
  }

  if (row.tsat.trim() !== "") {
    const tsat = parseNumber(row.tsat);
    if (tsat === null) {
      errors.tsat = "tsat must be a number or blank";
    } else if (!(tsat >= 0 && tsat <= 100)) {
      errors.tsat = `tsat ${tsat} outside [0, 100]`;
    }
  }

  const dose = parseNumber(row.esa_dose);
  if (dose === null) {
    errors.esa_dose = "esa_dose is required and must be a number";
  } else if (dose < 0) {
    errors.esa_dose = `esa_dose ${dose} must be >= 0`;
  }

  const weeks = parseNumber(row.is_active_weeks);
  if (weeks === null || !Number.isInteger(weeks)) {
    errors.is_active_weeks = "is_active_weeks must be an integer";
  } else if (weeks < 0) {
    errors.is_active_weeks = `is_active_weeks ${weeks} must be >= 0`;
  }

  return errors;
}

export interface DraftValidation {
  rowErrors: RowErrors[];
  draftErrors: string[];
  valid: boolean;
}

export function validateDraft(draft: TimelineDraft): DraftValidation {
  const rowErrors = draft.rows.map(validateRow);
  const draftErrors: string[] = [];

  if (draft.patient_id.trim() === "") {
    draftErrors.push("patient id is required");
  }
  if (draft.rows.length < MIN_OCCASIONS_FOR_RECOMMEND) {
    draftErrors.push(
      `need at least ${MIN_OCCASIONS_FOR_RECOMMEND} occasions, have ${draft.rows.length}`,
    );
  }
  for (let i = 1; i < draft.rows.length; i++) {
    const prev = draft.rows[i - 1]!.exam_date;
    const curr = draft.rows[i]!.exam_date;
    if (
      !rowErrors[i - 1]?.exam_date &&
      !rowErrors[i]?.exam_date &&
      curr <= prev
    ) {
      draftErrors.push(`row ${i}: exam_date ${curr} not after previous ${prev}`);
    }
  }

  const valid =
    draftErrors.length === 0 && rowErrors.every((e) => Object.keys(e).length === 0);
  return { rowErrors, draftErrors, valid };
}

/** Convert a validated draft into the request payload shape. */
export function draftToOccasions(draft: TimelineDraft): OccasionIn[] {
  return draft.rows.map((row, index) => ({
    occasion_index: index,
    exam_date: row.exam_date.trim(),
    hb: Number(row.hb),
    mcv: Number(row.mcv),
    ferritin: row.ferritin.trim() === "" ? null : Number(row.ferritin),
    tsat: row.tsat.trim() === "" ? null : Number(row.tsat),
    esa_direction: row.esa_direction,
    esa_dose: Number(row.esa_dose),
    is_direction: row.is_direction,
    is_active_weeks: Number(row.is_active_weeks),
  }));
}
