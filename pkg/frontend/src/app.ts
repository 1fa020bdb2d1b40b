/** Dashboard wiring: timeline editor, submit, probability panel, threshold
 * slider. All directions displayed come from service responses. */

import { ApiClient, ServiceError } from "./api.js";
import { renderTimelineChart } from "./chart.js";
import { renderProbabilityPanel } from "./panel.js";
import { countFlips, rowAt, sweepGrid } from "./slider.js";
import type { DraftRow, TimelineDraft } from "./validation.js";
import { draftToOccasions, validateDraft } from "./validation.js";
import type { ModelInfo, Recommendation, SweepRow } from "./types.js";

const NUMERIC_FIELDS: (keyof DraftRow)[] = [
  "exam_date",
  "hb",
  "mcv",
  "ferritin",
  "tsat",
  "esa_dose",
  "is_active_weeks",
];

/** Stable mid-band demo timeline: Hb pinned at 11.0 g/dl, weekly visits,
 * full iron panel every fourth occasion. */
export function demoDraft(): TimelineDraft {
  const start = new Date("2024-01-04T00:00:00Z");
  const rows: DraftRow[] = [];
  for (let t = 0; t < 8; t++) {
    const date = new Date(start.getTime() + t * 7 * 86_400_000);
    rows.push({
      exam_date: date.toISOString().slice(0, 10),
      hb: "11.0",
      mcv: "92.0",
      ferritin: t % 4 === 0 ? "150.0" : "",
      tsat: t % 4 === 0 ? "30.0" : "",
      esa_direction: "STAY",
      esa_dose: "30.0",
      is_direction: "STAY",
      is_active_weeks: "0",
    });
  }
  return { patient_id: "DEMO", rows };
}

export class Dashboard {
  draft: TimelineDraft;
  recommendation: Recommendation | null = null;
  sweep: SweepRow[] | null = null;
  modelInfo: ModelInfo | null = null;
  threshold = 0.5;

  private readonly els: {
    patientId: HTMLInputElement;
    tableBody: HTMLTableSectionElement;
    addRow: HTMLButtonElement;
    submit: HTMLButtonElement;
    errorBanner: HTMLElement;
    retryBanner: HTMLElement;
    chart: HTMLElement;
    probabilities: HTMLElement;
    slider: HTMLInputElement;
    thresholdValue: HTMLElement;
    modelVersion: HTMLElement;
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient = new ApiClient(),
    draft: TimelineDraft = demoDraft(),
  ) {
    this.draft = draft;
    root.innerHTML = `
      <header>
        <h1>Anemia control dashboard</h1>
        <p id="model-version" class="model-version"></p>
      </header>
      <div id="retry-banner" class="banner hidden" role="alert"></div>
      <div id="error-banner" class="banner hidden" role="alert"></div>
      <section class="editor">
        <label>Patient ID <input id="patient-id" type="text"></label>
        <table id="timeline-table">
          <thead>
            <tr>
              <th>#</th><th>Date</th><th>Hb (g/dl)</th><th>MCV</th>
              <th>Ferritin</th><th>TSAT</th><th>ESA dir</th><th>ESA dose</th>
              <th>Iron dir</th><th>Iron weeks</th>
            </tr>
          </thead>
          <tbody></tbody>
        </table>
        <button id="add-row" type="button">Add occasion</button>
        <button id="submit" type="button">Get recommendation</button>
      </section>
      <section id="chart" class="chart"></section>
      <section id="probabilities" class="probabilities"></section>
      <section class="threshold">
        <label>Decision threshold
          <input id="threshold-slider" type="range" min="0" max="1" step="0.005" disabled>
        </label>
        <span id="threshold-value"></span>
      </section>
    `;
    this.els = {
      patientId: root.querySelector("#patient-id")!,
      tableBody: root.querySelector("#timeline-table tbody")!,
      addRow: root.querySelector("#add-row")!,
      submit: root.querySelector("#submit")!,
      errorBanner: root.querySelector("#error-banner")!,
      retryBanner: root.querySelector("#retry-banner")!,
      chart: root.querySelector("#chart")!,
      probabilities: root.querySelector("#probabilities")!,
      slider: root.querySelector("#threshold-slider")!,
      thresholdValue: root.querySelector("#threshold-value")!,
      modelVersion: root.querySelector("#model-version")!,
    };

    this.els.patientId.value = this.draft.patient_id;
    this.els.patientId.addEventListener("input", () => {
      this.draft.patient_id = this.els.patientId.value;
      this.refresh();
    });
    this.els.addRow.addEventListener("click", () => this.addRow());
    this.els.submit.addEventListener("click", () => void this.submit());
    this.els.slider.addEventListener("input", () => {
      this.threshold = Number(this.els.slider.value);
      this.renderThreshold();
    });

    this.renderTable();
    this.refresh();
  }

  /** Pull the default threshold and model versions from the service. */
  async init(): Promise<void> {
    try {
      this.modelInfo = await this.api.modelInfo();
      this.threshold = this.modelInfo.thresholds.esa;
      this.els.slider.value = String(this.threshold);
      this.els.modelVersion.textContent =
        `ESA model ${this.modelInfo.esa_model_version} · ` +
        `IS model ${this.modelInfo.is_model_version} · ` +
        `default threshold ${this.modelInfo.thresholds.esa}`;
    } catch (error) {
      this.showRetry(error, "Could not load model info.");
    }
  }

  addRow(): void {
    const last = this.draft.rows[this.draft.rows.length - 1];
    this.draft.rows.push(
      last
        ? { ...last, ferritin: "", tsat: "" }
        : {
            exam_date: "",
            hb: "",
            mcv: "",
            ferritin: "",
            tsat: "",
            esa_direction: "STAY",
            esa_dose: "0",
            is_direction: "STAY",
            is_active_weeks: "0",
          },
    );
    this.renderTable();
    this.refresh();
  }

  private renderTable(): void {
    this.els.tableBody.textContent = "";
    this.draft.rows.forEach((row, index) => {
      const tr = document.createElement("tr");
      tr.dataset.row = String(index);

      const idx = document.createElement("td");
      idx.textContent = String(index);
      tr.appendChild(idx);

      for (const field of NUMERIC_FIELDS.slice(0, 6)) {
        tr.appendChild(this.cell(row, index, field));
      }
      tr.appendChild(this.directionCell(row, index, "esa_direction", ["UP", "STAY", "DOWN"]));
      tr.appendChild(this.cell(row, index, "esa_dose"));
      tr.appendChild(this.directionCell(row, index, "is_direction", ["UP", "STAY"]));
      tr.appendChild(this.cell(row, index, "is_active_weeks"));
      this.els.tableBody.appendChild(tr);
    });
  }

  private cell(row: DraftRow, index: number, field: keyof DraftRow): HTMLTableCellElement {
    const td = document.createElement("td");
    const input = document.createElement("input");
    input.type = "text";
    input.value = row[field];
    input.dataset.field = field;
    input.dataset.row = String(index);
    input.addEventListener("input", () => {
      (this.draft.rows[index]![field] as string) = input.value;
      this.refresh();
    });
    td.appendChild(input);
    return td;
  }

  private directionCell(
    row: DraftRow,
    index: number,
    field: "esa_direction" | "is_direction",
    options: string[],
  ): HTMLTableCellElement {
    const td = document.createElement("td");
    const select = document.createElement("select");
    select.dataset.field = field;
    select.dataset.row = String(index);
    for (const option of options) {
      const node = document.createElement("option");
      node.value = option;
      node.textContent = option;
      node.selected = option === row[field];
      select.appendChild(node);
    }
    select.addEventListener("change", () => {
      (this.draft.rows[index]![field] as string) = select.value;
      this.refresh();
    });
    td.appendChild(select);
    return td;
  }

  /** Re-validate, update cell markings, submit state, and the chart. */
  refresh(): void {
    const validation = validateDraft(this.draft);
    this.els.submit.disabled = !validation.valid;

    this.els.tableBody.querySelectorAll("input").forEach((input) => {
      const index = Number(input.dataset.row);
      const field = input.dataset.field as keyof DraftRow;
      const message = validation.rowErrors[index]?.[field];
      input.classList.toggle("invalid", message !== undefined);
      input.title = message ?? "";
    });

    if (validation.draftErrors.length > 0) {
      this.els.errorBanner.textContent = validation.draftErrors.join("; ");
      this.els.errorBanner.classList.remove("hidden");
    } else {
      this.els.errorBanner.classList.add("hidden");
    }

    const points = this.draft.rows
      .map((row, i) => ({
        occasion_index: i,
        hb: Number(row.hb),
        esa_direction: row.esa_direction,
      }))
      .filter((p) => Number.isFinite(p.hb) && p.hb > 0 && p.hb < 25);
    renderTimelineChart(this.els.chart, points);
  }

  async submit(): Promise<void> {
    const validation = validateDraft(this.draft);
    if (!validation.valid) return; // mirrored guard; button is disabled anyway
    this.els.retryBanner.classList.add("hidden");
    try {
      const rec = await this.api.recommend({
        timeline: {
          patient_id: this.draft.patient_id.trim(),
          occasions: draftToOccasions(this.draft),
        },
      });
      this.recommendation = rec;
      this.threshold = rec.esa.threshold;
      const sweep = await this.api.whatIf({
        p_up: rec.esa.p_up,
        p_stay: rec.esa.p_stay,
        p_down: rec.esa.p_down,
        is_p_up: rec.is.p_up,
        is_p_stay: rec.is.p_stay,
        sweep: sweepGrid(),
      });
      this.sweep = sweep.sweep;
      this.els.slider.disabled = false;
      this.els.slider.value = String(this.threshold);
      this.renderThreshold();
    } catch (error) {
      if (error instanceof DOMException && error.name === "AbortError") return;
      if (error instanceof ServiceError && error.status < 500) {
        this.els.errorBanner.textContent = `${error.body.category}: ${error.body.message}`;
        this.els.errorBanner.classList.remove("hidden");
      } else {
        this.showRetry(error, "Service unavailable — recommendation not updated.");
      }
    }
  }

  /** Directions shown at the current slider position, from the cached sweep. */
  renderThreshold(): void {
    if (!this.recommendation || !this.sweep) return;
    const row = rowAt(this.sweep, this.threshold);
    this.els.thresholdValue.textContent = `t = ${this.threshold.toFixed(3)}`;
    renderProbabilityPanel(
      this.els.probabilities,
      this.recommendation,
      row.esa_direction,
      row.is_direction,
    );
  }

  /** Sanity number for diagnostics: flips per medication across the sweep. */
  sweepFlipCounts(): { esa: number; is: number } | null {
    if (!this.sweep) return null;
    return {
      esa: countFlips(this.sweep, "esa_direction"),
      is: countFlips(this.sweep, "is_direction"),
    };
  }

  private showRetry(error: unknown, message: string): void {
    const detail = error instanceof Error ? ` (${error.message})` : "";
    this.els.retryBanner.textContent = `${message}${detail} Retry when the service is back.`;
    this.els.retryBanner.classList.remove("hidden");
  }
}
