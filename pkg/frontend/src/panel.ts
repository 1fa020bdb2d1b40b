/** Probability panel: horizontal bars for each class plus the direction the
 * service chose at the active threshold. */

import type { EsaDirection, IsDirection, Recommendation } from "./types.js";

function bar(label: string, value: number, highlighted: boolean): HTMLElement {
  const row = document.createElement("div");
  row.className = "prob-row" + (highlighted ? " highlighted" : "");
  row.dataset.class = label;

  const name = document.createElement("span");
  name.className = "prob-label";
  name.textContent = label;

  const track = document.createElement("div");
  track.className = "prob-track";
  const fill = document.createElement("div");
  fill.className = "prob-fill";
  fill.style.width = `${(value * 100).toFixed(1)}%`;
  track.appendChild(fill);

  const pct = document.createElement("span");
  pct.className = "prob-value";
  pct.textContent = `${(value * 100).toFixed(1)}%`;

  row.append(name, track, pct);
  return row;
}

function medicationBlock(
  title: string,
  probs: { label: string; value: number }[],
  direction: EsaDirection | IsDirection,
  kind: "esa" | "is",
): HTMLElement {
  const block = document.createElement("section");
  block.className = "medication-block";
  block.dataset.medication = kind;

  const heading = document.createElement("h3");
  heading.textContent = title;
  block.appendChild(heading);

  for (const p of probs) block.appendChild(bar(p.label, p.value, p.label === direction));

  const decision = document.createElement("p");
  decision.className = "decision";
  decision.dataset.direction = direction;
  decision.textContent = `Recommendation: ${direction}`;
  block.appendChild(decision);

  return block;
}

export function renderProbabilityPanel(
  container: HTMLElement,
  rec: Recommendation,
  esaDirection: EsaDirection,
  isDirection: IsDirection,
): void {
  container.textContent = "";
  container.appendChild(
    medicationBlock(
      "ESA dose",
      [
        { label: "UP", value: rec.esa.p_up },
        { label: "STAY", value: rec.esa.p_stay },
        { label: "DOWN", value: rec.esa.p_down },
      ],
      esaDirection,
      "esa",
    ),
  );
  container.appendChild(
    medicationBlock(
      "Iron supplement",
      [
        { label: "UP", value: rec.is.p_up },
        { label: "STAY", value: rec.is.p_stay },
      ],
      isDirection,
      "is",
    ),
  );
}
